//! Encoder and decoder graphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::EncoderConfig;
use super::inputs::ModelInputs;
use crate::numeric::{AttentionLayout, Graph, NodeId, NumericError, ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

/// Node handles for one encoder pass.
#[derive(Clone, Copy, Debug)]
pub struct EncodedNodes {
    /// `[N_Z × D_R]` collapsed polylines with masked rows zeroed.
    pub y_r: NodeId,
    /// `[N_Z × D]` projected frames.
    pub f_proj: NodeId,
    /// `[(N_T+N_S)·T × D]` projected time-variant input with positional encodings.
    pub y_v: NodeId,
    /// `[N_Z × D]`
    pub z_r: NodeId,
    /// `[(N_T+N_S)·T × D]`, object-major; rows `0..T` are ego.
    pub z_v: NodeId,
}

/// Node handles for one decoder pass, all in normalized units.
#[derive(Clone, Copy, Debug)]
pub struct DecodedNodes {
    /// `[N_T·T × D_T]`: continuous channels, class logits, existence logit.
    pub tracks: NodeId,
    /// `[N_S·T × D_S]`: continuous channels, label logits.
    pub signals: NodeId,
    /// `[N_Z × D_L]` label logits.
    pub labels: NodeId,
    /// `[N_Z·S_Z × D_P]`: continuous channels, existence logit.
    pub points: NodeId,
}

/// Sinusoidal encoding of one position over `d` channels.
pub fn sinusoid(pos: usize, d: usize) -> Vec<f32> {
    (0..d)
        .map(|i| {
            let freq = 10000f64.powf(-((i / 2 * 2) as f64) / d as f64);
            let a = pos as f64 * freq;
            (if i % 2 == 0 { a.sin() } else { a.cos() }) as f32
        })
        .collect()
}

/// The masked autoencoder. Parameters live in a separate [`ParamStore`] so
/// the same model can be evaluated in `f32` and `f64`.
#[derive(Clone, Debug)]
pub struct Mae {
    config: EncoderConfig,
    positional: Vec<f32>,
}

impl Mae {
    pub fn new(config: EncoderConfig) -> Result<Self, String> {
        config.check()?;
        let d = config.dims;
        let objects = d.max_tracks + d.signals;
        let mut positional = vec![0.0f32; objects * d.timesteps * d.hidden];
        for o in 0..objects {
            let po = sinusoid(o, d.hidden);
            for t in 0..d.timesteps {
                let pt = sinusoid(t, d.hidden);
                let row = &mut positional[(o * d.timesteps + t) * d.hidden..][..d.hidden];
                for c in 0..d.hidden {
                    row[c] = if config.object_encoding { po[c] } else { 0.0 }
                        + if config.time_encoding { pt[c] } else { 0.0 };
                }
            }
        }
        Ok(Self { config, positional })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// `[(N_T+N_S)·T × D]` table added to the projected time-variant input.
    pub fn positional(&self) -> &[f32] {
        &self.positional
    }

    fn param_specs(&self) -> Vec<(String, Vec<usize>, Init)> {
        let c = &self.config;
        let d = c.dims;
        let h = c.hidden();
        let mut specs = Vec::new();
        let mut linear = |name: &str, i: usize, o: usize| {
            specs.push((format!("{name}.w"), vec![i, o], Init::Xavier { fan_in: i, fan_out: o }));
            specs.push((format!("{name}.b"), vec![o], Init::Zeros));
        };
        let mut width = d.point_width;
        for (k, &w) in c.pointnet_widths.iter().enumerate() {
            linear(&format!("enc.pointnet.{k}"), width, w);
            width = w;
        }
        linear("enc.proj.road", c.road_feature_width(), h);
        linear("enc.proj.frame", d.frame_width, h);
        linear("enc.proj.track", d.track_width, h);
        linear("enc.proj.signal", d.signal_width, h);
        let ffn = h * c.ffn_multiplier;
        let mut blocks = Vec::new();
        for l in 0..c.road_layers {
            blocks.push((format!("enc.road.{l}"), vec!["attn"]));
        }
        for l in 0..c.factorized_layers {
            blocks.push((format!("enc.tv.{l}"), vec!["time", "obj", "cross"]));
        }
        for (prefix, attns) in &blocks {
            for a in attns {
                for p in ["q", "k", "v", "o"] {
                    linear(&format!("{prefix}.{a}.{p}"), h, h);
                }
            }
            linear(&format!("{prefix}.ffn.0"), h, ffn);
            linear(&format!("{prefix}.ffn.1"), ffn, h);
        }
        linear("dec.track", h, d.track_width);
        linear("dec.signal", h, d.signal_width);
        linear("dec.road", h, d.label_classes + d.points_per_polyline * d.point_width);
        for (prefix, attns) in &blocks {
            for a in attns.iter().chain(&["ffn"]) {
                specs.push((format!("{prefix}.{a}.ln.g"), vec![h], Init::Ones));
                specs.push((format!("{prefix}.{a}.ln.b"), vec![h], Init::Zeros));
            }
        }
        for s in ["enc.road.ln", "enc.tv.ln"] {
            specs.push((format!("{s}.g"), vec![h], Init::Ones));
            specs.push((format!("{s}.b"), vec![h], Init::Zeros));
        }
        // softmax is shift invariant per query, so a key bias never receives gradient
        specs.retain(|(n, _, _)| !n.ends_with(".k.b"));
        specs
    }

    /// Xavier-uniform weights, zero biases, unit layer-norm gains.
    pub fn init_params(&self, seed: u64) -> ParamStore<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape, init) in self.param_specs() {
            let n = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Xavier { fan_in, fan_out } => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-a..a) as f32).collect()
                }
            };
            store
                .insert(name, Tensor::new(&shape, data).expect("spec shape"))
                .expect("unique names");
        }
        store
    }

    /// Fails when `params` lacks a tensor the config requires or has it in
    /// another shape.
    pub fn check_params<R: Real>(&self, params: &ParamStore<R>) -> Result<(), NumericError> {
        for (name, shape, _) in self.param_specs() {
            let t = params.get(&name).ok_or_else(|| NumericError::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(NumericError::ShapeMismatch {
                    op: "parameter",
                    left: shape,
                    right: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Per-point MLP followed by a max over the points of each polyline.
    /// `points` is `[n·S_Z × D_P]`; the result is `[n × widths.last]`.
    pub fn pointnet_collapse<R: Real>(
        &self,
        g: &mut Graph<R>,
        params: &ParamStore<R>,
        points: NodeId,
    ) -> Result<NodeId, NumericError> {
        let widths = &self.config.pointnet_widths;
        let mut x = points;
        for k in 0..widths.len() {
            x = linear(g, params, &format!("enc.pointnet.{k}"), x)?;
            if k + 1 < widths.len() {
                x = g.gelu(x);
            }
        }
        let rows = g.value(x).shape()[0];
        let s = self.config.dims.points_per_polyline;
        let last = *widths.last().expect("checked non-empty");
        let x = g.reshape(x, &[rows / s, s, last])?;
        g.max_pool(x, 1)
    }

    pub fn encode<R: Real>(
        &self,
        g: &mut Graph<R>,
        params: &ParamStore<R>,
        inputs: &ModelInputs,
    ) -> Result<EncodedNodes, NumericError> {
        let c = &self.config;
        let d = c.dims;
        if inputs.dims != d {
            return Err(NumericError::InvalidArgument(format!(
                "inputs have dims {:?}, model expects {:?}",
                inputs.dims, d
            )));
        }
        let h = c.hidden();
        let leaf = |g: &mut Graph<R>, shape: &[usize], data: &[f32]| {
            g.input(Tensor::new(shape, data.iter().map(|&v| R::of(v as f64)).collect()).expect("input shape"))
        };

        // road stream
        let pts = leaf(g, &[d.polylines * d.points_per_polyline, d.point_width], &inputs.points);
        let collapsed = self.pointnet_collapse(g, params, pts)?;
        let labels = leaf(g, &[d.polylines, d.label_classes], &inputs.labels);
        let mut y_r = g.concat(&[collapsed, labels], 1)?;
        if inputs.masked_polylines.iter().any(|&m| m) {
            let w = c.road_feature_width();
            let keep: Vec<R> = inputs
                .masked_polylines
                .iter()
                .flat_map(|&m| std::iter::repeat_n(if m { R::zero() } else { R::one() }, w))
                .collect();
            y_r = g.mul_const(y_r, Tensor::new(&[d.polylines, w], keep)?)?;
        }
        let road_proj = linear(g, params, "enc.proj.road", y_r)?;
        let frames = leaf(g, &[d.polylines, d.frame_width], &inputs.frames);
        let f_proj = linear(g, params, "enc.proj.frame", frames)?;
        let mut x = g.add(road_proj, f_proj)?;
        for l in 0..c.road_layers {
            let p = format!("enc.road.{l}");
            let layout = AttentionLayout::contiguous(c.heads, 1, d.polylines);
            x = self.attention_block(g, params, &format!("{p}.attn"), x, None, layout)?;
            x = ffn_block(g, params, &p, x)?;
        }
        let z_r = layer_norm(g, params, "enc.road.ln", x)?;

        // time-variant stream
        let tr = leaf(g, &[d.max_tracks * d.timesteps, d.track_width], &inputs.tracks);
        let tr = linear(g, params, "enc.proj.track", tr)?;
        let sg = leaf(g, &[d.signals * d.timesteps, d.signal_width], &inputs.signals);
        let sg = linear(g, params, "enc.proj.signal", sg)?;
        let y = g.concat(&[tr, sg], 0)?;
        let objects = d.max_tracks + d.signals;
        let rows = objects * d.timesteps;
        let pe = Tensor::new(&[rows, h], self.positional.iter().map(|&v| R::of(v as f64)).collect())?;
        let y_v = g.add_const(y, &pe)?;
        let mut x = y_v;
        let time = AttentionLayout::contiguous(c.heads, objects, d.timesteps);
        let obj = AttentionLayout {
            heads: c.heads,
            groups: d.timesteps,
            q_len: objects,
            q_group_stride: 1,
            q_seq_stride: d.timesteps,
            k_len: objects,
            k_group_stride: 1,
            k_seq_stride: d.timesteps,
        };
        let cross = AttentionLayout {
            heads: c.heads,
            groups: 1,
            q_len: rows,
            q_group_stride: 0,
            q_seq_stride: 1,
            k_len: d.polylines,
            k_group_stride: 0,
            k_seq_stride: 1,
        };
        for l in 0..c.factorized_layers {
            let p = format!("enc.tv.{l}");
            x = self.attention_block(g, params, &format!("{p}.time"), x, None, time)?;
            x = self.attention_block(g, params, &format!("{p}.obj"), x, None, obj)?;
            x = self.attention_block(g, params, &format!("{p}.cross"), x, Some(z_r), cross)?;
            x = ffn_block(g, params, &p, x)?;
        }
        let z_v = layer_norm(g, params, "enc.tv.ln", x)?;
        Ok(EncodedNodes {
            y_r,
            f_proj,
            y_v,
            z_r,
            z_v,
        })
    }

    /// Pre-norm residual attention. `memory` switches to cross-attention
    /// with keys and values taken from it unnormalized.
    fn attention_block<R: Real>(
        &self,
        g: &mut Graph<R>,
        params: &ParamStore<R>,
        prefix: &str,
        x: NodeId,
        memory: Option<NodeId>,
        layout: AttentionLayout,
    ) -> Result<NodeId, NumericError> {
        let xn = layer_norm(g, params, &format!("{prefix}.ln"), x)?;
        let kv = memory.unwrap_or(xn);
        let q = linear(g, params, &format!("{prefix}.q"), xn)?;
        let wk = g.param(params, &format!("{prefix}.k.w"))?;
        let k = g.matmul(kv, wk)?;
        let v = linear(g, params, &format!("{prefix}.v"), kv)?;
        let a = g.attention(q, k, v, layout, None)?;
        let o = linear(g, params, &format!("{prefix}.o"), a)?;
        g.add(x, o)
    }

    pub fn decode<R: Real>(
        &self,
        g: &mut Graph<R>,
        params: &ParamStore<R>,
        enc: &EncodedNodes,
    ) -> Result<DecodedNodes, NumericError> {
        let d = self.config.dims;
        let track_rows = d.max_tracks * d.timesteps;
        let zt = g.rows(enc.z_v, 0, track_rows)?;
        let zs = g.rows(enc.z_v, track_rows, d.signals * d.timesteps)?;
        let tracks = linear(g, params, "dec.track", zt)?;
        let signals = linear(g, params, "dec.signal", zs)?;
        let road = linear(g, params, "dec.road", enc.z_r)?;
        let labels = g.cols(road, 0, d.label_classes)?;
        let pts = g.cols(road, d.label_classes, d.points_per_polyline * d.point_width)?;
        let points = g.reshape(pts, &[d.polylines * d.points_per_polyline, d.point_width])?;
        Ok(DecodedNodes {
            tracks,
            signals,
            labels,
            points,
        })
    }
}

fn linear<R: Real>(g: &mut Graph<R>, params: &ParamStore<R>, name: &str, x: NodeId) -> Result<NodeId, NumericError> {
    let w = g.param(params, &format!("{name}.w"))?;
    let b = g.param(params, &format!("{name}.b"))?;
    g.affine(x, w, b)
}

fn layer_norm<R: Real>(g: &mut Graph<R>, params: &ParamStore<R>, name: &str, x: NodeId) -> Result<NodeId, NumericError> {
    let gamma = g.param(params, &format!("{name}.g"))?;
    let beta = g.param(params, &format!("{name}.b"))?;
    g.layer_norm(x, gamma, beta)
}

fn ffn_block<R: Real>(g: &mut Graph<R>, params: &ParamStore<R>, prefix: &str, x: NodeId) -> Result<NodeId, NumericError> {
    let xn = layer_norm(g, params, &format!("{prefix}.ffn.ln"), x)?;
    let hdn = linear(g, params, &format!("{prefix}.ffn.0"), xn)?;
    let hdn = g.gelu(hdn);
    let o = linear(g, params, &format!("{prefix}.ffn.1"), hdn)?;
    g.add(x, o)
}
