//! Difficulty scoring: labels from simulation outcomes, pooled backbone
//! features, and a small classification head trained on frozen features.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mae::{Embeddings, Mae};
use crate::numeric::{
    read_checkpoint, sigmoid, write_checkpoint, Adam, AdamConfig, Checkpoint, Graph, NumericError, ParamStore, Tensor,
};
use crate::scene::{Scenario, ScenarioDims};
use crate::synth::OutcomeRecord;
use crate::binfmt::FormatError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub label: u8,
    /// Which policy parameterization ("software version") produced the label.
    pub version: String,
}

#[derive(Debug, thiserror::Error)]
pub enum DifficultyError {
    #[error("no outcome for scenario {id} under version {version}")]
    MissingOutcome { id: String, version: String },
    #[error("labeled data has no examples with label {0}")]
    EmptyClass(u8),
    #[error("feature width {found} does not match head input {expected}")]
    Width { expected: usize, found: usize },
    #[error("invalid fine-tuning config: {0}")]
    Config(String),
    #[error("head checkpoint config: {0}")]
    HeadConfig(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// One example per (scenario, version). Every scenario in `ids` must have an
/// outcome in every run.
pub fn build_labels(
    ids: &[String],
    runs: &[(String, Vec<OutcomeRecord>)],
) -> Result<Vec<LabeledExample>, DifficultyError> {
    let mut out = Vec::with_capacity(ids.len() * runs.len());
    for (version, outcomes) in runs {
        let by_id: HashMap<&str, u8> = outcomes.iter().map(|r| (r.id.as_str(), r.outcome.label)).collect();
        for id in ids {
            let label = *by_id.get(id.as_str()).ok_or_else(|| DifficultyError::MissingOutcome {
                id: id.clone(),
                version: version.clone(),
            })?;
            out.push(LabeledExample {
                id: id.clone(),
                label,
                version: version.clone(),
            });
        }
    }
    Ok(out)
}

fn mean_rows(data: &[f32], d: usize, rows: impl Iterator<Item = usize>, out: &mut Vec<f32>) {
    let mut acc = vec![0.0f64; d];
    let mut n = 0usize;
    for r in rows {
        for (a, &v) in acc.iter_mut().zip(&data[r * d..(r + 1) * d]) {
            *a += v as f64;
        }
        n += 1;
    }
    out.extend(acc.iter().map(|&a| if n == 0 { 0.0 } else { (a / n as f64) as f32 }));
}

/// Ego mean over time, existing-track mean over (N_T, T), signal mean over
/// (N_S, T), road mean over N_Z, concatenated. `exists[n·T + t]` marks track
/// rows present in the scenario.
pub fn pool_concat(e: &Embeddings, dims: &ScenarioDims, exists: &[bool]) -> Vec<f32> {
    let (d, t) = (dims.hidden, dims.timesteps);
    let zv = e.z_v.data();
    let mut out = Vec::with_capacity(4 * d);
    mean_rows(zv, d, 0..t, &mut out);
    mean_rows(zv, d, (0..dims.max_tracks * t).filter(|&r| exists[r]), &mut out);
    let s0 = dims.max_tracks * t;
    mean_rows(zv, d, s0..s0 + dims.signals * t, &mut out);
    mean_rows(e.z_r.data(), d, 0..dims.polylines, &mut out);
    out
}

pub fn track_existence(s: &Scenario) -> Vec<bool> {
    let dims = s.dims;
    (0..dims.max_tracks)
        .flat_map(|n| (0..dims.timesteps).map(move |t| (n, t)))
        .map(|(n, t)| s.track_exists(n, t))
        .collect()
}

/// Pooled features of one unmasked backbone pass.
pub fn features(mae: &Mae, backbone: &ParamStore<f32>, s: &Scenario) -> Result<Vec<f32>, NumericError> {
    let e = mae.embed(backbone, s)?;
    Ok(pool_concat(&e, &s.dims, &track_existence(s)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub input: usize,
    pub hidden: usize,
}

impl HeadConfig {
    pub fn for_hidden(d: usize) -> Self {
        Self { input: 4 * d, hidden: 64 }
    }
}

/// Two-layer MLP from pooled features to one logit.
#[derive(Clone, Debug, PartialEq)]
pub struct DifficultyHead {
    pub config: HeadConfig,
    pub params: ParamStore<f32>,
}

impl DifficultyHead {
    pub fn init(config: HeadConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xavier = |fi: usize, fo: usize| {
            let a = (6.0 / (fi + fo) as f64).sqrt();
            Tensor::new(&[fi, fo], (0..fi * fo).map(|_| rng.random_range(-a..a) as f32).collect()).expect("shape")
        };
        let (i, h) = (config.input, config.hidden);
        let mut params = ParamStore::new();
        params.insert("head.0.w", xavier(i, h)).expect("fresh store");
        params.insert("head.0.b", Tensor::zeros(&[h])).expect("fresh store");
        params.insert("head.1.w", xavier(h, 1)).expect("fresh store");
        params.insert("head.1.b", Tensor::zeros(&[1])).expect("fresh store");
        Self { config, params }
    }

    /// Logits for `x: [n × input]`.
    fn logits_node(&self, g: &mut Graph<f32>, x: Tensor<f32>) -> Result<crate::numeric::NodeId, NumericError> {
        let x = g.input(x);
        let (w0, b0) = (g.param(&self.params, "head.0.w")?, g.param(&self.params, "head.0.b")?);
        let (w1, b1) = (g.param(&self.params, "head.1.w")?, g.param(&self.params, "head.1.b")?);
        let h = g.affine(x, w0, b0)?;
        let h = g.gelu(h);
        g.affine(h, w1, b1)
    }

    pub fn logit(&self, feature: &[f32]) -> Result<f32, DifficultyError> {
        if feature.len() != self.config.input {
            return Err(DifficultyError::Width {
                expected: self.config.input,
                found: feature.len(),
            });
        }
        let mut g = Graph::new();
        let l = self.logits_node(&mut g, Tensor::new(&[1, feature.len()], feature.to_vec())?)?;
        Ok(g.value(l).item())
    }

    /// Collision probability, `sigmoid(logit)`.
    pub fn score_feature(&self, feature: &[f32]) -> Result<f64, DifficultyError> {
        Ok(sigmoid(self.logit(feature)? as f64))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DifficultyError> {
        let config = serde_json::to_string(&self.config).map_err(|e| DifficultyError::HeadConfig(e.to_string()))?;
        write_checkpoint(
            path,
            &Checkpoint {
                config,
                params: self.params.clone(),
            },
        )?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DifficultyError> {
        let ck = read_checkpoint(path)?;
        let config: HeadConfig =
            serde_json::from_str(&ck.config).map_err(|e| DifficultyError::HeadConfig(e.to_string()))?;
        let expect = Self::init(config, 0);
        for (name, t) in expect.params.iter() {
            let got = ck.params.get(name).ok_or_else(|| NumericError::MissingParam(name.into()))?;
            if got.shape() != t.shape() {
                return Err(NumericError::ShapeMismatch {
                    op: "head parameter",
                    left: t.shape().to_vec(),
                    right: got.shape().to_vec(),
                }
                .into());
            }
        }
        Ok(Self {
            config,
            params: ck.params,
        })
    }
}

/// `d ∈ (0, 1)` for one scenario; no masking.
pub fn score(mae: &Mae, backbone: &ParamStore<f32>, head: &DifficultyHead, s: &Scenario) -> Result<f64, DifficultyError> {
    head.score_feature(&features(mae, backbone, s)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub hidden: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            steps: 3000,
            seed: 0,
            hidden: 64,
        }
    }
}

/// Trains a fresh head with uniform-weight BCE on precomputed frozen
/// features. The backbone is never touched; callers hash it to confirm.
pub fn finetune(
    features: &[Vec<f32>],
    labels: &[u8],
    cfg: &FinetuneConfig,
) -> Result<(DifficultyHead, Vec<f64>), DifficultyError> {
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(DifficultyError::Config(format!(
            "batch size {} and lr {} must be positive",
            cfg.batch_size, cfg.lr
        )));
    }
    for class in [0u8, 1] {
        if !labels.contains(&class) {
            return Err(DifficultyError::EmptyClass(class));
        }
    }
    let width = features.first().map_or(0, Vec::len);
    let mut head = DifficultyHead::init(
        HeadConfig {
            input: width,
            hidden: cfg.hidden,
        },
        cfg.seed,
    );
    if let Some(f) = features.iter().find(|f| f.len() != width) {
        return Err(DifficultyError::Width {
            expected: width,
            found: f.len(),
        });
    }
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut trace = Vec::with_capacity(cfg.steps);
    let b = cfg.batch_size.min(features.len());
    for _ in 0..cfg.steps {
        let mut x = Vec::with_capacity(b * width);
        let mut y = Vec::with_capacity(b);
        for _ in 0..b {
            if cursor == order.len() {
                order = (0..features.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            x.extend_from_slice(&features[i]);
            y.push(labels[i] as f32);
        }
        let mut g = Graph::new();
        let logits = head.logits_node(&mut g, Tensor::new(&[b, width], x)?)?;
        let loss = g.bce_with_logits(logits, y, vec![1.0 / b as f32; b])?;
        trace.push(g.value(loss).item() as f64);
        let grads = g.backward(loss)?.for_params(head.params.len());
        adam.step(&mut head.params, &grads);
    }
    Ok((head, trace))
}

/// Area under the ROC curve with midranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += (i..=j).filter(|&k| labels[idx[k]] == 1).count() as f64 * mid;
        i = j + 1;
    }
    Some((rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64)
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    id: &'a str,
    d: f64,
}

pub fn write_scores_csv<W: Write>(out: W, ids: &[String], scores: &[f64]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (id, &d) in ids.iter().zip(scores) {
        w.serialize(ScoreRow { id, d })?;
    }
    w.flush()?;
    Ok(())
}
