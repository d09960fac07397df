mod common;

use std::time::Instant;

use dice::mae::*;
use dice::numeric::*;
use dice::scene::{point, track, Scenario, ScenarioDims};
use dice::synth::{generate_scenario, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> (Mae, ParamStore<f32>) {
    let mae = Mae::new(EncoderConfig::for_dims(ScenarioDims::tiny())).unwrap();
    let p = mae.init_params(3);
    (mae, p)
}

fn gelu_tanh(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Per-point MLP and max, with loops over plain slices.
fn pointnet_reference(p: &ParamStore<f32>, widths: &[usize], pts: &[[f64; 4]]) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = pts.iter().map(|r| r.to_vec()).collect();
    for (k, &w) in widths.iter().enumerate() {
        let wt = p.get(&format!("enc.pointnet.{k}.w")).unwrap();
        let b = p.get(&format!("enc.pointnet.{k}.b")).unwrap();
        let inw = rows[0].len();
        rows = rows
            .iter()
            .map(|x| {
                (0..w)
                    .map(|o| {
                        let mut s = b.data()[o] as f64;
                        for i in 0..inw {
                            s += x[i] * wt.data()[i * w + o] as f64;
                        }
                        if k + 1 < widths.len() {
                            gelu_tanh(s)
                        } else {
                            s
                        }
                    })
                    .collect()
            })
            .collect();
    }
    let last = *widths.last().unwrap();
    (0..last).map(|c| rows.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max)).collect()
}

fn collapse(mae: &Mae, p: &ParamStore<f64>, pts: &[[f64; 4]]) -> Vec<f64> {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(&[pts.len(), 4], pts.iter().flatten().copied().collect()).unwrap());
    let y = mae.pointnet_collapse(&mut g, p, x).unwrap();
    g.value(y).data().to_vec()
}

fn polyline(seed: u64, s: usize) -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..s)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5), 0.7, 1.0])
        .collect()
}

#[test]
fn pointnet_matches_scalar_reference() {
    let (mae, p) = tiny();
    let p64 = p.cast::<f64>();
    let pts = polyline(1, 4);
    let got = collapse(&mae, &p64, &pts);
    let want = pointnet_reference(&p, &mae.config().pointnet_widths, &pts);
    assert_eq!(got.len(), want.len());
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-9, "{a} {b}");
    }
}

#[test]
fn pointnet_is_permutation_invariant_and_idempotent() {
    let (mae, p) = tiny();
    let p = p.cast::<f64>();
    let pts = polyline(2, 4);
    let base = collapse(&mae, &p, &pts);
    for perm in [[1, 0, 2, 3], [3, 2, 1, 0], [2, 3, 0, 1]] {
        let q: Vec<[f64; 4]> = perm.iter().map(|&i| pts[i]).collect();
        assert_eq!(collapse(&mae, &p, &q), base);
    }
    let same = vec![pts[0]; 4];
    let single = collapse(&mae, &p, &same);
    let one = pointnet_reference(&p.cast::<f32>(), &mae.config().pointnet_widths, &pts[..1]);
    for (a, b) in single.iter().zip(&one) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn mask_ratios_are_exact_at_the_ends() {
    let dims = ScenarioDims::compact();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(sample_masks(&dims, 0.0, &mut rng).masked_count(), 0);
    let all = sample_masks(&dims, 1.0, &mut rng);
    assert_eq!(all.masked_count(), all.total());
}

#[test]
fn mask_fraction_within_three_sigma() {
    let dims = ScenarioDims::default();
    for r in [0.25, 0.5, 0.75] {
        let mut rng = ChaCha8Rng::seed_from_u64((r * 100.0) as u64);
        let (mut n, mut hits) = (0usize, 0usize);
        while n < 100_000 {
            let m = sample_masks(&dims, r, &mut rng);
            n += m.total();
            hits += m.masked_count();
        }
        let sigma = (n as f64 * r * (1.0 - r)).sqrt();
        assert!((hits as f64 - n as f64 * r).abs() < 3.0 * sigma, "r = {r}");
    }
}

#[test]
fn apply_masks_contract() {
    let dims = ScenarioDims::compact();
    let s = generate_scenario(
        &WorldConfig {
            dims,
            ..WorldConfig::default()
        },
        3,
    );
    let inputs = ModelInputs::from_scenario(&s);
    assert_eq!(apply_masks(&inputs, &MaskSet::none(&dims)), inputs);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let m = sample_masks(&dims, 0.5, &mut rng);
        let out = apply_masks(&inputs, &m);
        assert_eq!(out.frames, inputs.frames);
        for (i, &masked) in m.tracks.iter().enumerate() {
            let w = dims.track_width;
            let (a, b) = (&out.tracks[i * w..(i + 1) * w], &inputs.tracks[i * w..(i + 1) * w]);
            if masked {
                assert!(a.iter().all(|&v| v == 0.0));
            } else {
                assert_eq!(a, b);
            }
        }
        for (i, &masked) in m.signals.iter().enumerate() {
            let w = dims.signal_width;
            let a = &out.signals[i * w..(i + 1) * w];
            assert_eq!(masked, a.iter().all(|&v| v == 0.0) && inputs.signals[i * w..(i + 1) * w].iter().any(|&v| v != 0.0));
        }
        let pw = dims.points_per_polyline * dims.point_width;
        for (z, &masked) in m.polylines.iter().enumerate() {
            let pts = &out.points[z * pw..(z + 1) * pw];
            let lab = &out.labels[z * dims.label_classes..(z + 1) * dims.label_classes];
            if masked {
                assert!(pts.iter().chain(lab).all(|&v| v == 0.0));
            } else {
                assert_eq!(pts, &inputs.points[z * pw..(z + 1) * pw]);
                assert_eq!(lab, &inputs.labels[z * dims.label_classes..(z + 1) * dims.label_classes]);
            }
            assert_eq!(out.masked_polylines[z], masked);
        }
    }
}

#[test]
fn masked_polyline_zeroes_its_road_row_but_not_its_frame() {
    let (mae, p) = tiny();
    let dims = mae.config().dims;
    let s = common::random_scenario(dims, 6);
    let mut m = MaskSet::none(&dims);
    m.polylines[1] = true;
    let clean = mae.embed(&p, &s).unwrap();
    let masked = mae.embed_inputs(&p, &apply_masks(&ModelInputs::from_scenario(&s), &m)).unwrap();
    let w = mae.config().road_feature_width();
    assert!(masked.y_r.data()[w..2 * w].iter().all(|&v| v == 0.0));
    assert!(clean.y_r.data()[w..2 * w].iter().any(|&v| v != 0.0));
    assert_eq!(masked.f_proj, clean.f_proj);
    assert_eq!(masked.y_r.data()[..w], clean.y_r.data()[..w]);
}

#[test]
fn embedding_shapes() {
    for dims in [ScenarioDims::tiny(), ScenarioDims::default()] {
        let mae = Mae::new(EncoderConfig::for_dims(dims)).unwrap();
        let p = mae.init_params(0);
        let e = mae.embed(&p, &Scenario::blank(dims, "b", 0.5)).unwrap();
        let h = dims.hidden;
        let rows = (dims.max_tracks + dims.signals) * dims.timesteps;
        assert_eq!(e.z_r.shape(), [dims.polylines, h]);
        assert_eq!(e.z_v.shape(), [rows, h]);
        assert_eq!(e.y_v.shape(), [rows, h]);
        assert_eq!(e.f_proj.shape(), [dims.polylines, h]);
        assert_eq!(e.y_r.shape(), [dims.polylines, mae.config().road_feature_width()]);
        assert!(e.z_v.is_finite() && e.z_r.is_finite());
    }
}

#[test]
fn zero_inputs_with_identity_projections_stay_finite() {
    let mut cfg = EncoderConfig::for_dims(ScenarioDims::tiny());
    cfg.object_encoding = false;
    cfg.time_encoding = false;
    let mae = Mae::new(cfg).unwrap();
    let mut p = mae.init_params(1);
    for name in ["enc.proj.track.w", "enc.proj.signal.w", "enc.proj.frame.w"] {
        let t = p.get_mut(name).unwrap();
        let (r, c) = t.matrix_dims();
        for i in 0..r {
            for j in 0..c {
                t.data_mut()[i * c + j] = if i == j { 1.0 } else { 0.0 };
            }
        }
    }
    let d = mae.config().dims;
    let mut zero = ModelInputs::from_scenario(&Scenario::blank(d, "z", 0.5));
    for v in [&mut zero.tracks, &mut zero.signals, &mut zero.frames, &mut zero.labels, &mut zero.points] {
        v.fill(0.0);
    }
    let e = mae.embed_inputs(&p, &zero).unwrap();
    assert!(e.z_v.is_finite() && e.z_r.is_finite());
}

#[test]
fn permuting_tracks_permutes_embeddings() {
    let mut cfg = EncoderConfig::for_dims(ScenarioDims::compact());
    cfg.object_encoding = false;
    let mae = Mae::new(cfg).unwrap();
    let p = mae.init_params(2);
    let d = mae.config().dims;
    let s = common::random_scenario(d, 11);
    let perm: Vec<usize> = vec![0, 3, 1, 2, 7, 5, 6, 4];
    let mut q = s.clone();
    for (new, &old) in perm.iter().enumerate() {
        for t in 0..d.timesteps {
            q.track_mut(new, t).copy_from_slice(s.track(old, t));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = sample_masks(&d, 0.3, &mut rng);
    let mut mq = m.clone();
    for (new, &old) in perm.iter().enumerate() {
        for t in 0..d.timesteps {
            mq.tracks[new * d.timesteps + t] = m.tracks[old * d.timesteps + t];
        }
    }
    let a = mae.embed_inputs(&p, &apply_masks(&ModelInputs::from_scenario(&s), &m)).unwrap();
    let b = mae.embed_inputs(&p, &apply_masks(&ModelInputs::from_scenario(&q), &mq)).unwrap();
    let row = |e: &Embeddings, n: usize, t: usize| e.z_v.data()[(n * d.timesteps + t) * d.hidden..][..d.hidden].to_vec();
    for (new, &old) in perm.iter().enumerate() {
        for t in 0..d.timesteps {
            for (x, y) in row(&b, new, t).iter().zip(row(&a, old, t)) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }
    assert_eq!(a.z_r, b.z_r);
}

#[test]
fn road_embedding_ignores_tracks_and_signals() {
    let (mae, p) = tiny();
    let d = mae.config().dims;
    let s = common::random_scenario(d, 7);
    let base = mae.embed(&p, &s).unwrap();
    for (n, t, c) in [(0, 0, track::X), (1, 2, track::VY), (2, 3, track::LENGTH)] {
        let mut q = s.clone();
        q.track_mut(n, t)[c] += 3.0;
        q.signal_mut(0, 1)[0] -= 2.0;
        let e = mae.embed(&p, &q).unwrap();
        assert_eq!(e.z_r, base.z_r);
        assert_ne!(e.z_v, base.z_v);
    }
}

#[test]
fn decode_shapes_zero_heads_and_determinism() {
    let (mae, mut p) = tiny();
    let d = mae.config().dims;
    let s = common::random_scenario(d, 8);
    let none = MaskSet::none(&d);
    let r = mae.reconstruct(&p, &s, &none).unwrap();
    assert_eq!(r.tracks.shape(), [d.max_tracks * d.timesteps, d.track_width]);
    assert_eq!(r.signals.shape(), [d.signals * d.timesteps, d.signal_width]);
    assert_eq!(r.labels.shape(), [d.polylines, d.label_classes]);
    assert_eq!(r.points.shape(), [d.polylines * d.points_per_polyline, d.point_width]);
    assert_eq!(mae.reconstruct(&p, &s, &none).unwrap(), r);

    for name in ["dec.track", "dec.signal", "dec.road"] {
        for suffix in ["w", "b"] {
            p.get_mut(&format!("{name}.{suffix}")).unwrap().data_mut().fill(0.0);
        }
    }
    let z = mae.reconstruct(&p, &s, &none).unwrap();
    for t in [&z.tracks, &z.signals, &z.labels, &z.points] {
        assert!(t.data().iter().all(|&v| v == 0.0));
    }
}

/// Reconstruction whose continuous channels equal the normalized targets and
/// whose categorical logits are ±40 around the one-hot targets.
fn perfect(s: &Scenario) -> Reconstruction {
    let d = s.dims;
    let t = ModelInputs::from_scenario(s);
    let logit = |v: f32| if v == 1.0 { 40.0 } else { -40.0 };
    let mut tracks = t.tracks.clone();
    for row in tracks.chunks_exact_mut(d.track_width) {
        for v in &mut row[track::CLASS..] {
            *v = logit(*v);
        }
    }
    let mut signals = t.signals.clone();
    for row in signals.chunks_exact_mut(d.signal_width) {
        for v in &mut row[4..] {
            *v = logit(*v);
        }
    }
    let mut points = t.points.clone();
    for row in points.chunks_exact_mut(d.point_width) {
        row[point::EXISTENCE] = logit(row[point::EXISTENCE]);
    }
    Reconstruction {
        tracks: Tensor::new(&[d.max_tracks * d.timesteps, d.track_width], tracks).unwrap(),
        signals: Tensor::new(&[d.signals * d.timesteps, d.signal_width], signals).unwrap(),
        labels: Tensor::new(&[d.polylines, d.label_classes], t.labels.iter().map(|&v| logit(v)).collect()).unwrap(),
        points: Tensor::new(&[d.polylines * d.points_per_polyline, d.point_width], points).unwrap(),
    }
}

#[test]
fn perfect_reconstruction_has_zero_loss() {
    let d = ScenarioDims::compact();
    let s = generate_scenario(
        &WorldConfig {
            dims: d,
            ..WorldConfig::default()
        },
        9,
    );
    let l = reconstruction_loss(&perfect(&s), &s, &MaskSet::all(&d), &LossWeights::default()).unwrap();
    assert!(l.total < 1e-12, "{l:?}");
    assert!(!l.empty.any());
}

#[test]
fn zero_weights_give_zero_total() {
    let (mae, p) = tiny();
    let d = mae.config().dims;
    let s = common::random_scenario(d, 10);
    let r = mae.reconstruct(&p, &s, &MaskSet::none(&d)).unwrap();
    let l = reconstruction_loss(&r, &s, &MaskSet::all(&d), &LossWeights::zero()).unwrap();
    assert_eq!(l.total, 0.0);
    assert!(l.components().iter().all(|&c| c > 0.0));
}

#[test]
fn single_track_timestep_matches_hand_computation() {
    let d = ScenarioDims::tiny();
    let s = common::random_scenario(d, 12);
    let (n, t) = (1..d.max_tracks).find(|&n| s.track_exists(n, 0)).map(|n| (n, 2)).unwrap();
    let mut recon = perfect(&s);
    let w = d.track_width;
    let row_idx = n * d.timesteps + t;
    let pred: Vec<f32> = (0..w).map(|c| 0.1 * c as f32 - 0.4).collect();
    recon.tracks.data_mut()[row_idx * w..(row_idx + 1) * w].copy_from_slice(&pred);
    let mut lm = MaskSet::none(&d);
    lm.tracks[row_idx] = true;
    let l = reconstruction_loss(&recon, &s, &lm, &LossWeights::default()).unwrap();

    let raw = s.track(n, t);
    let l1: f64 = (0..track::CONTINUOUS).map(|c| (pred[c] as f64 - (raw[c] / TRACK_SCALE[c]) as f64).abs()).sum();
    let logits: Vec<f64> = pred[track::CLASS..track::CLASS + track::CLASSES].iter().map(|&v| v as f64).collect();
    let lse = logits.iter().map(|v| v.exp()).sum::<f64>().ln();
    let cls = (0..track::CLASSES).find(|&k| raw[track::CLASS + k] == 1.0).unwrap();
    let ce = lse - logits[cls];
    let x = pred[track::EXISTENCE] as f64;
    let bce = -(1.0 / (1.0 + (-x).exp())).ln();
    let expect = l1 + ce + bce;
    assert!((l.track - expect).abs() < 1e-6, "{} vs {expect}", l.track);
    assert!((l.total - expect).abs() < 1e-6);
    assert!(l.empty.signal && l.empty.road && l.empty.ego && !l.empty.track);
}

#[test]
fn full_loss_gradient_check() {
    let (mae, p) = tiny();
    let d = mae.config().dims;
    assert_eq!(d.hidden, 8);
    let s = common::random_scenario(d, 5);
    let target = ModelInputs::from_scenario(&s);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let masks = sample_masks(&d, 0.5, &mut rng);
    let lm = sample_masks(&d, 1.0, &mut rng);
    let start = Instant::now();
    let r = grad_check(|p, g| Ok(mae.loss(g, p, &target, &masks, &lm)?.total), &p.cast(), 1e-3).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
    assert!(r.checked > 1000);
    assert!(start.elapsed().as_secs() < 60);
}
