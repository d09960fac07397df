use dice::numeric::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_store(specs: &[(&str, &[usize])], seed: u64) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    for (name, shape) in specs {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        p.insert(*name, Tensor::new(shape, data).unwrap()).unwrap();
    }
    p
}

fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

const TOL: f64 = 1e-4;
const DELTA: f64 = 1e-3;

#[test]
fn affine_layer_norm_gelu_chain() {
    let p = random_store(&[("x", &[5, 6]), ("w", &[6, 4]), ("b", &[4]), ("g", &[4]), ("beta", &[4])], 1);
    let r = grad_check(
        |p, g| {
            let x = g.param(p, "x")?;
            let w = g.param(p, "w")?;
            let b = g.param(p, "b")?;
            let h = g.affine(x, w, b)?;
            let (ga, be) = (g.param(p, "g")?, g.param(p, "beta")?);
            let h = g.layer_norm(h, ga, be)?;
            let h = g.gelu(h);
            let h = g.mul_const(h, Tensor::new(&[5, 4], random_vec(20, 9)).unwrap())?;
            Ok(g.sum(h))
        },
        &p,
        DELTA,
    )
    .unwrap();
    assert_eq!(r.excluded, 0);
    assert!(r.max_rel_error < TOL, "{r:?}");
}

fn attention_check(layout: AttentionLayout, q_rows: usize, k_rows: usize, width: usize, mask: Option<Vec<bool>>) {
    let p = random_store(&[("q", &[q_rows, width]), ("k", &[k_rows, width]), ("v", &[k_rows, width])], 3);
    let weights = random_vec(q_rows * width, 4);
    let r = grad_check(
        |p, g| {
            let (q, k, v) = (g.param(p, "q")?, g.param(p, "k")?, g.param(p, "v")?);
            let a = g.attention(q, k, v, layout, mask.as_deref())?;
            let a = g.mul_const(a, Tensor::new(&[q_rows, width], weights.clone()).unwrap())?;
            Ok(g.sum(a))
        },
        &p,
        DELTA,
    )
    .unwrap();
    assert!(r.max_rel_error < TOL, "{layout:?} {r:?}");
}

#[test]
fn attention_layouts() {
    // two groups of three, self-attention
    attention_check(AttentionLayout::contiguous(2, 2, 3), 6, 6, 4, None);
    // strided: 3 objects × 2 timesteps, attend across objects per timestep
    let obj = AttentionLayout {
        heads: 2,
        groups: 2,
        q_len: 3,
        q_group_stride: 1,
        q_seq_stride: 2,
        k_len: 3,
        k_group_stride: 1,
        k_seq_stride: 2,
    };
    attention_check(obj, 6, 6, 4, None);
    // cross-attention to a shared memory of 5 rows
    let cross = AttentionLayout {
        heads: 1,
        groups: 1,
        q_len: 4,
        q_group_stride: 0,
        q_seq_stride: 1,
        k_len: 5,
        k_group_stride: 0,
        k_seq_stride: 1,
    };
    attention_check(cross, 4, 5, 4, None);
    attention_check(cross, 4, 5, 4, Some(vec![true, false, true, true, false]));
}

#[test]
fn pooling_concat_slicing() {
    let p = random_store(&[("a", &[3, 4, 2]), ("b", &[3, 2])], 5);
    let r = grad_check(
        |p, g| {
            let a = g.param(p, "a")?;
            let b = g.param(p, "b")?;
            let mx = g.max_pool(a, 1)?;
            let mn = g.mean_pool(a, 0)?;
            let mn = g.reshape(mn, &[4, 2])?;
            let c = g.concat(&[mx, b], 0)?;
            let c = g.concat(&[c, c], 1)?;
            let top = g.rows(c, 1, 4)?;
            let right = g.cols(top, 1, 2)?;
            let s = g.add(right, mn)?;
            let s = g.scale(s, 0.7);
            let s = g.add_const(s, &Tensor::full(&[4, 2], 0.3))?;
            let s = g.gelu(s);
            Ok(g.sum(s))
        },
        &p,
        DELTA,
    )
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn cross_entropy_head_on_random_logits() {
    let p = random_store(&[("logits", &[6, 4])], 6);
    let mut target = vec![0.0; 24];
    for i in 0..6 {
        target[i * 4 + i % 4] = 1.0;
    }
    let w = random_vec(6, 7).iter().map(|v| v.abs()).collect::<Vec<_>>();
    let r = grad_check(
        |p, g| {
            let l = g.param(p, "logits")?;
            let l = g.scale(l, 3.0);
            g.softmax_cross_entropy(l, target.clone(), w.clone())
        },
        &p,
        DELTA,
    )
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn bce_l1_weighted_sum() {
    let p = random_store(&[("x", &[10])], 8);
    // targets far from the parameter values, so no residual crosses zero
    let l1_t: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 3.0 } else { -3.0 }).collect();
    let ex: Vec<f64> = (0..10).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let r = grad_check(
        |p, g| {
            let x = g.param(p, "x")?;
            let a = g.l1(x, l1_t.clone(), vec![0.5; 10])?;
            let b = g.bce_with_logits(x, ex.clone(), vec![1.0; 10])?;
            g.weighted_sum(&[(a, 2.0), (b, 0.25)])
        },
        &p,
        DELTA,
    )
    .unwrap();
    assert_eq!(r.excluded, 0);
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn l1_of_linear_map_matches_hand_gradient() {
    let w = Tensor::new(&[2, 3], vec![1.0, -2.0, 0.5, 0.3, 0.7, -1.1]).unwrap();
    let x = [0.4, -0.9, 1.3];
    let mut g = Graph::<f64>::new();
    let wn = g.input(w.clone());
    let xn = g.input(Tensor::new(&[3, 1], x.to_vec()).unwrap());
    let y = g.matmul(wn, xn).unwrap();
    let l = g.l1(y, vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let grads = g.backward(l).unwrap();
    let gw = grads.of(wn).unwrap();
    for i in 0..2 {
        let r: f64 = (0..3).map(|j| w.data()[i * 3 + j] * x[j]).sum();
        for j in 0..3 {
            assert_eq!(gw.data()[i * 3 + j], r.signum() * x[j]);
        }
    }
}

#[test]
fn non_scalar_loss_and_shape_errors() {
    let mut g = Graph::<f32>::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[2, 3]));
    assert_eq!(g.backward(a).unwrap_err(), NumericError::NonScalar(vec![2, 3]));
    match g.matmul(a, b) {
        Err(NumericError::ShapeMismatch { left, right, .. }) => {
            assert_eq!((left, right), (vec![2, 3], vec![2, 3]));
        }
        other => panic!("{other:?}"),
    }
}

/// Plain scalar Adam, written out from the update rule.
fn adam_reference(x0: &[f64], grads: &[Vec<f64>], lr: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut x = x0.to_vec();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    for (t, g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        for i in 0..x.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            x[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    x
}

#[test]
fn adam_matches_reference_trajectory() {
    let x0 = random_vec(5, 10);
    let grads: Vec<Vec<f64>> = (0..20).map(|s| random_vec(5, 100 + s)).collect();
    let mut p = ParamStore::<f64>::new();
    p.insert("x", Tensor::new(&[5], x0.clone()).unwrap()).unwrap();
    let mut opt = Adam::new(AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    });
    for g in &grads {
        opt.step(&mut p, &[Some(Tensor::new(&[5], g.clone()).unwrap())]);
    }
    let expect = adam_reference(&x0, &grads, 1e-2);
    for (a, b) in p.get("x").unwrap().data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(opt.steps(), 20);
}

#[test]
fn adam_single_step_moves_by_lr() {
    let mut p = ParamStore::<f32>::new();
    p.insert("x", Tensor::scalar(1.0)).unwrap();
    let mut opt = Adam::new(AdamConfig::default());
    opt.step(&mut p, &[Some(Tensor::scalar(1.0))]);
    let moved = 1.0 - p.get("x").unwrap().item() as f64;
    assert!((moved - 3e-4).abs() < 1e-8, "{moved}");
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let mut p = random_store(&[("a", &[3, 3])], 11).cast::<f32>();
        let mut opt = Adam::new(AdamConfig::default());
        for s in 0..50 {
            let g = Tensor::new(&[3, 3], random_vec(9, s).iter().map(|&v| v as f32).collect()).unwrap();
            opt.step(&mut p, &[Some(g)]);
        }
        p
    };
    assert_eq!(run().hash(), run().hash());
}

#[test]
fn checkpoint_file_round_trip() {
    let p = random_store(&[("enc.w", &[3, 4]), ("enc.b", &[4]), ("s", &[])], 12).cast::<f32>();
    let ck = Checkpoint {
        config: "{\"k\":1}".into(),
        params: p,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    write_checkpoint(&path, &ck).unwrap();
    let back = read_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.params.hash(), ck.params.hash());

    let bytes = std::fs::read(&path).unwrap();
    assert!(read_checkpoint_from(&bytes[..bytes.len() - 2]).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-80.0f32..80.0, 1..20)) {
        let s = softmax(&v);
        prop_assert!((s.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        prop_assert!(s.iter().all(|x| x.is_finite() && *x >= 0.0));
    }

    #[test]
    fn mean_pool_then_subtract_is_centered(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
        let data = random_vec(rows * cols, seed);
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[rows, cols], data.clone()).unwrap());
        let m = g.mean_pool(x, 0).unwrap();
        let mean = g.value(m).data().to_vec();
        for j in 0..cols {
            let col: f64 = (0..rows).map(|i| data[i * cols + j] - mean[j]).sum();
            prop_assert!(col.abs() < 1e-6);
        }
    }

    #[test]
    fn attention_output_is_convex_combination(seed in 0u64..1000, heads in 1usize..3) {
        let (rows, width) = (5, 4);
        let q = Tensor::new(&[rows, width], random_vec(rows * width, seed).iter().map(|v| v * 5.0).collect()).unwrap();
        let k = Tensor::new(&[rows, width], random_vec(rows * width, seed + 1)).unwrap();
        let v = Tensor::new(&[rows, width], random_vec(rows * width, seed + 2)).unwrap();
        let mut g = Graph::<f64>::new();
        let (qn, kn, vn) = (g.input(q), g.input(k), g.input(v.clone()));
        let a = g.attention(qn, kn, vn, AttentionLayout::contiguous(heads, 1, rows), None).unwrap();
        let out = g.value(a);
        let hw = width / heads;
        for i in 0..rows {
            for c in 0..width {
                let col: Vec<f64> = (0..rows).map(|j| v.data()[j * width + c]).collect();
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let o = out.data()[i * width + c];
                prop_assert!(o >= lo - 1e-12 && o <= hi + 1e-12, "head width {hw}");
            }
        }
    }

    #[test]
    fn smooth_composites_pass_grad_check(seed in 0u64..10_000, rows in 1usize..5, width in 2usize..6) {
        let p = random_store(&[("x", &[rows, width]), ("w", &[width, width]), ("b", &[width]), ("g", &[width]), ("c", &[width])], seed);
        let f = |p: &ParamStore<f64>, g: &mut Graph<f64>| {
            let x = g.param(p, "x")?;
            let (w, b) = (g.param(p, "w")?, g.param(p, "b")?);
            let h = g.affine(x, w, b)?;
            let h = g.gelu(h);
            let (ga, c) = (g.param(p, "g")?, g.param(p, "c")?);
            let h = g.layer_norm(h, ga, c)?;
            let a = g.attention(h, x, h, AttentionLayout::contiguous(1, 1, rows), None)?;
            let m = g.mean_pool(a, 0)?;
            let m = g.reshape(m, &[1, width])?;
            let target = vec![1.0 / width as f64; width];
            g.softmax_cross_entropy(m, target, vec![1.0])
        };
        let mut r = grad_check(f, &p, DELTA).unwrap();
        // A two-wide layer norm is nearly flat away from a narrow ridge, so
        // central differences at 1e-3 can be dominated by their O(δ²) term.
        // Each tenfold smaller δ must then cut the error about a hundredfold.
        let mut delta = DELTA;
        for _ in 0..2 {
            if r.max_rel_error < TOL {
                break;
            }
            delta /= 10.0;
            let fine = grad_check(f, &p, delta).unwrap();
            prop_assert!(fine.max_rel_error < r.max_rel_error / 50.0, "{:?} {:?}", r, fine);
            r = fine;
        }
        prop_assert!(r.max_rel_error < TOL, "{:?}", r);
    }
}
