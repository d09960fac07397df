//! Compares the four sampling schemes on a synthetic embedding space.
//!
//! Points come from 40 Gaussian blobs. Each blob has a latent risk level; a
//! point's difficulty is a noisy reading of it and its collision label is
//! drawn from it. No model is involved, so this runs in seconds.
//!
//!     cargo run --release --example sampling_schemes -- [points]

use dice::embedding::{dice_feature, FeatureStats};
use dice::metrics::{estimate_total_collisions, evaluate, EvalCorpus};
use dice::sampler::{kmeans, score_importance, ClusterStat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() {
    let n: usize = std::env::args().nth(1).map_or(10_000, |s| s.parse().expect("points"));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let blobs: Vec<([f32; 4], f64)> = (0..40)
        .map(|_| {
            let c = [0; 4].map(|_| rng.random_range(-6.0f32..6.0));
            // a few blobs carry almost all of the risk
            let risk = if rng.random::<f64>() < 0.15 { rng.random_range(0.02..0.08) } else { 1e-4 };
            (c, risk)
        })
        .collect();

    let (mut z, mut d, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let (c, risk) = blobs[rng.random_range(0..blobs.len())];
        z.push(c.map(|v| v + 0.6 * unit.sample(&mut rng) as f32).to_vec());
        let logit: f64 = if risk > 1e-3 { 2.0 } else { -3.0 } + 0.7 * unit.sample(&mut rng);
        d.push(1.0 / (1.0 + (-logit).exp()));
        labels.push((rng.random::<f64>() < risk) as u8);
    }
    let ids: Vec<String> = (0..n).map(|i| format!("p{i:06}")).collect();

    let stats = FeatureStats::fit(&z);
    let feats = |w_d: f64| -> Vec<Vec<f64>> { z.iter().zip(&d).map(|(z, &d)| dice_feature(z, d, w_d, &stats)).collect() };
    let reference = kmeans(&feats(0.0), 50, 1).expect("k-means");
    let clustered = kmeans(&feats(1.0), 50, 1).expect("k-means");
    let weights = score_importance(&clustered, &d, 1.0, ClusterStat::Mean).expect("k0 > 0");

    let corpus = EvalCorpus {
        ids: &ids,
        labels: &labels,
        difficulties: &d,
        reference: &reference,
        dice: &clustered,
        weights: &weights,
    };
    let seeds: Vec<u64> = (0..30).collect();
    let report = evaluate(&corpus, &[0.02, 0.05, 0.1, 0.2], &seeds).expect("consistent corpus");

    println!("{n} points, {} collisions", report.c_full);
    println!("{:<18} {:>8} {:>8} {:>8} {:>8}   coverage at 5%", "scheme", "2%", "5%", "10%", "20%");
    for c in &report.curves {
        let m: Vec<String> = c.mean.iter().map(|v| format!("{v:>8.3}")).collect();
        println!("{:<18} {}   {:.2} (min {:.2})", c.scheme.name(), m.join(" "), c.coverage_mean[1], c.coverage_min[1]);
    }

    for k0 in [0.3, 0.1] {
        let w = score_importance(&clustered, &d, k0, ClusterStat::Mean).expect("k0 > 0");
        let c = EvalCorpus { weights: &w, ..corpus };
        let r = evaluate(&c, &[0.02, 0.05, 0.1, 0.2], &seeds).expect("consistent corpus");
        let m: Vec<String> = r.curves[2].mean.iter().map(|v| format!("{v:>8.3}")).collect();
        println!("{:<18} {}", format!("dice k0={k0}"), m.join(" "));
    }

    let sample = corpus.sample(dice::sampler::Scheme::Dice, n / 10, 0);
    let est = estimate_total_collisions(&clustered, &sample, &labels);
    println!(
        "stratified estimate from a 10% DICE sample: {:.1} (observed {}, true {})",
        est.estimate, est.observed, report.c_full
    );
}
