//! Monte Carlo calibration of the synthetic world.
//!
//! Measures the per-hazard collision probability, the collision rate at the
//! default hazard intensity, and the intensity that puts a corpus near 1.6
//! collisions per thousand scenarios. Writes the result as JSON.
//!
//!     cargo run --release --example calibrate_world -- [out.json]

use dice::synth::{generate_range, simulate_all, EgoPolicyParams, WorldConfig};
use serde_json::json;

const TARGET_RATE: f64 = 1300.0 / 800_000.0;

fn rate(cfg: &WorldConfig, n: usize) -> (usize, f64) {
    let policy = EgoPolicyParams::default();
    let mut hits = 0;
    // chunks keep memory flat for large n
    for start in (0..n).step_by(20_000) {
        let m = (n - start).min(20_000);
        let scs = generate_range(cfg, start as u64, m, 1);
        hits += simulate_all(&scs, &policy, 1)
            .expect("default policy is valid")
            .iter()
            .map(|r| r.outcome.label as usize)
            .sum::<usize>();
    }
    (hits, hits as f64 / n as f64)
}

fn main() {
    let base = WorldConfig::default();
    let design_n = 50_000;
    let (design_hits, design_rate) = rate(&WorldConfig { seed: 1000, hazard: base.hazard, ..base.clone() }, design_n);
    let (hazard_hits, p_hazard) = rate(&WorldConfig { seed: 1001, hazard: 1.0, ..base.clone() }, design_n);
    let corpus_hazard = (TARGET_RATE / p_hazard * 1e4).round() / 1e4;
    let check_n = 400_000;
    let (check_hits, check_rate) = rate(&WorldConfig { seed: 1002, hazard: corpus_hazard, ..base.clone() }, check_n);
    let (corpus_hits, corpus_rate) = rate(&WorldConfig { seed: 0, hazard: corpus_hazard, ..base.clone() }, 20_000);

    let report = json!({
        "design": { "hazard": base.hazard, "seed": 1000, "scenarios": design_n, "collisions": design_hits, "rate": design_rate },
        "per_hazard": { "seed": 1001, "scenarios": design_n, "collisions": hazard_hits, "p_collision": p_hazard },
        "corpus": {
            "target_rate": TARGET_RATE,
            "hazard": corpus_hazard,
            "check": { "seed": 1002, "scenarios": check_n, "collisions": check_hits, "rate": check_rate },
            "desk": { "seed": 0, "scenarios": 20_000, "collisions": corpus_hits, "rate": corpus_rate },
        },
    });
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    match std::env::args().nth(1) {
        Some(path) => std::fs::write(path, text + "\n").expect("write report"),
        None => println!("{text}"),
    }
}
