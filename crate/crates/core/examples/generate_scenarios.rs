//! Generates a handful of scenarios, re-drives each with the ego policy and
//! round-trips them through the binary scenario format.
//!
//!     cargo run --release --example generate_scenarios -- [count] [hazard]

use dice::scene::{read_scenarios, validate, write_scenarios};
use dice::synth::{generate, simulate, EgoPolicyParams, WorldConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let count: u64 = args.next().map_or(12, |s| s.parse().expect("count"));
    let hazard: f64 = args.next().map_or(0.5, |s| s.parse().expect("hazard"));
    let cfg = WorldConfig { seed: 7, hazard, ..WorldConfig::default() };
    let policy = EgoPolicyParams::default();

    let mut scenarios = Vec::new();
    println!("{:<14} {:<14} {:<22} {:>6} {:>9}", "id", "archetype", "hazard", "tracks", "collision");
    for i in 0..count {
        let g = generate(&cfg, i);
        let out = simulate(&g.scenario, &policy).expect("default policy is valid");
        assert!(validate(&g.scenario).is_empty());
        let hazard = g.hazard.map_or("-".to_string(), |h| format!("{h:?}"));
        println!(
            "{:<14} {:<14} {:<22} {:>6} {:>9}",
            g.scenario.id,
            g.archetype.name(),
            hazard,
            g.scenario.active_tracks(),
            out.label
        );
        scenarios.push(g.scenario);
    }

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("sample.scn");
    write_scenarios(&path, &scenarios).expect("write");
    let back = read_scenarios(&path).expect("read");
    assert_eq!(back, scenarios);
    println!("round trip ok: {} scenarios, {} bytes", back.len(), std::fs::metadata(&path).unwrap().len());
}
