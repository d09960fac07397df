//! Drives every pipeline stage through the library API on a miniature
//! config, the same way the `dice` binary does, and prints each summary.
//!
//!     cargo run --release --example run_pipeline -- [run_dir]

use dice::pipeline::{run, PipelineConfig, Stage};
use serde_json::json;

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "runs/example".into());
    let text = json!({
        "world": {"scenarios": 600, "hazard": 0.3},
        "train": {"scenarios": 32, "steps": 40, "batch_size": 8},
        "difficulty": {"pool": 1000, "train_per_class": 60, "held_out_per_class": 20, "steps": 300},
        "clustering": {"clusters": 12},
        "evaluation": {"seeds": (0..10).collect::<Vec<u64>>()},
        "paths": {"dir": dir},
    })
    .to_string();
    let cfg = PipelineConfig::from_json(&text).expect("valid config");
    for stage in Stage::ALL {
        match run(stage, &cfg, 2) {
            Ok(summary) => println!("{:<9} {summary}", stage.name()),
            Err(e) => {
                eprintln!("{}", e.to_json());
                std::process::exit(1);
            }
        }
    }
    println!("artifacts and manifests in {dir}");
}
