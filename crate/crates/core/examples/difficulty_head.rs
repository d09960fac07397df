//! Fits the difficulty head on frozen backbone features from a balanced
//! collision / no-collision set and reports held-out ROC AUC.
//!
//! Pass a backbone checkpoint (from `dice pretrain` or the pretrain_backbone
//! example); without one a quick 100-step backbone is trained first.
//!
//!     cargo run --release --example difficulty_head -- [backbone.ckpt] [per_class]

use dice::difficulty::{features, finetune, roc_auc, FinetuneConfig};
use dice::mae::{EncoderConfig, Mae};
use dice::pretrain::{load_backbone, pretrain, TrainConfig};
use dice::synth::{generate_range, generate_scenario, simulate, EgoPolicyParams, WorldConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next();
    let per_class: usize = args.next().map_or(300, |s| s.parse().expect("per_class"));

    let (mae, backbone) = match ckpt {
        Some(p) => load_backbone(&p).expect("load backbone"),
        None => {
            let world = WorldConfig { seed: 512, ..WorldConfig::default() };
            let mae = Mae::new(EncoderConfig::for_dims(world.dims)).expect("default config is valid");
            let cfg = TrainConfig { steps: 100, ..TrainConfig::default() };
            let out = pretrain(&mae, &cfg, &generate_range(&world, 0, 64, 1)).expect("pretrain");
            (mae, out.params)
        }
    };
    let hash = backbone.hash();

    // Balanced draw: first `per_class` train and the next quarter held out, per class.
    let world = WorldConfig { seed: 2024, hazard: 0.5, ..WorldConfig::default() };
    let policy = EgoPolicyParams::default();
    let held = per_class / 4;
    let (mut train, mut test) = ((vec![], vec![]), (vec![], vec![]));
    let mut seen = [0usize; 2];
    let mut i = 0;
    while seen.iter().any(|&c| c < per_class + held) {
        let s = generate_scenario(&world, i);
        i += 1;
        let y = simulate(&s, &policy).expect("default policy is valid").label;
        let k = seen[y as usize];
        if k >= per_class + held {
            continue;
        }
        seen[y as usize] += 1;
        let dst = if k < per_class { &mut train } else { &mut test };
        dst.0.push(features(&mae, &backbone, &s).expect("features"));
        dst.1.push(y);
    }
    println!("drew {i} scenarios for {} train / {} held-out examples", train.1.len(), test.1.len());

    let cfg = FinetuneConfig { steps: 1500, ..FinetuneConfig::default() };
    let (head, trace) = finetune(&train.0, &train.1, &cfg).expect("finetune");
    assert_eq!(backbone.hash(), hash, "backbone stays frozen");
    let score = |f: &[Vec<f32>]| -> Vec<f64> { f.iter().map(|x| head.score_feature(x).expect("width")).collect() };
    println!("bce {:.3} -> {:.3}", trace[0], trace.last().unwrap());
    println!("train AUC    {:.3}", roc_auc(&score(&train.0), &train.1).unwrap());
    println!("held-out AUC {:.3}", roc_auc(&score(&test.0), &test.1).unwrap());
}
