//! Short masked-autoencoder pretraining run on freshly generated scenarios.
//! Prints the loss trace, the unmasked reconstruction error before and after,
//! and optionally saves the backbone.
//!
//!     cargo run --release --example pretrain_backbone -- [steps] [backbone.ckpt]

use dice::mae::{EncoderConfig, Mae};
use dice::pretrain::{eval_reconstruction, pretrain, save_backbone, TrainConfig};
use dice::synth::{generate_range, WorldConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(200, |s| s.parse().expect("steps"));
    let save = args.next();

    let world = WorldConfig { seed: 512, ..WorldConfig::default() };
    let data = generate_range(&world, 0, 128, 1);
    let (train, held_out) = data.split_at(96);
    let mae = Mae::new(EncoderConfig::for_dims(world.dims)).expect("default config is valid");
    let cfg = TrainConfig { steps, ..TrainConfig::default() };

    let before = eval_reconstruction(&mae, &mae.init_params(cfg.seed), held_out).expect("eval");
    let out = pretrain(&mae, &cfg, train).expect("pretrain");
    let after = eval_reconstruction(&mae, &out.params, held_out).expect("eval");

    for row in out.trace.iter().filter(|r| r.step % (steps / 10).max(1) == 0 || r.step + 1 == steps) {
        println!(
            "step {:>5}  total {:>8.3}  track {:>7.3}  signal {:>7.3}  road {:>7.3}  ego {:>7.3}",
            row.step, row.total, row.track, row.signal, row.road, row.ego
        );
    }
    println!("held-out reconstruction: {:.3} -> {:.3}", before.total, after.total);
    println!("backbone hash {}", out.params.hash());
    if let Some(path) = save {
        save_backbone(&path, &mae, &out.params).expect("save backbone");
        println!("saved {path}");
    }
}
