//! Checks reverse-mode gradients of the full masked-reconstruction loss
//! against central differences, on a tiny model in double precision.
//!
//!     cargo run --release --example grad_check

use dice::mae::{sample_masks, EncoderConfig, Mae, ModelInputs};
use dice::numeric::grad_check;
use dice::scene::ScenarioDims;
use dice::synth::{generate_scenario, WorldConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let dims = ScenarioDims::tiny();
    let mae = Mae::new(EncoderConfig::for_dims(dims)).expect("tiny config is valid");
    let params = mae.init_params(3).cast::<f64>();
    let world = WorldConfig { dims, hazard: 1.0, ..WorldConfig::default() };
    let target = ModelInputs::from_scenario(&generate_scenario(&world, 0));

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let masks = sample_masks(&dims, 0.5, &mut rng);
    let covered = sample_masks(&dims, 1.0, &mut rng);
    let r = grad_check(|p, g| Ok(mae.loss(g, p, &target, &masks, &covered)?.total), &params, 1e-3)
        .expect("loss graph builds");

    println!("parameters       {}", params.numel());
    println!("checked coords   {}", r.checked);
    println!("excluded (kinks) {}", r.excluded);
    println!("max rel error    {:.2e} ({})", r.max_rel_error, r.worst.as_deref().unwrap_or("-"));
    println!("worst coordinate {:.2e} {:?}", r.max_coord_rel_error, r.worst_coord);
}
