#![allow(dead_code)]

use dice::scene::{point, track, validate, Scenario, ScenarioDims};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Valid scenario with uniformly random continuous content: ego plus about
/// 70% of the other rows present, random classes, 80% of points present.
pub fn random_scenario(dims: ScenarioDims, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Scenario::blank(dims, format!("r{seed}"), 0.5);
    for n in 0..dims.max_tracks {
        let exists = n == 0 || rng.random::<f64>() < 0.7;
        for t in 0..dims.timesteps {
            let row = s.track_mut(n, t);
            if !exists {
                row.fill(0.0);
                continue;
            }
            for v in &mut row[..track::CONTINUOUS] {
                *v = rng.random_range(-10.0..10.0);
            }
            let th: f32 = rng.random_range(-3.0..3.0);
            row[track::SIN] = th.sin();
            row[track::COS] = th.cos();
            row[track::CLASS..track::CLASS + track::CLASSES].fill(0.0);
            row[track::CLASS + rng.random_range(0..track::CLASSES)] = 1.0;
            row[track::EXISTENCE] = 1.0;
        }
    }
    for z in 0..dims.polylines {
        for p in 0..dims.points_per_polyline {
            if rng.random::<f64>() < 0.8 {
                let pt = s.point_mut(z, p);
                pt[point::X] = rng.random_range(-10.0..10.0);
                pt[point::Y] = rng.random_range(-3.0..3.0);
                pt[point::WIDTH] = 3.5;
                pt[point::EXISTENCE] = 1.0;
            }
        }
    }
    assert!(validate(&s).is_empty());
    s
}
