//! Re-validation cost of a mileage, and how many collisions a random subset
//! is expected to keep.
//!
//!     cargo run --example cost_model -- [miles]

use dice::metrics::{cost_model, expected_random_collisions};

fn main() {
    let miles: f64 = std::env::args().nth(1).map_or(50_000.0, |s| s.parse().expect("miles"));
    let c = cost_model(miles, 35.0, 1.624, 10.0).expect("valid inputs");
    println!("{miles} miles at 35 mph, factor 10: {:.0} h, ${:.0}", c.hours, c.dollars);

    let (c_full, n_full) = (1300, 800_000);
    for n_random in [8_000, 40_000, 80_000, 160_000] {
        let e = expected_random_collisions(c_full, n_random, n_full).expect("subset fits");
        println!("random {n_random:>7} of {n_full}: {e:>6.1} of {c_full} collisions expected");
    }
}
