//! Membership-inference success bounds.
//!
//! With a balanced subset construction the adversary's prior is exactly 50%.
//! The posterior success rate after observing released cells is bounded by
//! inverting the binary KL divergence against the total spent MI.
//!
//! ```bash
//! cargo run --release --example mia_bounds
//! ```

use pacq::worlds::{mia_bound, MiaBoundQuery};

fn main() {
    println!("total MI (nats)   MIA success bound (prior 0.5)");
    for mi in [0.0, 1.0 / 128.0, 1.0 / 64.0, 1.0 / 16.0, 0.25, 0.5, 1.0, 2.0] {
        let bound = mia_bound(MiaBoundQuery::new(0.5, mi).unwrap());
        println!("{mi:<17} {bound:.4}");
    }

    // composition: d released cells at per-cell budget B spend d*B nats
    let per_cell = 1.0 / 128.0;
    println!("\nreleases at B = 1/128 per cell:");
    println!("cells   total MI   bound");
    for cells in [1u64, 8, 32, 64, 128, 512] {
        let total = cells as f64 * per_cell;
        let bound = mia_bound(MiaBoundQuery::new(0.5, total).unwrap());
        println!("{cells:<7} {total:<10.5} {bound:.4}");
    }

    // the bound depends on the attack's prior too
    println!("\nat total MI = 1/4:");
    println!("prior   bound");
    for prior in [0.01, 0.1, 0.5, 0.9] {
        let bound = mia_bound(MiaBoundQuery::new(prior, 0.25).unwrap());
        println!("{prior:<7} {bound:.4}");
    }
}
