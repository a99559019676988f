//! The adaptive PAC noise mechanism.
//!
//! A released cell is the secret world's value plus Gaussian noise whose
//! variance is the cross-world variance under the current posterior, divided
//! by twice the per-cell MI budget. Each release then sharpens the posterior
//! by a Bayesian update, so a sequence of releases composes to `d * B` nats.
//!
//! ```bash
//! cargo run --release --example noise_calibration
//! ```

use pacq::hashing::mix64;
use pacq::relcore::Value;
use pacq::worlds::{pac_noised, NoiseSession, WorldVector, WORLDS};

fn main() {
    let budget = 1.0 / 128.0;

    // a fixed vector of 64 per-world counts
    let mut values = [0.0f64; 64];
    let mut x = 7u64;
    for v in values.iter_mut() {
        x = mix64(x);
        *v = 5_000.0 + (x % 200) as f64;
    }
    let vector = WorldVector::new(values, u64::MAX);

    let scale = 2.0; // counts release doubled: each world sees half the rows
    let mean = values.iter().map(|v| scale * v).sum::<f64>() / WORLDS as f64;
    let var = values
        .iter()
        .map(|v| (scale * v - mean) * (scale * v - mean))
        .sum::<f64>()
        / WORLDS as f64;
    let predicted = (var / (2.0 * budget)).sqrt();

    // fresh posterior per trial isolates the calibration itself
    let trials = 10_000;
    let mut errs = Vec::with_capacity(trials);
    for seed in 0..trials as u64 {
        let mut session = NoiseSession::new(seed, budget, true);
        let j = session.j_star;
        if let Value::Float64(out) = pac_noised(&vector, &mut session, scale) {
            errs.push(out - scale * values[j]);
        }
    }
    let m = errs.iter().sum::<f64>() / errs.len() as f64;
    let sd = (errs.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / errs.len() as f64).sqrt();
    println!("per-cell budget B = {budget} nats, scale = {scale}");
    println!("predicted noise std sqrt(Var/2B) = {predicted:.2}");
    println!("empirical noise std over {trials} releases = {sd:.2}");

    // sequential releases on one session: the posterior tightens and the
    // spent MI composes linearly
    let mut session = NoiseSession::new(3, budget, true);
    println!("\nsequential releases on one session (j* = {}):", session.j_star);
    println!("release   max posterior   posterior sum   total MI (nats)");
    for i in 0..10 {
        pac_noised(&vector, &mut session, scale);
        let max_p = session.posterior.iter().cloned().fold(0.0, f64::max);
        if i % 2 == 1 {
            println!(
                "{:>7}   {max_p:<14.4}  {:<14.12}  {:.5}",
                i + 1,
                session.posterior_sum(),
                session.total_mi()
            );
        }
    }

    // the NULL mechanism: releases from sparsely-populated vectors go NULL
    // with probability (64 - popcount(mask)) / 64
    let sparse = WorldVector::new(values, 0x0000_0000_ffff_ffff);
    let mut nulls = 0;
    for seed in 0..trials as u64 {
        let mut session = NoiseSession::new(seed, budget, true);
        if pac_noised(&sparse, &mut session, scale) == Value::Null {
            nulls += 1;
        }
    }
    println!(
        "\nhalf-empty mask: {:.3} of releases were NULL (expected 0.5)",
        nulls as f64 / trials as f64
    );
}
