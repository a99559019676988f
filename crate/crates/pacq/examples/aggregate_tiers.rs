//! Stochastic aggregate kernels and their optimization tiers.
//!
//! Every tier implements the same update/combine/finalize contract; the
//! naive branchy loop is the ground truth and the predicated, SWAR-packed,
//! and pruned tiers must match it slot for slot. The loop at the end prints
//! a ns/row comparison (throughput is informational, hardware-dependent).
//!
//! ```bash
//! cargo run --release --example aggregate_tiers
//! ```

use pacq::aggregates::{
    bench::run_bench, AggInput, AggKind, AggValue, Accumulator, TierConfig,
};
use pacq::datagen::{DistName, DistributionSpec};
use pacq::hashing::{balance64, mix64, PuHash};

fn main() {
    // one update stream, every tier, identical world vectors
    let mut x = 0xabcdu64;
    let stream: Vec<(u64, i64)> = (0..50_000)
        .map(|_| {
            x = mix64(x);
            let h = balance64(x).0;
            x = mix64(x);
            (h, (x % 100_000) as i64 - 50_000)
        })
        .collect();

    let tiers = [("naive", TierConfig::naive()), ("default", TierConfig::default())];
    for kind in [AggKind::Count, AggKind::Sum, AggKind::Min, AggKind::Max] {
        let mut results = Vec::new();
        for (name, t) in &tiers {
            let mut acc = Accumulator::new(kind, AggInput::Int, t);
            for &(h, v) in &stream {
                acc.update(PuHash(h), AggValue::Int(v));
            }
            results.push((*name, acc.finalize_raw().unwrap()));
        }
        let equal = results[0].1 == results[1].1;
        println!(
            "{:<10} naive vs default tier: {} (slot 0 = {})",
            kind.name(),
            if equal { "bit-exact" } else { "MISMATCH" },
            results[0].1.values[0]
        );
        assert!(equal);
    }

    // split-and-combine matches a single pass exactly
    let (left, right) = stream.split_at(stream.len() / 3);
    let mut a = Accumulator::new(AggKind::Sum, AggInput::Int, &TierConfig::default());
    let mut b = Accumulator::new(AggKind::Sum, AggInput::Int, &TierConfig::default());
    let mut single = Accumulator::new(AggKind::Sum, AggInput::Int, &TierConfig::default());
    for &(h, v) in left {
        a.update(PuHash(h), AggValue::Int(v));
        single.update(PuHash(h), AggValue::Int(v));
    }
    for &(h, v) in right {
        b.update(PuHash(h), AggValue::Int(v));
        single.update(PuHash(h), AggValue::Int(v));
    }
    a.combine(b);
    assert_eq!(a.finalize_raw().unwrap(), single.finalize_raw().unwrap());
    println!("\nsplit + combine == single pass");

    // ns/row across tiers on a larger stream
    let spec = DistributionSpec::new(DistName::UniformInt, 1 << 20, 3);
    println!("\nkernel,tier,distribution,rows,groups,ns_per_row");
    for kernel in ["count", "sum", "minmax"] {
        for row in run_bench(kernel, &spec, 20_000_000, 1, false) {
            println!("{}", row.to_csv_row());
        }
    }
}
