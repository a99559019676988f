//! Kernel micro-benchmark harness behind the `bench` subcommand: streams
//! (hash, value) updates through each tier and reports ns/row. Throughput is
//! reported, never asserted.

use std::time::Instant;

use super::{AggInput, AggKind, AggValue, Accumulator, CountTier, SumTier, TierConfig};
use crate::datagen::{generate_keys, generate_values, DistributionSpec};
use crate::hashing::{pac_hash_raw, PuHash};

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub kernel: String,
    pub tier: String,
    pub distribution: String,
    pub rows: u64,
    pub groups: u64,
    pub ns_per_row: f64,
}

impl BenchResult {
    pub fn csv_header() -> &'static str {
        "kernel,tier,distribution,rows,groups,ns_per_row"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.kernel, self.tier, self.distribution, self.rows, self.groups, self.ns_per_row
        )
    }
}

struct Stream {
    hashes: Vec<u64>,
    groups: Vec<u32>,
    values: Vec<i64>,
}

/// Streams are materialized in one chunk and replayed until the requested
/// update count, so hash generation stays out of the timed region. Each row
/// is its own privacy unit: hashes must be unpredictable per row, or the
/// naive tier's branch becomes trivially predictable and pruning bounds
/// never form.
fn build_stream(spec: &DistributionSpec) -> Stream {
    let keys = generate_keys(spec);
    let values = generate_values(spec);
    let groups: Vec<u32> = keys.iter().map(|&k| (k as u64 % spec.keys.max(1)) as u32).collect();
    let hashes: Vec<u64> = (0..keys.len())
        .map(|i| pac_hash_raw(crate::hashing::mix64(i as u64), crate::datagen::BENCH_SALT).0)
        .collect();
    Stream { hashes, groups, values }
}

fn time_tier(
    stream: &Stream,
    rows: u64,
    n_groups: usize,
    threads: usize,
    make: &(dyn Fn() -> Accumulator + Sync),
) -> f64 {
    let chunk = stream.hashes.len() as u64;
    let threads = threads.max(1);
    let per_thread = rows / threads as u64;

    let start = Instant::now();
    let combined = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for t in 0..threads {
            let todo = if t == threads - 1 { rows - per_thread * (threads as u64 - 1) } else { per_thread };
            handles.push(scope.spawn(move || {
                let mut states: Vec<Accumulator> = (0..n_groups).map(|_| make()).collect();
                let mut done = 0u64;
                while done < todo {
                    let take = (todo - done).min(chunk) as usize;
                    for i in 0..take {
                        let g = stream.groups[i] as usize;
                        states[g].update(PuHash(stream.hashes[i]), AggValue::Int(stream.values[i]));
                    }
                    done += take as u64;
                }
                states
            }));
        }
        let mut iter = handles.into_iter();
        let mut acc = iter.next().unwrap().join().unwrap();
        for h in iter {
            for (a, b) in acc.iter_mut().zip(h.join().unwrap()) {
                a.combine(b);
            }
        }
        acc
    });
    let elapsed = start.elapsed().as_nanos() as f64;
    // keep the states alive through the measurement
    let checksum: u64 = combined.iter().map(|a| a.update_count()).sum();
    std::hint::black_box(checksum);
    elapsed / rows as f64
}

/// Runs every tier of one kernel family over one distribution.
pub fn run_bench(
    kernel: &str,
    spec: &DistributionSpec,
    rows: u64,
    threads: usize,
    buffered: bool,
) -> Vec<BenchResult> {
    let stream = build_stream(spec);
    let n_groups = spec.keys.max(1) as usize;

    let tiers: Vec<(String, TierConfig, AggKind, AggInput)> = match kernel {
        "count" => vec![
            ("naive", TierConfig::naive()),
            (
                "predicated",
                TierConfig { count_tier: CountTier::Predicated, ..TierConfig::default() },
            ),
            ("swar", TierConfig::default()),
        ]
        .into_iter()
        .map(|(name, mut t)| {
            t.buffered = buffered;
            (name.to_string(), t, AggKind::Count, AggInput::Unit)
        })
        .collect(),
        "sum" => vec![
            ("naive", TierConfig::naive()),
            ("cascading", TierConfig { sum_tier: SumTier::Cascading, ..TierConfig::default() }),
            ("approx", TierConfig { approx_sum: true, ..TierConfig::default() }),
        ]
        .into_iter()
        .map(|(name, mut t)| {
            t.buffered = buffered;
            (name.to_string(), t, AggKind::Sum, AggInput::Int)
        })
        .collect(),
        "minmax" => vec![
            ("naive", TierConfig::naive()),
            ("pruned", TierConfig::default()),
        ]
        .into_iter()
        .map(|(name, mut t)| {
            t.buffered = buffered;
            (name.to_string(), t, AggKind::Max, AggInput::Int)
        })
        .collect(),
        other => panic!("unknown bench kernel `{other}` (count | sum | minmax)"),
    };

    tiers
        .into_iter()
        .map(|(tier, config, kind, input)| {
            let ns = time_tier(&stream, rows, n_groups, threads, &move || {
                Accumulator::new(kind, input, &config)
            });
            BenchResult {
                kernel: kernel.to_string(),
                tier,
                distribution: spec.name.to_string(),
                rows,
                groups: spec.keys.max(1),
                ns_per_row: ns,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::DistName;

    #[test]
    fn bench_produces_one_row_per_tier() {
        let spec = DistributionSpec::new(DistName::UniformInt, 10_000, 1);
        let rows = run_bench("count", &spec, 50_000, 2, false);
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert!(r.ns_per_row > 0.0);
            assert!(r.to_csv_row().starts_with("count,"));
        }
    }
}
