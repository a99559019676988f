//! Deterministic generators: the microbenchmark value distributions and a
//! desk-scale customer/orders/lineitem/part schema with PAC links.

use std::fmt;
use std::str::FromStr;

use crate::hashing::{mix64, pac_hash, QuerySalt};
use crate::relcore::{days_from_civil, Relation, Schema, Value, ValueType};

/// Fixed salt for the (key, hash, val) bench tables, so dumps are stable
/// across runs regardless of the session seed.
pub const BENCH_SALT: QuerySalt = QuerySalt(0x5eed_0fbe_9c4c_afe1);

const DIST_SEED_MARK: u64 = 0x0d15_7a11_5eed_0001;
const MINI_SEED_MARK: u64 = 0x0317_9c45_eed2_77c8;

/// splitmix-style generator; generation is a pure function of the seed.
#[derive(Debug, Clone)]
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        mix64(self.0)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistName {
    AllSame,
    Bimodal,
    Exponential,
    NegativeMixed,
    SparseLarge,
    UniformTinyint,
    UniformSmallint,
    UniformInt,
    UniformBigint,
    ZipfLike,
    MonotonicInc,
    MonotonicDec,
}

pub const ALL_DISTRIBUTIONS: [DistName; 12] = [
    DistName::AllSame,
    DistName::Bimodal,
    DistName::Exponential,
    DistName::NegativeMixed,
    DistName::SparseLarge,
    DistName::UniformTinyint,
    DistName::UniformSmallint,
    DistName::UniformInt,
    DistName::UniformBigint,
    DistName::ZipfLike,
    DistName::MonotonicInc,
    DistName::MonotonicDec,
];

impl fmt::Display for DistName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistName::AllSame => "all_same",
            DistName::Bimodal => "bimodal",
            DistName::Exponential => "exponential",
            DistName::NegativeMixed => "negative_mixed",
            DistName::SparseLarge => "sparse_large",
            DistName::UniformTinyint => "uniform_tinyint",
            DistName::UniformSmallint => "uniform_smallint",
            DistName::UniformInt => "uniform_int",
            DistName::UniformBigint => "uniform_bigint",
            DistName::ZipfLike => "zipf_like",
            DistName::MonotonicInc => "monotonic_inc",
            DistName::MonotonicDec => "monotonic_dec",
        })
    }
}

impl FromStr for DistName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_DISTRIBUTIONS
            .iter()
            .find(|d| d.to_string() == s)
            .copied()
            .ok_or_else(|| format!("unknown distribution `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KeyLayout {
    #[default]
    Scattered,
    Consecutive,
}

impl FromStr for KeyLayout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scattered" => Ok(KeyLayout::Scattered),
            "consecutive" => Ok(KeyLayout::Consecutive),
            _ => Err(format!("unknown key layout `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DistributionSpec {
    pub name: DistName,
    pub rows: usize,
    pub seed: u64,
    pub keys: u64,
    pub layout: KeyLayout,
}

impl DistributionSpec {
    pub fn new(name: DistName, rows: usize, seed: u64) -> Self {
        DistributionSpec { name, rows, seed, keys: 1, layout: KeyLayout::Scattered }
    }
}

/// Value stream for one distribution.
//
// Parameter choices (the published table names the distributions but not
// their parameters):
//   all_same           42
//   bimodal            halves at ~1e3 and ~1e6, +-10%
//   exponential        round(-ln(u) * 1e4)
//   negative_mixed     pairs (+m, -m+eps), m in [1, 1e6], eps in [-50, 50]
//   sparse_large       99% zeros, 1% in [1e9, 1e12]
//   uniform_tinyint    [0, 100]
//   uniform_smallint   [0, 1e4]
//   uniform_int        [0, 1e5]
//   uniform_bigint     [0, 1e6]
//   zipf_like          floor(1e6 / rank), rank in [1, 1e4]
//   monotonic_inc/dec  i+1 / n-i (strict, the pruning-adversarial cases)
pub fn generate_values(spec: &DistributionSpec) -> Vec<i64> {
    let mut rng = SplitMix(spec.seed ^ DIST_SEED_MARK);
    let n = spec.rows;
    let mut out = Vec::with_capacity(n);
    match spec.name {
        DistName::AllSame => out.resize(n, 42),
        DistName::Bimodal => {
            for _ in 0..n {
                let v = if rng.next_u64() & 1 == 0 {
                    900 + rng.below(201) as i64
                } else {
                    900_000 + rng.below(200_001) as i64
                };
                out.push(v);
            }
        }
        DistName::Exponential => {
            for _ in 0..n {
                let u = rng.next_f64().max(1e-18);
                out.push((-u.ln() * 10_000.0).round() as i64);
            }
        }
        DistName::NegativeMixed => {
            let mut m = 0i64;
            for i in 0..n {
                if i % 2 == 0 {
                    m = 1 + rng.below(1_000_000) as i64;
                    out.push(m);
                } else {
                    let eps = rng.below(101) as i64 - 50;
                    out.push(-m + eps);
                }
            }
        }
        DistName::SparseLarge => {
            for _ in 0..n {
                let v = if rng.below(100) == 0 {
                    1_000_000_000 + (rng.below(999_000_000_000)) as i64
                } else {
                    0
                };
                out.push(v);
            }
        }
        DistName::UniformTinyint => (0..n).for_each(|_| out.push(rng.below(101) as i64)),
        DistName::UniformSmallint => (0..n).for_each(|_| out.push(rng.below(10_001) as i64)),
        DistName::UniformInt => (0..n).for_each(|_| out.push(rng.below(100_001) as i64)),
        DistName::UniformBigint => (0..n).for_each(|_| out.push(rng.below(1_000_001) as i64)),
        DistName::ZipfLike => {
            for _ in 0..n {
                let rank = 1 + rng.below(10_000);
                out.push((1_000_000 / rank) as i64);
            }
        }
        DistName::MonotonicInc => (0..n).for_each(|i| out.push(i as i64 + 1)),
        DistName::MonotonicDec => (0..n).for_each(|i| out.push(n as i64 - i as i64)),
    }
    out
}

pub fn generate_keys(spec: &DistributionSpec) -> Vec<i64> {
    let mut rng = SplitMix(spec.seed ^ 0x6e79_5eed);
    let keys = spec.keys.max(1);
    match spec.layout {
        KeyLayout::Scattered => (0..spec.rows).map(|_| rng.below(keys) as i64).collect(),
        KeyLayout::Consecutive => {
            let block = spec.rows.div_ceil(keys as usize).max(1);
            (0..spec.rows).map(|i| (i / block) as i64).collect()
        }
    }
}

/// (key, hash, val) relation; hash is the balanced PU hash of the key under
/// the fixed bench salt.
pub fn generate(spec: &DistributionSpec) -> Relation {
    let keys = generate_keys(spec);
    let vals = generate_values(spec);
    let mut rel = Relation::empty(bench_schema());
    rel.columns[0] = keys.iter().map(|&k| Value::Int64(k)).collect();
    rel.columns[1] = keys
        .iter()
        .map(|&k| Value::Hash(pac_hash(&[Value::Int64(k)], BENCH_SALT).unwrap().0))
        .collect();
    rel.columns[2] = vals.into_iter().map(Value::Int64).collect();
    rel
}

pub fn bench_schema() -> Schema {
    Schema::new(vec![
        Schema::col("key", ValueType::Int64),
        Schema::col("hash", ValueType::Hash),
        Schema::col("val", ValueType::Int64),
    ])
    .unwrap()
}

/// Mini analytical schema with the customer <- orders <- lineitem PAC chain
/// and an unlinked part table.
#[derive(Debug, Clone)]
pub struct MiniDb {
    pub customer: Relation,
    pub orders: Relation,
    pub lineitem: Relation,
    pub part: Relation,
}

impl MiniDb {
    pub fn tables(&self) -> [(&'static str, &Relation); 4] {
        [
            ("customer", &self.customer),
            ("orders", &self.orders),
            ("lineitem", &self.lineitem),
            ("part", &self.part),
        ]
    }
}

/// Privacy DDL for the mini schema, in the dialect the catalog loads.
pub const MINI_SCHEMA_DDL: &str = "\
CREATE PU TABLE customer (
    c_custkey BIGINT,
    c_name VARCHAR,
    c_acctbal DOUBLE,
    c_mktsegment VARCHAR,
    c_nationkey BIGINT,
    PAC_KEY (c_custkey),
    PROTECTED (c_name, c_acctbal)
);

CREATE TABLE orders (
    o_orderkey BIGINT,
    o_custkey BIGINT,
    o_orderdate DATE,
    o_totalprice DOUBLE,
    o_orderstatus VARCHAR,
    PAC_LINK (o_custkey) REFERENCES customer (c_custkey)
);

CREATE TABLE lineitem (
    l_orderkey BIGINT,
    l_linenumber BIGINT,
    l_partkey BIGINT,
    l_quantity BIGINT,
    l_extendedprice DOUBLE,
    l_discount DOUBLE,
    l_tax DOUBLE,
    l_returnflag VARCHAR,
    l_linestatus VARCHAR,
    l_shipdate DATE,
    PAC_LINK (l_orderkey) REFERENCES orders (o_orderkey)
);

CREATE TABLE part (
    p_partkey BIGINT,
    p_name VARCHAR,
    p_brand VARCHAR,
    p_container VARCHAR,
    p_retailprice DOUBLE
);
";

/// FK-consistent mini database. `scale_rows` is the lineitem row count;
/// customer:orders:lineitem sizes keep a ~1:10:40 ratio.
pub fn generate_mini_tpch(scale_rows: usize, seed: u64) -> MiniDb {
    assert!(scale_rows >= 100, "mini schema needs at least 100 lineitem rows");
    let n_line = scale_rows;
    let n_orders = (scale_rows / 4).max(1);
    let n_cust = (scale_rows / 40).max(1);
    let n_part = (scale_rows / 20).max(1);
    let mut rng = SplitMix(seed ^ MINI_SEED_MARK);

    let segments = ["AUTOMOBILE", "BUILDING", "FURNITURE", "HOUSEHOLD", "MACHINERY"];
    let mut customer = Relation::empty(
        Schema::new(vec![
            Schema::col("c_custkey", ValueType::Int64),
            Schema::col("c_name", ValueType::Text),
            Schema::col("c_acctbal", ValueType::Float64),
            Schema::col("c_mktsegment", ValueType::Text),
            Schema::col("c_nationkey", ValueType::Int64),
        ])
        .unwrap(),
    );
    for k in 1..=n_cust as i64 {
        customer.push_row(vec![
            Value::Int64(k),
            Value::Text(format!("Customer#{k:09}")),
            Value::Float64((rng.below(1_099_900) as f64 / 100.0) - 999.99),
            Value::Text(segments[rng.below(5) as usize].to_string()),
            Value::Int64(rng.below(25) as i64),
        ]);
    }

    let statuses = ["F", "O", "P"];
    let epoch_1995 = days_from_civil(1995, 1, 1) as i32;
    let mut orders = Relation::empty(
        Schema::new(vec![
            Schema::col("o_orderkey", ValueType::Int64),
            Schema::col("o_custkey", ValueType::Int64),
            Schema::col("o_orderdate", ValueType::Date),
            Schema::col("o_totalprice", ValueType::Float64),
            Schema::col("o_orderstatus", ValueType::Text),
        ])
        .unwrap(),
    );
    for k in 1..=n_orders as i64 {
        orders.push_row(vec![
            Value::Int64(k),
            Value::Int64(1 + rng.below(n_cust as u64) as i64),
            Value::Date(epoch_1995 + rng.below(1310) as i32),
            Value::Float64(900.0 + rng.below(450_000) as f64 / 100.0),
            Value::Text(statuses[rng.below(3) as usize].to_string()),
        ]);
    }

    let brands = ["BRAND#1", "BRAND#2", "BRAND#3", "BRAND#4", "BRAND#5"];
    let containers = ["SM BOX", "SM CASE", "MED BOX", "MED CASE", "LG BOX", "LG CASE", "JUMBO"];
    let mut part = Relation::empty(
        Schema::new(vec![
            Schema::col("p_partkey", ValueType::Int64),
            Schema::col("p_name", ValueType::Text),
            Schema::col("p_brand", ValueType::Text),
            Schema::col("p_container", ValueType::Text),
            Schema::col("p_retailprice", ValueType::Float64),
        ])
        .unwrap(),
    );
    for k in 1..=n_part as i64 {
        part.push_row(vec![
            Value::Int64(k),
            Value::Text(format!("part {k}")),
            Value::Text(brands[rng.below(5) as usize].to_string()),
            Value::Text(containers[rng.below(7) as usize].to_string()),
            Value::Float64(900.0 + rng.below(20_000) as f64 / 100.0),
        ]);
    }

    let flags = ["A", "R"];
    let line_statuses = ["F", "O"];
    let mut lineitem = Relation::empty(
        Schema::new(vec![
            Schema::col("l_orderkey", ValueType::Int64),
            Schema::col("l_linenumber", ValueType::Int64),
            Schema::col("l_partkey", ValueType::Int64),
            Schema::col("l_quantity", ValueType::Int64),
            Schema::col("l_extendedprice", ValueType::Float64),
            Schema::col("l_discount", ValueType::Float64),
            Schema::col("l_tax", ValueType::Float64),
            Schema::col("l_returnflag", ValueType::Text),
            Schema::col("l_linestatus", ValueType::Text),
            Schema::col("l_shipdate", ValueType::Date),
        ])
        .unwrap(),
    );
    // fetch order dates once so shipdates stay after their order date
    let odate_col = orders.schema.index_of("o_orderdate").unwrap();
    for i in 0..n_line {
        let orderkey = (i % n_orders) as i64 + 1;
        let odate = match orders.columns[odate_col][(orderkey - 1) as usize] {
            Value::Date(d) => d,
            _ => unreachable!(),
        };
        let quantity = 1 + rng.below(50) as i64;
        let unit_price = 900.0 + rng.below(20_000) as f64 / 100.0;
        lineitem.push_row(vec![
            Value::Int64(orderkey),
            Value::Int64((i / n_orders) as i64 + 1),
            Value::Int64(1 + rng.below(n_part as u64) as i64),
            Value::Int64(quantity),
            Value::Float64((quantity as f64 * unit_price * 100.0).round() / 100.0),
            Value::Float64(rng.below(11) as f64 / 100.0),
            if rng.below(50) == 0 {
                Value::Null
            } else {
                Value::Float64(rng.below(9) as f64 / 100.0)
            },
            Value::Text(flags[rng.below(2) as usize].to_string()),
            Value::Text(line_statuses[rng.below(2) as usize].to_string()),
            Value::Date(odate + 1 + rng.below(121) as i32),
        ]);
    }

    MiniDb { customer, orders, lineitem, part }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn generators_are_seed_deterministic() {
        for name in ALL_DISTRIBUTIONS {
            let spec = DistributionSpec::new(name, 500, 7);
            assert_eq!(generate(&spec), generate(&spec), "{name}");
        }
        let a = generate_mini_tpch(200, 3);
        let b = generate_mini_tpch(200, 3);
        assert_eq!(a.lineitem, b.lineitem);
    }

    #[test]
    fn all_same_and_monotone_shapes() {
        let all = generate_values(&DistributionSpec::new(DistName::AllSame, 100, 1));
        assert!(all.iter().all(|&v| v == 42));
        let inc = generate_values(&DistributionSpec::new(DistName::MonotonicInc, 100, 1));
        assert!(inc.windows(2).all(|w| w[0] < w[1]));
        let dec = generate_values(&DistributionSpec::new(DistName::MonotonicDec, 100, 1));
        assert!(dec.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn negative_mixed_cancels_by_construction() {
        let vals = generate_values(&DistributionSpec::new(DistName::NegativeMixed, 100_000, 3));
        let total: i128 = vals.iter().map(|&v| v as i128).sum();
        let abs: i128 = vals.iter().map(|&v| (v as i128).abs()).sum();
        let ratio = total.unsigned_abs() as f64 / abs as f64;
        assert!(ratio <= 0.05, "|sum|/sum|v| = {ratio}");
    }

    #[test]
    fn mini_schema_is_referentially_closed() {
        let db = generate_mini_tpch(2000, 11);
        let custkeys: HashSet<i64> = db.customer.columns[0]
            .iter()
            .map(|v| v.as_i64().unwrap())
            .collect();
        for v in &db.orders.columns[1] {
            assert!(custkeys.contains(&v.as_i64().unwrap()));
        }
        let orderkeys: HashSet<i64> =
            db.orders.columns[0].iter().map(|v| v.as_i64().unwrap()).collect();
        for v in &db.lineitem.columns[0] {
            assert!(orderkeys.contains(&v.as_i64().unwrap()));
        }
        // row-count ratios ~ 1 : 10 : 40
        assert_eq!(db.lineitem.row_count(), 2000);
        assert_eq!(db.orders.row_count(), 500);
        assert_eq!(db.customer.row_count(), 50);
    }

    #[test]
    fn pac_hash_column_is_balanced() {
        let rel = generate(&DistributionSpec::new(DistName::UniformInt, 200, 5));
        for v in &rel.columns[1] {
            match v {
                Value::Hash(h) => assert_eq!(h.count_ones(), 32),
                _ => panic!("expected hash column"),
            }
        }
    }
}
