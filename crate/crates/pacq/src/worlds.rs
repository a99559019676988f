//! World-vector arithmetic and the privacy layer.
//!
//! A [`WorldVector`] holds one aggregate value per possible world plus a
//! presence mask. [`NoiseSession`] owns the per-query secret world index,
//! the Bayesian posterior over worlds, and the seeded RNG; every released
//! cell flows through [`pac_noised`] in a deterministic cell order so the
//! single-pass engine and the 64-fold oracle consume identical randomness.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};
use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeStruct;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::hashing::{PuHash, QuerySalt};
use crate::relcore::{eval_scalar, ScalarExpr, Schema, Value};

pub const WORLDS: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorldsError {
    #[error(
        "suspicious group: {updates} updates landed in only {worlds} worlds; \
         the grouping key is the privacy unit or strongly correlated with it"
    )]
    SuspiciousGroup { updates: u64, worlds: u32 },
}

/// 64 per-world aggregate values plus a presence bitmap. Bit `j` of `mask`
/// is set iff world `j` received at least one contribution; slots with an
/// unset bit are read as zero at noise time.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldVector {
    pub values: [f64; WORLDS],
    pub mask: u64,
}

impl WorldVector {
    pub fn new(values: [f64; WORLDS], mask: u64) -> Self {
        WorldVector { values, mask }
    }

    pub fn empty() -> Self {
        WorldVector { values: [0.0; WORLDS], mask: 0 }
    }

    pub fn slot(&self, j: usize) -> Option<f64> {
        if (self.mask >> j) & 1 == 1 {
            Some(self.values[j])
        } else {
            None
        }
    }
}

impl Serialize for WorldVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("WorldVector", 2)?;
        s.serialize_field("values", &self.values[..])?;
        s.serialize_field("mask", &self.mask)?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for WorldVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            values: Vec<f64>,
            mask: u64,
        }
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Raw;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("world vector")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Raw, A::Error> {
                let values: Vec<f64> =
                    seq.next_element()?.ok_or_else(|| serde::de::Error::custom("values"))?;
                let mask: u64 =
                    seq.next_element()?.ok_or_else(|| serde::de::Error::custom("mask"))?;
                Ok(Raw { values, mask })
            }
            fn visit_map<A: serde::de::MapAccess<'de>>(self, mut map: A) -> Result<Raw, A::Error> {
                let mut values = None;
                let mut mask = None;
                while let Some(key) = map.next_key::<String>()? {
                    match key.as_str() {
                        "values" => values = Some(map.next_value()?),
                        "mask" => mask = Some(map.next_value()?),
                        _ => {
                            map.next_value::<serde::de::IgnoredAny>()?;
                        }
                    }
                }
                Ok(Raw {
                    values: values.ok_or_else(|| serde::de::Error::custom("missing values"))?,
                    mask: mask.ok_or_else(|| serde::de::Error::custom("missing mask"))?,
                })
            }
        }
        let raw = deserializer.deserialize_struct("WorldVector", &["values", "mask"], V)?;
        if raw.values.len() != WORLDS {
            return Err(serde::de::Error::custom("world vector must have 64 slots"));
        }
        let mut values = [0.0; WORLDS];
        values.copy_from_slice(&raw.values);
        Ok(WorldVector { values, mask: raw.mask })
    }
}

/// Persistent noising state for one query: the secret world index `j*`, the
/// posterior over worlds, the per-cell MI budget, and the seeded RNG.
///
/// Strictly single-owner and sequential: the Bayesian update makes noising
/// order-dependent by construction, so there is exactly one noising pass in
/// deterministic cell order.
#[derive(Debug, Clone)]
pub struct NoiseSession {
    pub j_star: usize,
    pub posterior: [f64; WORLDS],
    pub budget: f64,
    pub cells_released: u64,
    pub noise_enabled: bool,
    pub salt: QuerySalt,
    rng: ChaCha12Rng,
}

impl NoiseSession {
    /// Derives salt and `j*` from the seed, in that order, so equal seeds
    /// give byte-equal runs.
    pub fn new(seed: u64, budget: f64, noise_enabled: bool) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let salt = QuerySalt(rng.next_u64());
        let j_star = (rng.next_u64() % WORLDS as u64) as usize;
        NoiseSession {
            j_star,
            posterior: [1.0 / WORLDS as f64; WORLDS],
            budget,
            cells_released: 0,
            noise_enabled,
            salt,
            rng,
        }
    }

    /// Uniform draw in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Total mutual information spent so far; releases compose linearly.
    pub fn total_mi(&self) -> f64 {
        self.cells_released as f64 * self.budget
    }

    pub fn posterior_sum(&self) -> f64 {
        self.posterior.iter().sum()
    }
}

/// Releases one cell from a world vector.
///
/// With probability `(64 - popcount(mask)) / 64` the release is NULL and the
/// posterior is untouched. Otherwise the scaled world values are noised with
/// a Gaussian calibrated to their variance under the current posterior
/// (`delta = s^2 / 2B`), and the posterior receives a Bayesian update. The
/// NULL test consumes its uniform draw whether or not NULL occurs, and the
/// Gaussian uses a single inverse-CDF draw, keeping the engine and oracle
/// RNG streams aligned.
pub fn pac_noised(v: &WorldVector, session: &mut NoiseSession, scale: f64) -> Value {
    debug_assert!(scale == 1.0 || scale == 2.0);
    let absent = (WORLDS as u32 - v.mask.count_ones()) as f64;

    if !session.noise_enabled {
        // Diagnostics mode: release the secret world's value exactly.
        if v.mask == 0 {
            return Value::Null;
        }
        session.cells_released += 1;
        let y = if v.bit(session.j_star) { v.values[session.j_star] } else { 0.0 };
        return Value::Float64(scale * y);
    }

    let u_null = session.uniform();
    if u_null * (WORLDS as f64) < absent {
        return Value::Null;
    }

    let mut y = [0.0f64; WORLDS];
    for (j, slot) in y.iter_mut().enumerate() {
        if (v.mask >> j) & 1 == 1 {
            *slot = scale * v.values[j];
        }
    }

    let mut mean = 0.0;
    let mut sq = 0.0;
    for j in 0..WORLDS {
        mean += session.posterior[j] * y[j];
        sq += session.posterior[j] * y[j] * y[j];
    }
    let s2 = (sq - mean * mean).max(0.0);
    session.cells_released += 1;

    if s2 == 0.0 {
        // All worlds agree; the likelihood update is undefined at delta = 0,
        // so release the exact value and leave the posterior alone.
        return Value::Float64(y[session.j_star]);
    }

    let delta = s2 / (2.0 * session.budget);
    let z = inv_normal_cdf(session.uniform());
    let released = y[session.j_star] + z * delta.sqrt();

    // Bayesian update, shifted by the max exponent to avoid underflow.
    let mut exps = [0.0f64; WORLDS];
    let mut max_e = f64::NEG_INFINITY;
    for j in 0..WORLDS {
        let d = released - y[j];
        exps[j] = -(d * d) / (2.0 * delta);
        if exps[j] > max_e {
            max_e = exps[j];
        }
    }
    let mut sum = 0.0;
    for j in 0..WORLDS {
        session.posterior[j] *= (exps[j] - max_e).exp();
        sum += session.posterior[j];
    }
    for p in session.posterior.iter_mut() {
        *p /= sum;
    }

    Value::Float64(released)
}

impl WorldVector {
    fn bit(&self, j: usize) -> bool {
        (self.mask >> j) & 1 == 1
    }
}

/// Probabilistic boolean: true with probability `popcount(bits) / 64`.
/// Popcounts 0 and 64 are exact; one uniform draw is always consumed.
pub fn pac_filter(bits: u64, session: &mut NoiseSession) -> bool {
    let u = session.uniform();
    u * (WORLDS as f64) < bits.count_ones() as f64
}

/// Restricts world membership by a per-world predicate outcome.
pub fn pac_select(pu: PuHash, bits: u64) -> PuHash {
    PuHash(pu.0 & bits)
}

/// One input column of a lifted expression: either a 64-world vector or a
/// scalar broadcast to all worlds.
#[derive(Debug, Clone)]
pub enum LiftInput<'a> {
    Vector(&'a WorldVector),
    Scalar(Value),
}

fn lift_row(inputs: &[LiftInput<'_>], j: usize, row: &mut Vec<Value>) {
    row.clear();
    for input in inputs {
        row.push(match input {
            LiftInput::Vector(v) => match v.slot(j) {
                Some(x) => Value::Float64(x),
                None => Value::Null,
            },
            LiftInput::Scalar(v) => v.clone(),
        });
    }
}

fn combined_mask(inputs: &[LiftInput<'_>]) -> u64 {
    let mut mask = u64::MAX;
    for input in inputs {
        if let LiftInput::Vector(v) = input {
            mask &= v.mask;
        }
    }
    mask
}

/// Pointwise extension of a scalar expression across the 64 world slots.
/// Slot `j` evaluates `expr` with every vector input replaced by its slot
/// `j`; the output mask is the AND of the input masks, further cleared where
/// the expression evaluates to NULL.
pub fn vector_lift(expr: &ScalarExpr, schema: &Schema, inputs: &[LiftInput<'_>]) -> WorldVector {
    debug_assert_eq!(schema.len(), inputs.len());
    let mut out = WorldVector::empty();
    let base = combined_mask(inputs);
    let mut row = Vec::with_capacity(inputs.len());
    for j in 0..WORLDS {
        if (base >> j) & 1 == 0 {
            continue;
        }
        lift_row(inputs, j, &mut row);
        if let Some(x) = eval_scalar(expr, schema, &row).as_f64() {
            out.values[j] = x;
            out.mask |= 1 << j;
        }
    }
    out
}

/// Lifts a boolean predicate into a 64-bit outcome vector. Worlds where any
/// input is absent, or where the predicate evaluates to NULL or false, get
/// a zero bit.
pub fn lift_predicate(expr: &ScalarExpr, schema: &Schema, inputs: &[LiftInput<'_>]) -> u64 {
    debug_assert_eq!(schema.len(), inputs.len());
    let mut bits = 0u64;
    let base = combined_mask(inputs);
    let mut row = Vec::with_capacity(inputs.len());
    for j in 0..WORLDS {
        if (base >> j) & 1 == 0 {
            continue;
        }
        lift_row(inputs, j, &mut row);
        if eval_scalar(expr, schema, &row) == Value::Boolean(true) {
            bits |= 1 << j;
        }
    }
    bits
}

/// Aborts groups that were updated many times yet landed in barely more
/// than 32 worlds — the signature of grouping by the PU key itself. The
/// thresholds never fire on legitimately tiny groups.
pub fn diversity_check(update_count: u64, mask: u64) -> Result<(), WorldsError> {
    let worlds = mask.count_ones();
    if update_count >= 64 && worlds <= 34 {
        Err(WorldsError::SuspiciousGroup { updates: update_count, worlds })
    } else {
        Ok(())
    }
}

/// Membership-inference bound query: adversary prior and accumulated MI.
#[derive(Debug, Clone, Copy)]
pub struct MiaBoundQuery {
    pub prior: f64,
    pub total_mi: f64,
}

impl MiaBoundQuery {
    pub fn new(prior: f64, total_mi: f64) -> Option<Self> {
        if prior > 0.0 && prior < 1.0 && total_mi >= 0.0 {
            Some(MiaBoundQuery { prior, total_mi })
        } else {
            None
        }
    }
}

fn binary_kl(a: f64, b: f64) -> f64 {
    // a ln(a/b) + (1-a) ln((1-a)/(1-b)), continuous at the endpoints
    let mut kl = 0.0;
    if a > 0.0 {
        kl += a * (a / b).ln();
    }
    if a < 1.0 {
        kl += (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln();
    }
    kl
}

/// Largest posterior success rate `p in [prior, 1)` with
/// `KL(p || prior) <= total_mi`, found by bisection to 1e-9.
pub fn mia_bound(q: MiaBoundQuery) -> f64 {
    let MiaBoundQuery { prior, total_mi } = q;
    if total_mi <= 0.0 {
        return prior;
    }
    // KL(p || prior) increases from 0 to ln(1/prior) as p goes to 1.
    if total_mi >= -prior.ln() {
        return 1.0;
    }
    let mut lo = prior;
    let mut hi = 1.0 - f64::EPSILON;
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if binary_kl(mid, prior) <= total_mi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Inverse standard normal CDF (Wichura's PPND16 rational approximation).
/// One uniform in, one normal out — no rejection, so engine and oracle stay
/// draw-for-draw aligned.
pub fn inv_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 8] = [
        3.387_132_872_796_366_6,
        133.141_667_891_784_38,
        1_971.590_950_306_551_3,
        13_731.693_765_509_461,
        45_921.953_931_549_87,
        67_265.770_927_008_7,
        33_430.575_583_588_13,
        2_509.080_928_730_122_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_91,
        687.187_007_492_057_9,
        5_394.196_021_424_751,
        21_213.794_301_586_597,
        39_307.895_800_092_71,
        28_729.085_735_721_943,
        5_226.495_278_852_854_5,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_545,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        0.241_780_725_177_450_62,
        0.022_723_844_989_269_184,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_8,
        1.676_384_830_183_803_8,
        0.689_767_334_985_100_1,
        0.148_103_976_427_480_08,
        0.015_198_666_563_616_457,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        0.296_560_571_828_504_87,
        0.026_532_189_526_576_124,
        0.001_242_660_947_388_078_4,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_887_9,
        0.136_929_880_922_735_8,
        0.014_875_361_290_850_615,
        7.868_691_311_456_132_5e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];

    fn horner(c: &[f64; 8], r: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * r + k)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        q * horner(&A, r) / horner(&B, r)
    } else {
        let r = if q < 0.0 { p } else { 1.0 - p };
        let mut r = (-r.ln()).sqrt();
        let val = if r <= 5.0 {
            r -= 1.6;
            horner(&C, r) / horner(&D, r)
        } else {
            r -= 5.0;
            horner(&E, r) / horner(&F, r)
        };
        if q < 0.0 {
            -val
        } else {
            val
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relcore::BinaryOp;

    fn full_vec(values: [f64; WORLDS]) -> WorldVector {
        WorldVector::new(values, u64::MAX)
    }

    #[test]
    fn noised_constant_vector_released_exactly() {
        let v = full_vec([42.5; WORLDS]);
        let mut s = NoiseSession::new(7, 1.0 / 128.0, true);
        assert_eq!(pac_noised(&v, &mut s, 1.0), Value::Float64(42.5));
        // zero-variance path skips the posterior update
        assert_eq!(s.posterior, [1.0 / WORLDS as f64; WORLDS]);
    }

    #[test]
    fn empty_mask_is_always_null() {
        let v = WorldVector::empty();
        for seed in 0..32 {
            let mut s = NoiseSession::new(seed, 1.0 / 128.0, true);
            assert_eq!(pac_noised(&v, &mut s, 2.0), Value::Null);
        }
    }

    #[test]
    fn count_release_is_doubled_world_value_plus_noise() {
        let mut values = [0.0; WORLDS];
        for (j, v) in values.iter_mut().enumerate() {
            *v = 100.0 + j as f64;
        }
        let v = full_vec(values);
        let mut s = NoiseSession::new(3, 1.0 / 128.0, true);
        let j = s.j_star;
        let released = match pac_noised(&v, &mut s, 2.0) {
            Value::Float64(x) => x,
            other => panic!("expected numeric release, got {other:?}"),
        };
        // noise std here is sqrt(Var*64) with Var ~ 4*337 => std ~ 294
        assert!((released - 2.0 * values[j]).abs() < 2000.0);
        assert!(s.cells_released == 1);
    }

    #[test]
    fn noise_std_matches_calibration() {
        // Empirical std over 10^4 fresh-posterior releases within 3% of
        // sqrt(Var_P[scale*y] / (2B)).
        let mut values = [0.0; WORLDS];
        let mut seed_mix = 0x9e3779b97f4a7c15u64;
        for v in values.iter_mut() {
            seed_mix = crate::hashing::mix64(seed_mix);
            *v = (seed_mix % 1000) as f64;
        }
        let v = full_vec(values);
        let budget = 1.0 / 128.0;
        let scale = 2.0;

        let mean_y: f64 = values.iter().map(|y| scale * y).sum::<f64>() / WORLDS as f64;
        let var_p: f64 = values
            .iter()
            .map(|y| {
                let d = scale * y - mean_y;
                d * d
            })
            .sum::<f64>()
            / WORLDS as f64;
        let expect_std = (var_p / (2.0 * budget)).sqrt();

        let n = 10_000;
        let mut errs = Vec::with_capacity(n);
        for seed in 0..n as u64 {
            let mut s = NoiseSession::new(seed, budget, true);
            let js = s.j_star;
            if let Value::Float64(x) = pac_noised(&v, &mut s, scale) {
                errs.push(x - scale * values[js]);
            }
        }
        let m = errs.iter().sum::<f64>() / errs.len() as f64;
        let sd =
            (errs.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / errs.len() as f64).sqrt();
        assert!(
            (sd - expect_std).abs() / expect_std < 0.03,
            "std {sd} vs expected {expect_std}"
        );
    }

    #[test]
    fn posterior_stays_normalized_over_sequential_releases() {
        let mut values = [0.0; WORLDS];
        for (j, v) in values.iter_mut().enumerate() {
            *v = (j * j) as f64;
        }
        let v = full_vec(values);
        let mut s = NoiseSession::new(11, 1.0 / 128.0, true);
        for _ in 0..100 {
            pac_noised(&v, &mut s, 1.0);
        }
        assert!((s.posterior_sum() - 1.0).abs() < 1e-12);
        assert!(s.posterior.iter().all(|p| *p >= 0.0));
        assert_eq!(s.total_mi(), 100.0 * s.budget);
    }

    #[test]
    fn pac_filter_extremes_and_midpoint() {
        let mut s = NoiseSession::new(5, 1.0, true);
        for _ in 0..100 {
            assert!(pac_filter(u64::MAX, &mut s));
            assert!(!pac_filter(0, &mut s));
        }
        let mut accepted = 0u32;
        let trials = 100_000;
        for _ in 0..trials {
            if pac_filter(0x0000_ffff_ffff_0000, &mut s) {
                accepted += 1;
            }
        }
        let rate = accepted as f64 / trials as f64;
        assert!((0.49..=0.51).contains(&rate), "acceptance {rate}");
    }

    #[test]
    fn pac_select_truth_table() {
        assert_eq!(pac_select(PuHash(0b0101), u64::MAX).0, 0b0101);
        assert_eq!(pac_select(PuHash(0b0101), 0).0, 0);
        assert_eq!(pac_select(PuHash(0b0101), 0b0011).0, 0b0001);
    }

    #[test]
    fn vector_lift_matches_scalar_oracle() {
        // ratio of two vectors, brute-forced 64 times scalarly
        let mut a = WorldVector::empty();
        let mut b = WorldVector::empty();
        for j in 0..WORLDS {
            a.values[j] = (j as f64) + 1.0;
            b.values[j] = (j as f64) * 2.0 + 1.0;
        }
        a.mask = u64::MAX & !(1 << 7);
        b.mask = u64::MAX & !(1 << 9);

        let schema = Schema::new(vec![
            Schema::col("x", crate::relcore::ValueType::VectorF64),
            Schema::col("y", crate::relcore::ValueType::VectorF64),
        ])
        .unwrap();
        let expr =
            ScalarExpr::binary(BinaryOp::Div, ScalarExpr::col("x"), ScalarExpr::col("y"));
        let lifted = vector_lift(&expr, &schema, &[LiftInput::Vector(&a), LiftInput::Vector(&b)]);

        for j in 0..WORLDS {
            let expect = match (a.slot(j), b.slot(j)) {
                (Some(x), Some(y)) => Some(x / y),
                _ => None,
            };
            assert_eq!(lifted.slot(j), expect, "slot {j}");
        }
        assert_eq!(lifted.mask, a.mask & b.mask);
    }

    #[test]
    fn vector_lift_identity() {
        let mut a = WorldVector::empty();
        for j in 0..WORLDS {
            a.values[j] = j as f64;
        }
        a.mask = 0x0f0f_f0f0_1234_8888;
        let schema =
            Schema::new(vec![Schema::col("x", crate::relcore::ValueType::VectorF64)]).unwrap();
        let lifted = vector_lift(&ScalarExpr::col("x"), &schema, &[LiftInput::Vector(&a)]);
        assert_eq!(lifted.mask, a.mask);
        for j in 0..WORLDS {
            assert_eq!(lifted.slot(j), a.slot(j), "slot {j}");
        }
    }

    #[test]
    fn diversity_thresholds() {
        // 1000 updates all landing in one balanced hash's 32 worlds
        assert!(diversity_check(1000, 0x0000_ffff_ffff_0000).is_err());
        // plenty of updates spanning >= 50 worlds
        assert!(diversity_check(1000, (1u64 << 50) - 1).is_ok());
        // too few updates to judge
        assert!(diversity_check(3, 0x0000_ffff_ffff_0000).is_ok());
        // boundary: 64 updates at 34 worlds fire, 35 worlds do not
        assert!(diversity_check(64, (1u64 << 34) - 1).is_err());
        assert!(diversity_check(64, (1u64 << 35) - 1).is_ok());
    }

    #[test]
    fn mia_bound_examples() {
        let q = MiaBoundQuery::new(0.5, 0.25).unwrap();
        let p = mia_bound(q);
        assert!((0.83..=0.85).contains(&p), "bound {p}");

        // zero MI returns the prior exactly
        for prior in [0.1, 0.5, 0.9] {
            let q = MiaBoundQuery::new(prior, 0.0).unwrap();
            assert!((mia_bound(q) - prior).abs() < 1e-9);
        }

        // At MI = 1/128 the KL inversion gives ~0.5625 (the quadratic
        // expansion KL(p||1/2) ~ 2(p-1/2)^2 puts it at 0.5 + sqrt(MI/2)).
        let q = MiaBoundQuery::new(0.5, 1.0 / 128.0).unwrap();
        let p = mia_bound(q);
        assert!((p - 0.5625).abs() < 2e-3, "bound {p}");
    }

    #[test]
    fn mia_bound_monotone_in_mi() {
        let mut last = 0.5;
        for k in 0..200 {
            let mi = k as f64 * 0.005;
            let p = mia_bound(MiaBoundQuery::new(0.5, mi).unwrap());
            assert!(p >= last - 1e-12, "bound decreased at mi={mi}");
            last = p;
        }
    }

    #[test]
    fn inv_normal_cdf_reference_points() {
        assert!((inv_normal_cdf(0.5)).abs() < 1e-12);
        assert!((inv_normal_cdf(0.975) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((inv_normal_cdf(0.025) + 1.959_963_984_540_054).abs() < 1e-9);
        assert!((inv_normal_cdf(1e-10) + 6.361_340_902_404_056).abs() < 1e-6);
    }

    #[test]
    fn no_noise_mode_releases_secret_world() {
        let mut values = [0.0; WORLDS];
        for (j, v) in values.iter_mut().enumerate() {
            *v = j as f64;
        }
        let v = full_vec(values);
        let mut s = NoiseSession::new(9, 1.0 / 128.0, false);
        let j = s.j_star;
        assert_eq!(pac_noised(&v, &mut s, 2.0), Value::Float64(2.0 * j as f64));
    }
}
