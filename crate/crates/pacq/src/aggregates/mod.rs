//! Single-pass 64-world stochastic aggregate kernels.
//!
//! Every kernel implements the same update/combine/finalize contract: slot
//! `j` folds the values of rows whose PU hash has bit `j` set, a presence
//! mask records which worlds saw contributions, and finalization yields a
//! [`WorldVector`] (optionally noised in fused form). The optimization tiers
//! are functionally interchangeable — the naive tier doubles as the ground
//! truth the others are property-tested against.

mod approx;
pub mod bench;
mod count;
mod minmax;
mod sum;

pub use approx::{ApproxSumState, SingleSidedApproxSumState, APPROX_LEVELS};
pub use count::{CountState, CountTier};
pub use minmax::{Extremal, Extreme, MinMaxState};
pub use sum::{FloatSumState, IntSumState, SumTier};

use crate::hashing::PuHash;
use crate::relcore::Value;
use crate::worlds::{diversity_check, pac_noised, NoiseSession, WorldVector, WorldsError};

/// Aggregate function kind as it appears in a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AggKind {
    Count,
    CountStar,
    Sum,
    Avg,
    Min,
    Max,
}

impl AggKind {
    pub fn name(self) -> &'static str {
        match self {
            AggKind::Count => "count",
            AggKind::CountStar => "count_star",
            AggKind::Sum => "sum",
            AggKind::Avg => "avg",
            AggKind::Min => "min",
            AggKind::Max => "max",
        }
    }

    /// Released-scale correction: each world sees half the tuples, so COUNT
    /// and SUM releases are doubled; AVG/MIN/MAX estimate location and are
    /// released as-is.
    pub fn noise_scale(self) -> f64 {
        match self {
            AggKind::Count | AggKind::CountStar | AggKind::Sum => 2.0,
            AggKind::Avg | AggKind::Min | AggKind::Max => 1.0,
        }
    }
}

/// Value domain the kernel folds over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggInput {
    Unit,
    Int,
    Float,
}

/// Kernel tier selection, normally set from the command line.
#[derive(Debug, Clone, Copy)]
pub struct TierConfig {
    pub count_tier: CountTier,
    pub sum_tier: SumTier,
    pub approx_sum: bool,
    pub minmax_pruned: bool,
    pub buffered: bool,
}

impl Default for TierConfig {
    fn default() -> Self {
        TierConfig {
            count_tier: CountTier::SwarCascading,
            sum_tier: SumTier::Cascading,
            approx_sum: false,
            minmax_pruned: true,
            buffered: true,
        }
    }
}

impl TierConfig {
    pub fn naive() -> Self {
        TierConfig {
            count_tier: CountTier::Naive,
            sum_tier: SumTier::Naive,
            approx_sum: false,
            minmax_pruned: false,
            buffered: false,
        }
    }
}

/// One buffered update, stored before the full kernel state exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AggValue {
    Unit,
    Int(i64),
    Float(f64),
}

#[derive(Debug, Clone)]
enum KernelState {
    Count(CountState),
    IntSum(IntSumState),
    ApproxSum(ApproxSumState),
    FloatSum(FloatSumState),
    AvgInt { sum: IntSumState, count: CountState },
    AvgApprox { sum: ApproxSumState, count: CountState },
    AvgFloat { sum: FloatSumState, count: CountState },
    MinMaxInt(MinMaxState<i64>),
    MinMaxFloat(MinMaxState<f64>),
}

impl KernelState {
    fn build(kind: AggKind, input: AggInput, tiers: &TierConfig) -> KernelState {
        match (kind, input) {
            (AggKind::Count | AggKind::CountStar, _) => {
                KernelState::Count(CountState::new(tiers.count_tier))
            }
            (AggKind::Sum, AggInput::Float) => KernelState::FloatSum(FloatSumState::new()),
            (AggKind::Sum, _) => {
                if tiers.approx_sum {
                    KernelState::ApproxSum(ApproxSumState::new())
                } else {
                    KernelState::IntSum(IntSumState::new(tiers.sum_tier))
                }
            }
            (AggKind::Avg, AggInput::Float) => KernelState::AvgFloat {
                sum: FloatSumState::new(),
                count: CountState::new(tiers.count_tier),
            },
            (AggKind::Avg, _) => {
                if tiers.approx_sum {
                    KernelState::AvgApprox {
                        sum: ApproxSumState::new(),
                        count: CountState::new(tiers.count_tier),
                    }
                } else {
                    KernelState::AvgInt {
                        sum: IntSumState::new(tiers.sum_tier),
                        count: CountState::new(tiers.count_tier),
                    }
                }
            }
            (AggKind::Min, AggInput::Float) => {
                KernelState::MinMaxFloat(MinMaxState::new(Extreme::Min, tiers.minmax_pruned))
            }
            (AggKind::Max, AggInput::Float) => {
                KernelState::MinMaxFloat(MinMaxState::new(Extreme::Max, tiers.minmax_pruned))
            }
            (AggKind::Min, _) => {
                KernelState::MinMaxInt(MinMaxState::new(Extreme::Min, tiers.minmax_pruned))
            }
            (AggKind::Max, _) => {
                KernelState::MinMaxInt(MinMaxState::new(Extreme::Max, tiers.minmax_pruned))
            }
        }
    }

    #[inline]
    fn update(&mut self, pu: PuHash, v: AggValue) {
        match (self, v) {
            (KernelState::Count(s), _) => s.update(pu),
            (KernelState::IntSum(s), AggValue::Int(x)) => s.update(pu, x),
            (KernelState::ApproxSum(s), AggValue::Int(x)) => s.update(pu, x),
            (KernelState::FloatSum(s), AggValue::Float(x)) => s.update(pu, x),
            (KernelState::FloatSum(s), AggValue::Int(x)) => s.update(pu, x as f64),
            (KernelState::AvgInt { sum, count }, AggValue::Int(x)) => {
                sum.update(pu, x);
                count.update(pu);
            }
            (KernelState::AvgApprox { sum, count }, AggValue::Int(x)) => {
                sum.update(pu, x);
                count.update(pu);
            }
            (KernelState::AvgFloat { sum, count }, AggValue::Float(x)) => {
                sum.update(pu, x);
                count.update(pu);
            }
            (KernelState::AvgFloat { sum, count }, AggValue::Int(x)) => {
                sum.update(pu, x as f64);
                count.update(pu);
            }
            (KernelState::MinMaxInt(s), AggValue::Int(x)) => s.update(pu, x),
            (KernelState::MinMaxFloat(s), AggValue::Float(x)) => s.update(pu, x),
            (KernelState::MinMaxFloat(s), AggValue::Int(x)) => s.update(pu, x as f64),
            (state, v) => {
                debug_assert!(false, "aggregate input mismatch: {state:?} vs {v:?}");
            }
        }
    }

    fn combine(&mut self, other: KernelState) {
        match (self, other) {
            (KernelState::Count(a), KernelState::Count(b)) => a.combine(b),
            (KernelState::IntSum(a), KernelState::IntSum(b)) => a.combine(b),
            (KernelState::ApproxSum(a), KernelState::ApproxSum(b)) => a.combine(b),
            (KernelState::FloatSum(a), KernelState::FloatSum(b)) => a.combine(b),
            (
                KernelState::AvgInt { sum: s1, count: c1 },
                KernelState::AvgInt { sum: s2, count: c2 },
            ) => {
                s1.combine(s2);
                c1.combine(c2);
            }
            (
                KernelState::AvgApprox { sum: s1, count: c1 },
                KernelState::AvgApprox { sum: s2, count: c2 },
            ) => {
                s1.combine(s2);
                c1.combine(c2);
            }
            (
                KernelState::AvgFloat { sum: s1, count: c1 },
                KernelState::AvgFloat { sum: s2, count: c2 },
            ) => {
                s1.combine(s2);
                c1.combine(c2);
            }
            (KernelState::MinMaxInt(a), KernelState::MinMaxInt(b)) => a.combine(b),
            (KernelState::MinMaxFloat(a), KernelState::MinMaxFloat(b)) => a.combine(b),
            (a, b) => debug_assert!(false, "combining different aggregate kinds: {a:?} vs {b:?}"),
        }
    }

    fn stats(&self) -> (u64, u64) {
        match self {
            KernelState::Count(s) => (s.update_count, s.presence_mask),
            KernelState::IntSum(s) => (s.update_count, s.presence_mask),
            KernelState::ApproxSum(s) => (s.update_count, s.presence_mask),
            KernelState::FloatSum(s) => (s.update_count, s.presence_mask),
            KernelState::AvgInt { sum, .. } => (sum.update_count, sum.presence_mask),
            KernelState::AvgApprox { sum, .. } => (sum.update_count, sum.presence_mask),
            KernelState::AvgFloat { sum, .. } => (sum.update_count, sum.presence_mask),
            KernelState::MinMaxInt(s) => (s.update_count, s.presence_mask),
            KernelState::MinMaxFloat(s) => (s.update_count, s.presence_mask),
        }
    }

    fn raw_vector(&mut self) -> WorldVector {
        match self {
            KernelState::Count(s) => {
                let counters = s.counters();
                let mut values = [0.0; 64];
                for j in 0..64 {
                    values[j] = counters[j] as f64;
                }
                WorldVector::new(values, s.presence_mask)
            }
            KernelState::IntSum(s) => {
                let sums = s.sums();
                let mut values = [0.0; 64];
                for j in 0..64 {
                    values[j] = sums[j] as f64;
                }
                WorldVector::new(values, s.presence_mask)
            }
            KernelState::ApproxSum(s) => WorldVector::new(s.sums(), s.presence_mask),
            KernelState::FloatSum(s) => WorldVector::new(s.sums(), s.presence_mask),
            KernelState::AvgInt { sum, count } => {
                avg_vector(&sum.sums().map(|v| v as f64), &count.counters(), sum.presence_mask)
            }
            KernelState::AvgApprox { sum, count } => {
                avg_vector(&sum.sums(), &count.counters(), sum.presence_mask)
            }
            KernelState::AvgFloat { sum, count } => {
                avg_vector(&sum.sums(), &count.counters(), sum.presence_mask)
            }
            KernelState::MinMaxInt(s) => {
                let (values, mask) = s.slots();
                WorldVector::new(values, mask)
            }
            KernelState::MinMaxFloat(s) => {
                let (values, mask) = s.slots();
                WorldVector::new(values, mask)
            }
        }
    }
}

/// AVG divides each world's sum by that world's own count: every world sees
/// a different row subset, so a global count would skew the slots.
fn avg_vector(sums: &[f64; 64], counts: &[u64; 64], mask: u64) -> WorldVector {
    let mut values = [0.0; 64];
    let mut out_mask = 0u64;
    for j in 0..64 {
        if (mask >> j) & 1 == 1 && counts[j] > 0 {
            values[j] = sums[j] / counts[j] as f64;
            out_mask |= 1 << j;
        }
    }
    WorldVector::new(values, out_mask)
}

const BUFFER_CAP: usize = 3;

/// One aggregate accumulator: a buffered wrapper around a kernel state.
///
/// When buffering is on, the first three `(value, hash)` pairs live inline
/// and the kernel state is only allocated on the fourth update — grouped
/// aggregation over many groups never materializes the ~2KB cascade state
/// for groups that stay tiny.
#[derive(Debug, Clone)]
pub struct Accumulator {
    kind: AggKind,
    input: AggInput,
    tiers: TierConfig,
    buffered: bool,
    buf: [(u64, AggValue); BUFFER_CAP],
    buf_len: u8,
    state: Option<Box<KernelState>>,
}

impl Accumulator {
    pub fn new(kind: AggKind, input: AggInput, tiers: &TierConfig) -> Self {
        Accumulator {
            kind,
            input,
            tiers: *tiers,
            buffered: tiers.buffered,
            buf: [(0, AggValue::Unit); BUFFER_CAP],
            buf_len: 0,
            state: None,
        }
    }

    pub fn kind(&self) -> AggKind {
        self.kind
    }

    fn materialize(&mut self) {
        if self.state.is_none() {
            let mut state = Box::new(KernelState::build(self.kind, self.input, &self.tiers));
            for i in 0..self.buf_len as usize {
                state.update(PuHash(self.buf[i].0), self.buf[i].1);
            }
            self.buf_len = 0;
            self.state = Some(state);
        }
    }

    /// Folds one non-null value into every world the hash selects.
    #[inline]
    pub fn update(&mut self, pu: PuHash, v: AggValue) {
        match &mut self.state {
            Some(state) => state.update(pu, v),
            None => {
                if self.buffered && (self.buf_len as usize) < BUFFER_CAP {
                    self.buf[self.buf_len as usize] = (pu.0, v);
                    self.buf_len += 1;
                } else {
                    self.materialize();
                    self.state.as_mut().unwrap().update(pu, v);
                }
            }
        }
    }

    /// Merges a partial aggregation; the result does not depend on combine
    /// order for exact kinds.
    pub fn combine(&mut self, mut other: Accumulator) {
        match other.state.take() {
            Some(os) => {
                self.materialize();
                self.state.as_mut().unwrap().combine(*os);
            }
            None => {
                for i in 0..other.buf_len as usize {
                    self.update(PuHash(other.buf[i].0), other.buf[i].1);
                }
            }
        }
    }

    pub fn update_count(&self) -> u64 {
        match &self.state {
            Some(s) => s.stats().0,
            None => self.buf_len as u64,
        }
    }

    /// Flushes cascades and buffers into the 64 per-world values, running
    /// the diversity check.
    pub fn finalize_raw(mut self) -> Result<WorldVector, WorldsError> {
        self.materialize();
        let mut state = self.state.take().unwrap();
        let (updates, mask) = state.stats();
        diversity_check(updates, mask)?;
        Ok(state.raw_vector())
    }

    /// Fused form: finalize and noise in one step.
    pub fn finalize_noised(
        self,
        session: &mut NoiseSession,
    ) -> Result<Value, WorldsError> {
        let scale = self.kind.noise_scale();
        let v = self.finalize_raw()?;
        Ok(pac_noised(&v, session, scale))
    }
}
