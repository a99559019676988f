use crate::hashing::PuHash;

/// Value domains the min/max kernel runs over. The branchless slot select
/// works on raw bit patterns, so each domain supplies an order-preserving
/// mapping to u64.
pub trait Extremal: Copy + PartialOrd {
    const NEUTRAL_MIN: Self; // identity for MIN (largest value)
    const NEUTRAL_MAX: Self; // identity for MAX (smallest value)
    fn to_bits_ordered(self) -> u64;
    fn from_bits_ordered(bits: u64) -> Self;
    fn to_f64(self) -> f64;
}

impl Extremal for i64 {
    const NEUTRAL_MIN: i64 = i64::MAX;
    const NEUTRAL_MAX: i64 = i64::MIN;
    #[inline]
    fn to_bits_ordered(self) -> u64 {
        (self as u64) ^ (1 << 63)
    }
    #[inline]
    fn from_bits_ordered(bits: u64) -> i64 {
        (bits ^ (1 << 63)) as i64
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Extremal for f64 {
    const NEUTRAL_MIN: f64 = f64::INFINITY;
    const NEUTRAL_MAX: f64 = f64::NEG_INFINITY;
    #[inline]
    fn to_bits_ordered(self) -> u64 {
        let b = self.to_bits();
        if b >> 63 == 1 {
            !b
        } else {
            b | (1 << 63)
        }
    }
    #[inline]
    fn from_bits_ordered(bits: u64) -> f64 {
        let b = if bits >> 63 == 1 { bits & !(1 << 63) } else { !bits };
        f64::from_bits(b)
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extreme {
    Min,
    Max,
}

const REFRESH_INTERVAL: u32 = 2048;

/// 64-world min/max with optional bound pruning: a running global bound `g`
/// (the worst extreme across all slots, refreshed every 2048 updates) lets
/// values that cannot beat any slot skip the update loop entirely.
#[derive(Debug, Clone)]
pub struct MinMaxState<T: Extremal> {
    extreme: Extreme,
    pruned: bool,
    extremes: [T; 64],
    bound: Option<T>,
    updates_since_refresh: u32,
    pub presence_mask: u64,
    pub update_count: u64,
}

impl<T: Extremal> MinMaxState<T> {
    pub fn new(extreme: Extreme, pruned: bool) -> Self {
        let neutral = match extreme {
            Extreme::Min => T::NEUTRAL_MIN,
            Extreme::Max => T::NEUTRAL_MAX,
        };
        MinMaxState {
            extreme,
            pruned,
            extremes: [neutral; 64],
            bound: None,
            updates_since_refresh: 0,
            presence_mask: 0,
            update_count: 0,
        }
    }

    #[inline]
    fn beats(&self, v: T, cur: T) -> bool {
        match self.extreme {
            Extreme::Min => v < cur,
            Extreme::Max => v > cur,
        }
    }

    #[inline]
    pub fn update(&mut self, pu: PuHash, v: T) {
        let h = pu.0;
        self.presence_mask |= h;
        self.update_count += 1;

        if self.pruned {
            self.updates_since_refresh += 1;
            if self.updates_since_refresh >= REFRESH_INTERVAL {
                self.refresh_bound();
            }
            if let Some(g) = self.bound {
                // g is the worst extreme over all slots: anything that does
                // not beat g cannot change any slot.
                if !self.beats(v, g) {
                    return;
                }
            }
        }

        let vb = v.to_bits_ordered();
        let want_greater = self.extreme == Extreme::Max;
        for j in 0..64 {
            let cur = self.extremes[j].to_bits_ordered();
            let better = if want_greater { vb > cur } else { vb < cur };
            let take = ((h >> j) & 1) & better as u64;
            // (condition - 1) word-mask select: take=1 -> new, take=0 -> old
            let keep = take.wrapping_sub(1);
            self.extremes[j] = T::from_bits_ordered((cur & keep) | (vb & !keep));
        }
    }

    fn refresh_bound(&mut self) {
        self.updates_since_refresh = 0;
        // Until every slot has a real value the worst extreme is the
        // neutral element and nothing can be pruned.
        if self.presence_mask != u64::MAX {
            self.bound = None;
            return;
        }
        let mut g = self.extremes[0];
        for &e in &self.extremes[1..] {
            // worst across slots: min for MAX, max for MIN
            if self.beats(g, e) {
                g = e;
            }
        }
        self.bound = Some(g);
    }

    pub fn combine(&mut self, other: MinMaxState<T>) {
        for j in 0..64 {
            if self.beats(other.extremes[j], self.extremes[j]) {
                self.extremes[j] = other.extremes[j];
            }
        }
        self.presence_mask |= other.presence_mask;
        self.update_count += other.update_count;
        self.bound = None;
        self.updates_since_refresh = 0;
    }

    /// Per-world extremes as f64 slots; worlds without contributions are
    /// masked out.
    pub fn slots(&self) -> ([f64; 64], u64) {
        let mut out = [0.0f64; 64];
        for j in 0..64 {
            if (self.presence_mask >> j) & 1 == 1 {
                out[j] = self.extremes[j].to_f64();
            }
        }
        (out, self.presence_mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::{balance64, mix64};

    fn run_stream<T: Extremal>(extreme: Extreme, pruned: bool, stream: &[(u64, T)]) -> Vec<T> {
        let mut s = MinMaxState::new(extreme, pruned);
        for &(h, v) in stream {
            s.update(PuHash(h), v);
        }
        s.extremes.to_vec()
    }

    fn random_stream(n: usize, seed: u64) -> Vec<(u64, i64)> {
        let mut x = seed;
        (0..n)
            .map(|_| {
                x = mix64(x);
                let h = balance64(x).0;
                x = mix64(x);
                (h, (x % 100_000) as i64 - 50_000)
            })
            .collect()
    }

    #[test]
    fn pruned_equals_naive_on_random_and_monotone() {
        let mut streams = vec![random_stream(10_000, 42)];
        // adversarial monotone runs (every update beats the bound)
        streams.push((0..5000).map(|i| (balance64(mix64(i)).0, i as i64)).collect());
        streams.push((0..5000).map(|i| (balance64(mix64(i)).0, -(i as i64))).collect());
        for stream in &streams {
            for extreme in [Extreme::Min, Extreme::Max] {
                let a = run_stream(extreme, false, stream);
                let b = run_stream(extreme, true, stream);
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn disjoint_world_minima_match_brute_force() {
        // three values covering disjoint world sets
        let stream = [
            (0x0000_0000_ffff_ffffu64, 5i64),
            (0xffff_ffff_0000_0000u64, 3),
            (0x0000_ffff_0000_ffffu64, 9),
        ];
        let mut s = MinMaxState::new(Extreme::Min, true);
        for &(h, v) in &stream {
            s.update(PuHash(h), v);
        }
        let (slots, mask) = s.slots();
        for j in 0..64 {
            let mut expect: Option<i64> = None;
            for &(h, v) in &stream {
                if (h >> j) & 1 == 1 {
                    expect = Some(expect.map_or(v, |e| e.min(v)));
                }
            }
            match expect {
                Some(e) => {
                    assert_eq!((mask >> j) & 1, 1);
                    assert_eq!(slots[j], e as f64);
                }
                None => assert_eq!((mask >> j) & 1, 0),
            }
        }
    }

    #[test]
    fn float_ordered_bits_is_monotone() {
        let vals = [-1.0e300, -2.5, -0.0, 0.0, 1.0e-12, 7.25, 3.9e88, f64::INFINITY];
        for w in vals.windows(2) {
            assert!(w[0].to_bits_ordered() <= w[1].to_bits_ordered());
            assert_eq!(f64::from_bits_ordered(w[0].to_bits_ordered()).to_bits(), w[0].to_bits());
        }
    }
}
