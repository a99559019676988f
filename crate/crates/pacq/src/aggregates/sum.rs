use crate::hashing::PuHash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SumTier {
    /// 128-bit accumulators updated behind a branch — the slow baseline.
    Naive,
    /// Five cascading levels of 8/16/32/64/128-bit accumulators. Values are
    /// routed by magnitude; a level flushes into the next wider one before
    /// it can overflow, so every tier stays exact.
    #[default]
    Cascading,
}

const LEVELS: usize = 5;
// route |v| strictly below these cutoffs into levels 0..4
const CUTOFF: [u64; 4] = [1 << 6, 1 << 14, 1 << 30, 1 << 62];
// largest Sum|v| a level may hold before its narrow slots could overflow
const CAP: [u128; LEVELS] = [i8::MAX as u128, i16::MAX as u128, i32::MAX as u128, i64::MAX as u128, u128::MAX >> 1];

/// Exact integer sum over 64 worlds.
#[derive(Debug, Clone)]
pub struct IntSumState {
    tier: SumTier,
    l8: [i8; 64],
    l16: [i16; 64],
    l32: [i32; 64],
    l64: [i64; 64],
    l128: [i128; 64],
    /// running Sum|v| per level — an upper bound for any single slot,
    /// checked before each add to flush ahead of overflow
    abs: [u128; LEVELS],
    pub presence_mask: u64,
    pub update_count: u64,
}

impl IntSumState {
    pub fn new(tier: SumTier) -> Self {
        IntSumState {
            tier,
            l8: [0; 64],
            l16: [0; 64],
            l32: [0; 64],
            l64: [0; 64],
            l128: [0; 64],
            abs: [0; LEVELS],
            presence_mask: 0,
            update_count: 0,
        }
    }

    #[inline]
    pub fn update(&mut self, pu: PuHash, v: i64) {
        let h = pu.0;
        self.presence_mask |= h;
        self.update_count += 1;
        match self.tier {
            SumTier::Naive => {
                for j in 0..64 {
                    if (h >> j) & 1 == 1 {
                        self.l128[j] += v as i128;
                    }
                }
            }
            SumTier::Cascading => {
                let mag = v.unsigned_abs();
                let lvl = match CUTOFF.iter().position(|&c| mag < c) {
                    Some(l) => l,
                    None => 4,
                };
                if self.abs[lvl] + mag as u128 > CAP[lvl] {
                    self.flush_level(lvl);
                }
                self.abs[lvl] += mag as u128;
                match lvl {
                    0 => {
                        let x = v as i8;
                        for j in 0..64 {
                            self.l8[j] += x * ((h >> j) & 1) as i8;
                        }
                    }
                    1 => {
                        let x = v as i16;
                        for j in 0..64 {
                            self.l16[j] += x * ((h >> j) & 1) as i16;
                        }
                    }
                    2 => {
                        let x = v as i32;
                        for j in 0..64 {
                            self.l32[j] += x * ((h >> j) & 1) as i32;
                        }
                    }
                    3 => {
                        for j in 0..64 {
                            self.l64[j] += v * ((h >> j) & 1) as i64;
                        }
                    }
                    _ => {
                        let x = v as i128;
                        for j in 0..64 {
                            self.l128[j] += x * ((h >> j) & 1) as i128;
                        }
                    }
                }
            }
        }
    }

    /// Folds level `lvl` into the next wider level, clearing it. The top
    /// level cannot overflow for any realistic stream (Sum|v| < 2^126).
    fn flush_level(&mut self, lvl: usize) {
        if lvl + 1 < LEVELS && self.abs[lvl + 1] + self.abs[lvl] > CAP[lvl + 1] {
            self.flush_level(lvl + 1);
        }
        match lvl {
            0 => {
                for j in 0..64 {
                    self.l16[j] += self.l8[j] as i16;
                    self.l8[j] = 0;
                }
            }
            1 => {
                for j in 0..64 {
                    self.l32[j] += self.l16[j] as i32;
                    self.l16[j] = 0;
                }
            }
            2 => {
                for j in 0..64 {
                    self.l64[j] += self.l32[j] as i64;
                    self.l32[j] = 0;
                }
            }
            3 => {
                for j in 0..64 {
                    self.l128[j] += self.l64[j] as i128;
                    self.l64[j] = 0;
                }
            }
            _ => {}
        }
        if lvl + 1 < LEVELS {
            self.abs[lvl + 1] += self.abs[lvl];
        }
        self.abs[lvl] = 0;
    }

    fn flush_all(&mut self) {
        for lvl in 0..LEVELS - 1 {
            self.flush_level(lvl);
        }
    }

    pub fn combine(&mut self, mut other: IntSumState) {
        self.flush_all();
        other.flush_all();
        for j in 0..64 {
            self.l128[j] += other.l128[j];
        }
        self.abs[4] += other.abs[4];
        self.presence_mask |= other.presence_mask;
        self.update_count += other.update_count;
    }

    pub fn sums(&mut self) -> [i128; 64] {
        self.flush_all();
        self.l128
    }
}

/// Double-precision sum over 64 worlds; the predicated multiply keeps the
/// update loop branch-free.
#[derive(Debug, Clone)]
pub struct FloatSumState {
    slots: [f64; 64],
    pub presence_mask: u64,
    pub update_count: u64,
}

impl FloatSumState {
    pub fn new() -> Self {
        FloatSumState { slots: [0.0; 64], presence_mask: 0, update_count: 0 }
    }

    #[inline]
    pub fn update(&mut self, pu: PuHash, v: f64) {
        let h = pu.0;
        self.presence_mask |= h;
        self.update_count += 1;
        for j in 0..64 {
            self.slots[j] += v * ((h >> j) & 1) as f64;
        }
    }

    pub fn combine(&mut self, other: FloatSumState) {
        for j in 0..64 {
            self.slots[j] += other.slots[j];
        }
        self.presence_mask |= other.presence_mask;
        self.update_count += other.update_count;
    }

    pub fn sums(&self) -> [f64; 64] {
        self.slots
    }
}

impl Default for FloatSumState {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::{balance64, mix64};

    fn stream(n: usize, seed: u64, max_mag: i64) -> Vec<(u64, i64)> {
        let mut x = seed;
        (0..n)
            .map(|_| {
                x = mix64(x);
                let h = balance64(x).0;
                x = mix64(x);
                let v = (x % (2 * max_mag as u64 + 1)) as i64 - max_mag;
                (h, v)
            })
            .collect()
    }

    #[test]
    fn cascading_equals_naive_across_magnitudes() {
        // values spanning every cascade level, including sign changes
        for max_mag in [50i64, 10_000, 1 << 20, 1 << 40, i64::MAX / 4] {
            let st = stream(4000, 0x1234 ^ max_mag as u64, max_mag);
            let mut naive = IntSumState::new(SumTier::Naive);
            let mut casc = IntSumState::new(SumTier::Cascading);
            for &(h, v) in &st {
                naive.update(PuHash(h), v);
                casc.update(PuHash(h), v);
            }
            assert_eq!(naive.sums(), casc.sums(), "max_mag={max_mag}");
        }
    }

    #[test]
    fn forced_small_level_overflow_stays_exact() {
        let mut s = IntSumState::new(SumTier::Cascading);
        // hammer level 0 way past the i8 cap with one world
        for _ in 0..100_000 {
            s.update(PuHash(1), 63);
        }
        assert_eq!(s.sums()[0], 6_300_000);
        assert_eq!(s.sums()[1], 0);
    }

    #[test]
    fn all_worlds_synthetic_hash() {
        let mut s = IntSumState::new(SumTier::Cascading);
        for v in [1i64, 2, 4] {
            s.update(PuHash(u64::MAX), v);
        }
        assert_eq!(s.sums(), [7i128; 64]);
    }
}
