use crate::hashing::PuHash;

/// Optimization tier for the 64-world count kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountTier {
    /// `if ((hash >> j) & 1) totals[j] += 1` — branchy, SIMD-hostile.
    Naive,
    /// `totals[j] += (hash >> j) & 1` — the control dependency becomes a
    /// data dependency.
    Predicated,
    /// Eight u64 words of 8 virtual 8-bit lanes each; one masked add updates
    /// eight counters, folded into the wide totals every 255 updates.
    #[default]
    SwarCascading,
}

const LANE_MASK: u64 = 0x0101_0101_0101_0101;

/// Single-pass stochastic count state. Lane word `w`, byte `b` holds the
/// packed counter for world `w + 8*b`; `totals[j] + lane(j)` is the logical
/// counter at all times.
#[derive(Debug, Clone)]
pub struct CountState {
    tier: CountTier,
    swar_lanes: [u64; 8],
    updates_since_flush: u32,
    totals: [u64; 64],
    pub presence_mask: u64,
    pub update_count: u64,
}

impl CountState {
    pub fn new(tier: CountTier) -> Self {
        CountState {
            tier,
            swar_lanes: [0; 8],
            updates_since_flush: 0,
            totals: [0; 64],
            presence_mask: 0,
            update_count: 0,
        }
    }

    #[inline]
    pub fn update(&mut self, pu: PuHash) {
        let h = pu.0;
        self.presence_mask |= h;
        self.update_count += 1;
        match self.tier {
            CountTier::Naive => {
                for j in 0..64 {
                    if (h >> j) & 1 == 1 {
                        self.totals[j] += 1;
                    }
                }
            }
            CountTier::Predicated => {
                for j in 0..64 {
                    self.totals[j] += (h >> j) & 1;
                }
            }
            CountTier::SwarCascading => {
                for w in 0..8 {
                    self.swar_lanes[w] += (h >> w) & LANE_MASK;
                }
                self.updates_since_flush += 1;
                if self.updates_since_flush == 255 {
                    self.flush();
                }
            }
        }
    }

    fn flush(&mut self) {
        for w in 0..8 {
            let lane = self.swar_lanes[w];
            for b in 0..8 {
                self.totals[w + 8 * b] += (lane >> (8 * b)) & 0xff;
            }
            self.swar_lanes[w] = 0;
        }
        self.updates_since_flush = 0;
    }

    pub fn combine(&mut self, mut other: CountState) {
        self.flush();
        other.flush();
        for j in 0..64 {
            self.totals[j] += other.totals[j];
        }
        self.presence_mask |= other.presence_mask;
        self.update_count += other.update_count;
    }

    /// Logical per-world counters with all packed lanes folded in.
    pub fn counters(&mut self) -> [u64; 64] {
        self.flush();
        self.totals
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(stream: &[u64]) -> [u64; 64] {
        let mut expect = [0u64; 64];
        for &h in stream {
            for (j, e) in expect.iter_mut().enumerate() {
                *e += (h >> j) & 1;
            }
        }
        expect
    }

    #[test]
    fn matches_per_bit_brute_force() {
        let mut x = 0xabcdef0123456789u64;
        let stream: Vec<u64> = (0..1000)
            .map(|_| {
                x = crate::hashing::mix64(x);
                crate::hashing::balance64(x).0
            })
            .collect();
        let expect = brute_force(&stream);
        for tier in [CountTier::Naive, CountTier::Predicated, CountTier::SwarCascading] {
            let mut s = CountState::new(tier);
            for &h in &stream {
                s.update(PuHash(h));
            }
            assert_eq!(s.counters(), expect, "{tier:?}");
            assert_eq!(s.update_count, stream.len() as u64);
        }
    }

    #[test]
    fn zero_updates_is_all_neutral() {
        let mut s = CountState::new(CountTier::SwarCascading);
        assert_eq!(s.counters(), [0u64; 64]);
        assert_eq!(s.presence_mask, 0);
    }

    #[test]
    fn swar_survives_many_flush_cycles() {
        // well past several 255-update flushes
        let mut s = CountState::new(CountTier::SwarCascading);
        for _ in 0..3000 {
            s.update(PuHash(u64::MAX));
        }
        assert_eq!(s.counters(), [3000u64; 64]);
    }
}
