//! Approximate 64-world integer sums.
//!
//! Counters are 16-bit, organized in 25 lazily allocated levels that stagger
//! every 4 bits: an incoming value routes to level `floor((msb(|v|) - 8)/4)`
//! (clamped to [0, 24]) and is stored as `round(|v| / 2^(4*level))`. On
//! overflow only the upper 12 bits of a counter cascade upward
//! (`C[k+1] += C[k] >> 4`), bounding the relative error of one cascade by
//! 2^-12. The default state is two-sided: positives and negatives accumulate
//! separately (negatives stored negated) and are subtracted at finalization,
//! which defeats the cancellation blow-up of a single signed hierarchy.

use crate::hashing::PuHash;

pub const APPROX_LEVELS: usize = 25;

fn route(mag: u64) -> (usize, u64) {
    debug_assert!(mag > 0);
    let msb = 63 - mag.leading_zeros() as i32;
    let lvl = (((msb - 8).max(0)) / 4).min(24) as usize;
    let shift = 4 * lvl as u32;
    // round to nearest on the dropped low bits
    let stored = if shift == 0 { mag } else { (mag + (1 << (shift - 1))) >> shift };
    (lvl, stored)
}

/// One sign side: unsigned 16-bit counters per level.
#[derive(Debug, Clone, Default)]
struct Side {
    levels: [Option<Box<[u16; 64]>>; APPROX_LEVELS],
    /// running total of stored units per level; bounds every slot
    units: [u32; APPROX_LEVELS],
}

impl Side {
    #[inline]
    fn add(&mut self, h: u64, mag: u64) {
        let (lvl, stored) = route(mag);
        if self.units[lvl] as u64 + stored > u16::MAX as u64 {
            self.cascade(lvl);
        }
        if self.levels[lvl].is_none() {
            self.levels[lvl] = Some(Box::new([0u16; 64]));
        }
        self.units[lvl] += stored as u32;
        let lane = self.levels[lvl].as_mut().unwrap();
        let s = stored as u16;
        for j in 0..64 {
            lane[j] += s * ((h >> j) & 1) as u16;
        }
    }

    fn cascade(&mut self, lvl: usize) {
        assert!(lvl + 1 < APPROX_LEVELS, "approx sum exceeded 112-bit capacity");
        let carry = (self.units[lvl] >> 4) as u64;
        if self.units[lvl + 1] as u64 + carry > u16::MAX as u64 {
            self.cascade(lvl + 1);
        }
        if self.levels[lvl + 1].is_none() {
            self.levels[lvl + 1] = Some(Box::new([0u16; 64]));
        }
        let (lo, hi) = self.levels.split_at_mut(lvl + 1);
        let lane = lo[lvl].as_mut().unwrap();
        let next = hi[0].as_mut().unwrap();
        for j in 0..64 {
            next[j] += lane[j] >> 4;
            lane[j] = 0;
        }
        self.units[lvl + 1] += carry as u32;
        self.units[lvl] = 0;
    }

    fn combine(&mut self, other: Side) {
        for (lvl, lane) in other.levels.into_iter().enumerate() {
            let Some(lane) = lane else { continue };
            if self.units[lvl] as u64 + other.units[lvl] as u64 > u16::MAX as u64 {
                self.cascade(lvl);
            }
            if self.levels[lvl].is_none() {
                self.levels[lvl] = Some(Box::new([0u16; 64]));
            }
            let mine = self.levels[lvl].as_mut().unwrap();
            for j in 0..64 {
                mine[j] += lane[j];
            }
            self.units[lvl] += other.units[lvl];
        }
    }

    fn reconstruct(&self) -> [u128; 64] {
        let mut out = [0u128; 64];
        for (lvl, lane) in self.levels.iter().enumerate() {
            let Some(lane) = lane else { continue };
            for j in 0..64 {
                out[j] += (lane[j] as u128) << (4 * lvl);
            }
        }
        out
    }
}

/// Two-sided approximate integer sum.
#[derive(Debug, Clone, Default)]
pub struct ApproxSumState {
    pos: Side,
    neg: Side,
    pub presence_mask: u64,
    pub update_count: u64,
}

impl ApproxSumState {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn update(&mut self, pu: PuHash, v: i64) {
        let h = pu.0;
        self.presence_mask |= h;
        self.update_count += 1;
        if v > 0 {
            self.pos.add(h, v as u64);
        } else if v < 0 {
            self.neg.add(h, v.unsigned_abs());
        }
    }

    pub fn combine(&mut self, other: ApproxSumState) {
        self.pos.combine(other.pos);
        self.neg.combine(other.neg);
        self.presence_mask |= other.presence_mask;
        self.update_count += other.update_count;
    }

    pub fn sums(&self) -> [f64; 64] {
        let pos = self.pos.reconstruct();
        let neg = self.neg.reconstruct();
        let mut out = [0.0f64; 64];
        for j in 0..64 {
            out[j] = (pos[j] as i128 - neg[j] as i128) as f64;
        }
        out
    }
}

/// Single signed counter hierarchy — the accuracy baseline the two-sided
/// layout is measured against.
///
/// Its overflow prediction tracks each level's exact *net* running sum, the
/// natural signed generalization of the unsigned guard. On mixed-sign data
/// the net stays near zero while individual slots random-walk past the
/// 16-bit range and wrap, collapsing the reconstructed totals. Sign-pure
/// data never triggers the weakness, which is exactly why the two-sided
/// split fixes it.
#[derive(Debug, Clone, Default)]
pub struct SingleSidedApproxSumState {
    levels: [Option<Box<[i16; 64]>>; APPROX_LEVELS],
    /// exact net sum of stored units per level since the last cascade
    net: [i64; APPROX_LEVELS],
    pub presence_mask: u64,
    pub update_count: u64,
}

impl SingleSidedApproxSumState {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn update(&mut self, pu: PuHash, v: i64) {
        let h = pu.0;
        self.presence_mask |= h;
        self.update_count += 1;
        if v == 0 {
            return;
        }
        let (lvl, stored) = route(v.unsigned_abs());
        let signed = if v > 0 { stored as i64 } else { -(stored as i64) };
        if (self.net[lvl] + signed).unsigned_abs() > i16::MAX as u64 {
            self.cascade(lvl);
        }
        if self.levels[lvl].is_none() {
            self.levels[lvl] = Some(Box::new([0i16; 64]));
        }
        self.net[lvl] += signed;
        let s = signed as i16;
        let lane = self.levels[lvl].as_mut().unwrap();
        for j in 0..64 {
            // wrapping add mirrors the raw two's-complement counters
            lane[j] = lane[j].wrapping_add(s.wrapping_mul(((h >> j) & 1) as i16));
        }
    }

    fn cascade(&mut self, lvl: usize) {
        assert!(lvl + 1 < APPROX_LEVELS, "approx sum exceeded 112-bit capacity");
        let carry = self.net[lvl] >> 4;
        if (self.net[lvl + 1] + carry).unsigned_abs() > i16::MAX as u64 {
            self.cascade(lvl + 1);
        }
        if self.levels[lvl + 1].is_none() {
            self.levels[lvl + 1] = Some(Box::new([0i16; 64]));
        }
        let (lo, hi) = self.levels.split_at_mut(lvl + 1);
        let lane = lo[lvl].as_mut().unwrap();
        let next = hi[0].as_mut().unwrap();
        for j in 0..64 {
            next[j] = next[j].wrapping_add(lane[j] >> 4); // arithmetic shift keeps the sign
            lane[j] = 0;
        }
        self.net[lvl + 1] += carry;
        self.net[lvl] = 0;
    }

    pub fn sums(&self) -> [f64; 64] {
        let mut out = [0.0f64; 64];
        for (lvl, lane) in self.levels.iter().enumerate() {
            let Some(lane) = lane else { continue };
            for j in 0..64 {
                out[j] += (lane[j] as f64) * (1u128 << (4 * lvl)) as f64;
            }
        }
        out
    }
}
