//! Balanced per-query PU hashing.
//!
//! Each PU row gets a 64-bit mask whose bit `j` encodes membership in
//! possible world `j`. The mask is produced by a keyed rehash of the PU key
//! and then balanced to exactly 32 set bits, which stabilizes the stochastic
//! aggregates and pins the membership-inference prior at 50%.

use thiserror::Error;

use crate::relcore::Value;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HashError {
    #[error("NULL PU key")]
    NullKey,
}

/// Balanced 64-bit world-membership mask.
///
/// Fresh from [`pac_hash`] the popcount is exactly 32; after a `pac_select`
/// intersection it may drop anywhere down to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PuHash(pub u64);

impl PuHash {
    pub fn popcount(self) -> u32 {
        self.0.count_ones()
    }

    pub fn bit(self, j: usize) -> bool {
        (self.0 >> j) & 1 == 1
    }
}

/// Per-query hash key, drawn once from the session RNG and fixed for the
/// lifetime of one query execution including its coupled oracle run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuerySalt(pub u64);

/// splitmix64 finalizer. Identity of the mixer is not contractual, only its
/// statistical quality; this one passes the per-bit frequency checks.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_bytes(bytes: &[u8]) -> u64 {
    // FNV-1a into a splitmix finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h)
}

fn hash_value(v: &Value) -> Result<u64, HashError> {
    match v {
        Value::Int64(x) => Ok(mix64(*x as u64)),
        Value::Date(x) => Ok(mix64(*x as i64 as u64)),
        Value::Boolean(b) => Ok(mix64(*b as u64)),
        Value::Float64(f) => Ok(mix64(f.to_bits())),
        Value::Text(s) => Ok(hash_bytes(s.as_bytes())),
        Value::Hash(h) => Ok(*h),
        Value::Null => Err(HashError::NullKey),
        Value::VectorF64(_) => Err(HashError::NullKey),
    }
}

/// Deterministic 64-bit hash of a (possibly composite) PU key. Composite
/// keys hash as the XOR of their component hashes.
pub fn base_hash(key: &[Value]) -> Result<u64, HashError> {
    let mut acc = 0u64;
    for v in key {
        acc ^= hash_value(v)?;
    }
    Ok(acc)
}

/// Forces exactly 32 set bits. An input that is already balanced is returned
/// unchanged. Which bits get flipped is driven by the input's own entropy: a
/// small PRNG seeded from the input draws candidate positions, so no fixed
/// bit position is preferred.
pub fn balance64(h: u64) -> PuHash {
    let pc = h.count_ones();
    if pc == 32 {
        return PuHash(h);
    }
    // Flip the majority polarity towards the minority.
    let flip_ones = pc > 32;
    let mut need = if flip_ones { pc - 32 } else { 32 - pc };
    let mut out = h;
    let mut state = mix64(h ^ 0x6a09_e667_f3bc_c908);
    let mut draws = 0u32;
    while need > 0 {
        // xorshift64* position stream
        state ^= state >> 12;
        state ^= state << 25;
        state ^= state >> 27;
        let pos = (state.wrapping_mul(0x2545_f491_4f6c_dd1d) >> 58) as u32; // top 6 bits
        let bit = 1u64 << pos;
        let is_one = out & bit != 0;
        if is_one == flip_ones {
            out ^= bit;
            need -= 1;
        }
        draws += 1;
        if draws > 4096 {
            // The stream cannot stall for this long unless it degenerated;
            // finish with a linear sweep.
            for pos in 0..64u32 {
                if need == 0 {
                    break;
                }
                let bit = 1u64 << pos;
                if (out & bit != 0) == flip_ones {
                    out ^= bit;
                    need -= 1;
                }
            }
        }
    }
    debug_assert_eq!(out.count_ones(), 32);
    PuHash(out)
}

/// Per-query balanced world hash: one extra avalanche round over the salted
/// base hash, then balancing. Distinct salts reshuffle the whole universe of
/// worlds.
pub fn pac_hash(key: &[Value], salt: QuerySalt) -> Result<PuHash, HashError> {
    Ok(pac_hash_raw(base_hash(key)?, salt))
}

/// The same construction starting from an already-computed base hash.
#[inline]
pub fn pac_hash_raw(base: u64, salt: QuerySalt) -> PuHash {
    balance64(mix64(base ^ salt.0))
}
