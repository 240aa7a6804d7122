//! Seeded hashing primitives.
//!
//! Everything that needs randomness in this crate derives it from a single
//! 64-bit master seed through [`splitmix64`], so that two structures built
//! from the same seed are hash-compatible by construction.

/// One step of the splitmix64 sequence; also a good 64-bit finalizer.
#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stateless mix of two words, used to derive per-unit event identifiers.
#[inline]
pub fn mix64(a: u64, b: u64) -> u64 {
    let mut s = a ^ b.rotate_left(32) ^ 0x9e37_79b9_7f4a_7c15;
    splitmix64(&mut s)
}

/// Pairwise-independent multiply-shift hash over 64-bit inputs.
///
/// `index_in` maps into an arbitrary bucket count via fixed-point
/// multiplication of the high 32 output bits, which keeps the family
/// pairwise independent up to rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseHash {
    a: u64,
    b: u64,
}

impl PairwiseHash {
    /// Draws the (a, b) pair from a seed; `a` is forced odd.
    pub fn from_seed(seed: u64) -> Self {
        let mut s = seed;
        let a = splitmix64(&mut s) | 1;
        let b = splitmix64(&mut s);
        PairwiseHash { a, b }
    }

    #[inline]
    pub fn hash(&self, x: u64) -> u64 {
        self.a.wrapping_mul(x).wrapping_add(self.b)
    }

    /// Bucket index in `[0, buckets)`.
    #[inline]
    pub fn index_in(&self, x: u64, buckets: u32) -> u32 {
        let h = self.hash(x) >> 32;
        ((h * u64::from(buckets)) >> 32) as u32
    }

    /// Geometric level of `x`: trailing zeros of the hash, so that
    /// `Pr[level(x) >= i] = 2^-i`.
    #[inline]
    pub fn level(&self, x: u64) -> u32 {
        self.hash(x).trailing_zeros()
    }
}

/// Seeded byte-string hash (FNV-1a with a splitmix finalizer).
///
/// Keys are reduced to 64 bits once, before any row hashing; collisions at
/// this stage are accepted noise far below sketch error at realistic scales.
#[inline]
pub fn hash_key(seed: u64, key: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &byte in key {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut s = h;
    splitmix64(&mut s)
}
