//! Portable seeded randomness.
//!
//! Every random draw in the harness goes through [`SplitMix64`] so that a
//! given seed yields the same sequence in any language that reimplements the
//! few lines below. Named streams are derived with [`derive_seed`], which keeps
//! independent purposes (template draws, demo draws, subsets) decoupled.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

/// The splitmix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a 64-bit over a sequence of byte chunks, hashed as if concatenated.
pub fn fnv1a64(chunks: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for chunk in chunks {
        for &b in *chunk {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// Maps a 64-bit hash to the open interval (0, 1) using its top 52 bits.
#[inline]
pub fn unit_open(h: u64) -> f64 {
    ((h >> 12) as f64 + 0.5) / (1u64 << 52) as f64
}

/// Hashes a tuple of words under a seed: FNV-1a over the little-endian bytes
/// of `seed` followed by each word, then the splitmix64 finalizer.
pub fn hash_words(seed: u64, words: &[u64]) -> u64 {
    let mut h = FNV_OFFSET;
    for w in std::iter::once(seed).chain(words.iter().copied()) {
        for b in w.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    mix64(h)
}

/// Derives an independent stream seed from a parent seed and a purpose label.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    mix64(seed ^ mix64(fnv1a64(&[purpose.as_bytes()])))
}

/// splitmix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform integer in `0..bound` by 128-bit multiply-shift. `bound` must be non-zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    /// Partial forward Fisher-Yates: returns the first `k` entries of a
    /// shuffle of `0..n`. Position `i` swaps with `i + below(n - i)`.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} of {n}");
        let mut ids: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            ids.swap(i, j);
        }
        ids.truncate(k);
        ids
    }
}
