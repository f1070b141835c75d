//! Deterministic 64-bit random streams based on SplitMix64.
//!
//! Every random draw in the crate traces back to a run seed through
//! [`Stream::derive`], which hashes the seed together with a namespace and a
//! list of indices (e.g. `[ROLLOUT, step, task_index, rollout_index]`).
//! Because each logical consumer owns an independent stream, results never
//! depend on scheduling or on the order in which parallel workers finish.
//!
//! The generator is SplitMix64: the state advances by the 64-bit golden-ratio
//! constant `0x9E3779B97F4A7C15` and each output is the state passed through
//! the two-round xor-multiply finalizer
//! `x ^= x >> 30; x *= 0xBF58476D1CE4E5B9; x ^= x >> 27; x *= 0x94D049BB133111EB; x ^= x >> 31`.
//! Uniform doubles take the top 53 bits (`(x >> 11) * 2^-53`), categorical
//! draws walk the cdf until it exceeds the uniform draw, and Gaussian draws
//! use the Box-Muller transform. All of this is documented so a third party
//! can replay any sequence bit-for-bit.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

/// Stream namespaces. Distinct first words keep different uses of the same
/// run seed statistically independent.
pub mod namespace {
    /// Per-completion rollout streams: `[ROLLOUT, step, task_index, rollout_index]`.
    pub const ROLLOUT: u64 = 0;
    /// Synthetic task generation: `[TASK_GEN, task_index]`.
    pub const TASK_GEN: u64 = 1;
    /// Held-out evaluation split: `[EVAL_SPLIT, ...]`.
    pub const EVAL_SPLIT: u64 = 2;
    /// Parameter initialization noise: `[PARAM_INIT]`.
    pub const PARAM_INIT: u64 = 3;
    /// Per-step training batch: `[TRAIN_BATCH, step]`.
    pub const TRAIN_BATCH: u64 = 4;
}

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// A deterministic random stream.
#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
}

impl Stream {
    /// Stream seeded directly with `seed`.
    pub fn new(seed: u64) -> Self {
        Stream { state: seed }
    }

    /// Derive an independent stream from `seed` and a word list.
    ///
    /// Word `w` at position `i` (0-based) is absorbed as
    /// `state = mix64(state ^ (GOLDEN * (i + 1)) ^ w)` starting from
    /// `state = seed`, where `mix64` is the SplitMix64 finalizer and GOLDEN
    /// is `0x9E3779B97F4A7C15` (all arithmetic wrapping).
    pub fn derive(seed: u64, words: &[u64]) -> Self {
        let mut state = seed;
        for (i, &w) in words.iter().enumerate() {
            state = mix64(state ^ GOLDEN.wrapping_mul(i as u64 + 1) ^ w);
        }
        Stream { state }
    }

    /// Derive a sub-seed; shorthand for `Stream::derive(seed, words)` state.
    pub fn derive_seed(seed: u64, words: &[u64]) -> u64 {
        Stream::derive(seed, words).state
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform double in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_NEG_53
    }

    /// Uniform integer in `[0, n)`. Takes `next_u64() % n`; the modulo bias
    /// is below 2^-57 for the small `n` used here.
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_below requires n > 0");
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal draw via Box-Muller: `u1` uniform in `(0, 1]`
    /// (top 53 bits plus one), `u2` uniform in `[0, 1)`, returning
    /// `sqrt(-2 ln u1) * cos(2 pi u2)`.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * TWO_NEG_53;
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Sample an index from a probability vector: draw `u = next_f64()` and
    /// return the first index whose running cdf exceeds `u`. Falls back to
    /// the last index if rounding leaves the cdf below 1.
    pub fn next_categorical(&mut self, probs: &[f64]) -> usize {
        assert!(!probs.is_empty(), "empty probability vector");
        let u = self.next_f64();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}
