//! Seeded random streams for simulation and learners.
//!
//! Every stream is a ChaCha8 keystream. The 256-bit key holds the 64-bit
//! seed in little-endian order in its first eight bytes (remaining bytes
//! zero) and the 64-bit stream id selects the ChaCha stream. Words are
//! consumed as little-endian `u64`s, so any ChaCha8 implementation can
//! regenerate the same draws from `(seed, stream)`.
//!
//! Derived variates:
//! - uniform on [0, 1): top 53 bits of a `u64` times 2^-53
//! - standard normal: Box–Muller, two uniforms per draw, cosine branch only
//! - standard exponential: `-ln(1 - u)`

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids used by the crate. Anything at or above `USER` is free.
pub mod streams {
    pub const COVARIATES: u64 = 1;
    pub const EVENT_TIMES: u64 = 2;
    pub const COVARIATE_STEPS: u64 = 3;
    pub const SUBSAMPLE: u64 = 4;
    pub const LEARNER: u64 = 5;
    pub const TEST_SET: u64 = 6;
    pub const USER: u64 = 1 << 32;
}

#[derive(Clone, Debug)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Child seed for an independent sub-experiment (replicate, tree, ...).
    pub fn derive_seed(seed: u64, index: u64) -> u64 {
        splitmix64(seed ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        // 1 - u lies in (0, 1], so the log is finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn standard_exponential(&mut self) -> f64 {
        -(1.0 - self.uniform()).ln()
    }

    /// Uniform integer in `0..n` (Lemire's multiply-and-reject).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Fisher–Yates partial shuffle: `k` distinct indices out of `0..n`.
    pub fn choose_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
