//! Reproducible Gaussian noise.
//!
//! Stream definition, so other implementations can reproduce it bit for bit:
//! ChaCha20 (20 rounds, RFC 7539 block function, 64-bit block counter from
//! 0, stream id 0) keyed with the little-endian bytes of the `u64` seed
//! followed by 24 zero bytes. Each `u64` is two consecutive little-endian
//! 32-bit output words (low word first). A uniform is `(x >> 11) * 2^-53`;
//! each normal consumes two uniforms `a, b` and equals
//! `sqrt(-2 ln(1 - a)) * cos(2 pi b)`.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::math::{cos, ln, sqrt};

#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha20Rng,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        Self {
            rng: ChaCha20Rng::from_seed(key),
        }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let a = self.uniform();
        let b = self.uniform();
        sqrt(-2.0 * ln(1.0 - a)) * cos(2.0 * core::f64::consts::PI * b)
    }
}

/// Per-scenario seed derived from a master seed (SplitMix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
