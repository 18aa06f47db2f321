//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a [`Stream`]: a ChaCha8
//! generator (counter-based, 64-bit output) keyed by a 64-bit seed and
//! switched to an independent stream selected by a component tag. Nested
//! seeds for experiment cells and trials come from [`derive_seed`], a
//! SplitMix64-style mix of the parent seed and an index path.
//!
//! Uniforms use the top 53 bits of one output word. Gaussian variates use the
//! Box–Muller transform, consuming two uniforms per pair of variates.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Component tags. Each selects a distinct ChaCha stream under the same seed.
pub mod tag {
    pub const SPHERE: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const INIT: u64 = 3;
    pub const DIRECTION: u64 = 4;
    pub const TEST_SET: u64 = 5;
    pub const MONTE_CARLO: u64 = 6;
    pub const PERTURB: u64 = 7;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and an index path, e.g. `(cell, trial)`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(seed.wrapping_add(GOLDEN)), |acc, &i| {
        mix64(acc ^ mix64(i.wrapping_add(GOLDEN).wrapping_mul(GOLDEN)))
    })
}

#[derive(Clone, Debug)]
pub struct Stream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Stream {
    pub fn new(seed: u64, tag: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(tag);
        Stream { rng, spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`.
    fn uniform_open_low(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_open_low();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(r * angle.sin());
        r * angle.cos()
    }

    /// `+1.0` or `-1.0` with equal probability.
    pub fn sign(&mut self) -> f64 {
        if self.next_u64() >> 63 == 0 {
            -1.0
        } else {
            1.0
        }
    }
}
