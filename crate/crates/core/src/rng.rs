//! Counter-addressed deviates.
//!
//! Every deviate the chain consumes is a pure function of
//! `(seed, iteration, purpose, index)`. The master can therefore build any
//! node of the prefetch tree before its ancestors are resolved, and a serial
//! run reads exactly the same values as a parallel one.
//!
//! Internally each `(iteration, purpose)` pair selects a ChaCha8 stream under
//! a key derived from the seed; `index` selects the word position inside that
//! stream.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PURPOSE_BITS: u32 = 4;
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Separates the disjoint sub-streams consumed by one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    /// Spherical Gaussian proposal noise.
    Proposal = 1,
    /// The uniform compared against the acceptance ratio.
    Threshold = 2,
    /// Free for callers that need extra per-iteration randomness
    /// (synthetic workloads, test harnesses).
    Auxiliary = 3,
}

#[derive(Clone)]
pub struct DeviateStream {
    seed: u64,
    key: [u8; 32],
}

impl std::fmt::Debug for DeviateStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeviateStream").field("seed", &self.seed).finish()
    }
}

impl DeviateStream {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut key);
        Self { seed, key }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn cursor(&self, iteration: u64, purpose: Purpose) -> ChaCha8Rng {
        debug_assert!(iteration < (1 << (64 - PURPOSE_BITS)));
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream((iteration << PURPOSE_BITS) | purpose as u64);
        rng
    }

    /// Raw 64-bit counter output number `index` of the given sub-stream.
    pub fn raw(&self, iteration: u64, purpose: Purpose, index: u64) -> u64 {
        let mut rng = self.cursor(iteration, purpose);
        // Two 32-bit words per output.
        rng.set_word_pos(u128::from(index) * 2);
        rng.next_u64()
    }

    /// Uniform deviate strictly inside (0, 1).
    pub fn uniform(&self, iteration: u64, purpose: Purpose, index: u64) -> f64 {
        open_unit(self.raw(iteration, purpose, index))
    }

    /// The acceptance threshold variate `u_t`; shared by every tree node at
    /// absolute iteration `iteration`.
    pub fn threshold_deviate(&self, iteration: u64) -> f64 {
        self.uniform(iteration, Purpose::Threshold, 0)
    }

    /// `dim` independent standard normal deviates for the proposal at
    /// `iteration`.
    ///
    /// Component `i` is `sqrt(-2 ln u) * cos(2 pi v)` where `u` and `v` are
    /// the open-unit uniforms at counter positions `2i` and `2i + 1`.
    pub fn proposal_deviates(&self, iteration: u64, dim: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(dim);
        self.fill_normals(iteration, Purpose::Proposal, &mut out, dim);
        out
    }

    pub fn fill_normals(&self, iteration: u64, purpose: Purpose, out: &mut Vec<f64>, dim: usize) {
        let mut rng = self.cursor(iteration, purpose);
        out.clear();
        for _ in 0..dim {
            let u = open_unit(rng.next_u64());
            let v = open_unit(rng.next_u64());
            out.push(box_muller(u, v));
        }
    }
}

#[inline]
fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

#[inline]
fn box_muller(u: f64, v: f64) -> f64 {
    (-2.0 * u.ln()).sqrt() * (TWO_PI * v).cos()
}
