//! Stream-split reproducible randomness.
//!
//! Every random computation in the crate draws from an [`RngStream`]
//! identified by `(seed, stream)`. Independent tasks (codebook builds, reward
//! cells, trajectory seeds, …) get distinct stream ids derived *before* any
//! work is scheduled, so results are bit-identical regardless of thread count
//! or execution order.

use std::f64::consts::TAU;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::complex::ComplexVector;
use crate::error::{Error, Result};
use num_complex::Complex64;

/// Counter-style mixing (splitmix64 finalizer); bijective on u64.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A reproducible random stream: ChaCha8 keyed by a 64-bit seed with a
/// 64-bit stream id selecting one of 2⁶⁴ independent sequences.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh stream for subtask `child`, independent of this stream's
    /// position. Same `(seed, stream, child)` always yields the same stream.
    pub fn substream(&self, child: u64) -> Self {
        Self::new(self.seed, splitmix64(splitmix64(self.stream).wrapping_add(child)))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// One standard-normal pair via Box–Muller.
fn standard_normal_pair(rng: &mut RngStream) -> (f64, f64) {
    // 1 - U ∈ (0, 1] keeps the log finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = TAU * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Samples a circularly-symmetric complex Gaussian vector with i.i.d.
/// entries of total per-entry variance `variance` (real and imaginary parts
/// carry `variance/2` each).
pub fn sample_cn(dim: usize, variance: f64, rng: &mut RngStream) -> Result<ComplexVector> {
    if !(variance > 0.0) {
        return Err(Error::InvalidInput(format!(
            "sample_cn needs variance > 0, got {variance}"
        )));
    }
    let half = (variance / 2.0).sqrt();
    Ok(ComplexVector::from_fn(dim, |_| {
        let (re, im) = standard_normal_pair(rng);
        Complex64::new(re * half, im * half)
    }))
}

// ── tests ──────────────────────────────────────────────────────────────────
