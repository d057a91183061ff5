//! Reproducible Gaussian increments for Monte Carlo paths.
//!
//! Each path reads its own ChaCha8 stream (key from the run seed, stream id
//! from the path index). Step `k` draws from the fixed word window of pair
//! `k / 2`, so the normal used at a given `(seed, path, step)` never depends
//! on how paths are scheduled across workers.

use core::f64::consts::TAU;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// 32-bit words consumed per pair of normals.
const WORDS_PER_PAIR: u128 = 4;

/// Sequential reader of standard normals for one path.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, path_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_index);
        rng.set_word_pos(0);
        Self { rng, spare: None }
    }

    /// Positions the stream so the next call returns the normal of `step`.
    pub fn at_step(seed: u64, path_index: u64, step: u64) -> Self {
        let mut s = Self::new(seed, path_index);
        s.rng.set_word_pos(u128::from(step / 2) * WORDS_PER_PAIR);
        if step % 2 == 1 {
            s.next_normal();
        }
        s
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1], u2 in [0, 1)
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let (s, c) = libm::sincos(TAU * u2);
        self.spare = Some(r * s);
        r * c
    }
}

/// Standard normal used at `step` of path `path_index`.
pub fn normal_at(seed: u64, path_index: u64, step: u64) -> f64 {
    NormalStream::at_step(seed, path_index, step).next_normal()
}
