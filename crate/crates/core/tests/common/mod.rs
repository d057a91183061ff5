#![allow(dead_code)]

use exitctl_core::{ConservationMode, Domain, ModelParams, NoiseKind, NoiseSpec, Scenario};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub struct Uniform(ChaCha8Rng);

impl Uniform {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }
}

/// Random rate constants with every coupling switched on.
pub fn random_params(u: &mut Uniform) -> ModelParams {
    let mu = u.range(0.0, 0.05);
    ModelParams {
        alpha: u.range(0.05, 1.0),
        beta: u.range(0.05, 1.0),
        xi: u.next(),
        epsilon_rate: u.range(0.05, 2.0),
        delta: u.range(0.05, 1.0),
        mu,
        mu_star: mu + u.range(0.0, 0.1),
        gamma: u.range(0.05, 0.5),
        zeta: u.range(0.05, 1.0),
        nu: u.range(0.0, 0.5),
        sigma_relapse: u.range(0.0, 0.5),
        conservation_mode: if u.next() < 0.8 { ConservationMode::Corrected } else { ConservationMode::Literal },
    }
}

pub fn random_noise(u: &mut Uniform) -> NoiseSpec {
    let sigma_min = u.range(0.02, 0.1);
    let sigma_max = sigma_min + u.range(0.05, 0.4);
    NoiseSpec {
        kind: if u.next() < 0.5 { NoiseKind::Constant } else { NoiseKind::AffineClamped },
        sigma0: u.range(sigma_min, sigma_max),
        sigma_min,
        sigma_max,
    }
}

/// Box inside the unit cube with sides between 0.1 and 0.4.
pub fn random_domain(u: &mut Uniform) -> Domain {
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for i in 0..3 {
        let w = u.range(0.1, 0.4);
        lo[i] = u.range(0.0, 1.0 - w);
        hi[i] = lo[i] + w;
    }
    Domain::new(lo, hi)
}

pub fn random_scenario(u: &mut Uniform) -> Scenario {
    Scenario::new(random_params(u), random_noise(u), random_domain(u)).expect("valid by construction")
}

/// Zero drift, unit noise, `x1 ∈ (0, 1)` and a wide transverse box.
pub fn brownian() -> Scenario {
    Scenario::new(ModelParams::zero(), NoiseSpec::constant(1.0), Domain::new([0.0, -1.0, -1.0], [1.0, 1.0, 1.0]))
        .unwrap()
}
