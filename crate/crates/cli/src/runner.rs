//! Parallel path runner on a dedicated rayon pool.

use exitctl_core::{PathResult, PathRunner};
use rayon::prelude::*;

/// Runs paths on `workers` threads. Results come back in path order, and each
/// path draws from its own random stream, so the output does not depend on
/// the worker count.
pub struct Parallel {
    pool: rayon::ThreadPool,
}

impl Parallel {
    pub fn new(workers: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
        Ok(Self { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl PathRunner for Parallel {
    fn run<F>(&self, n_paths: u64, path: F) -> Vec<PathResult>
    where
        F: Fn(u64) -> PathResult + Sync + Send,
    {
        self.pool.install(|| (0..n_paths).into_par_iter().map(&path).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use exitctl_core::{simulate_ensemble, Control, Scenario, Sequential, SimConfig};

    #[test]
    fn matches_sequential_for_any_worker_count() {
        let s = Scenario::example();
        let cfg = SimConfig { n_paths: 300, t_max: 2.0, seed: 9, ..SimConfig::default() };
        let x0 = s.domain().center();
        let reference = simulate_ensemble(&x0, Control::Constant(0.05), &s, &cfg, &Sequential).unwrap();
        for workers in [1, 3, 8] {
            let got =
                simulate_ensemble(&x0, Control::Constant(0.05), &s, &cfg, &Parallel::new(workers).unwrap()).unwrap();
            assert_eq!(got, reference);
        }
    }
}
