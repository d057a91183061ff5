//! Independent oracles for the eigen-solver and for policy iteration.

mod common;

use common::{random_scenario, Uniform};
use exitctl_core::{
    assemble, build_grid, policy_iteration, principal_eigenpair, ControlBounds, Domain, EigenOptions, Grid,
    ModelParams, NoiseSpec, Policy, PolicyIterationOptions, Scenario, SparseOperator,
};
use nalgebra::DMatrix;

const TIGHT: EigenOptions = EigenOptions { tol: 1e-11, max_iter: 20_000 };

fn dense(a: &SparseOperator) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.dim(), a.dim());
    for (i, j, v) in a.triplets() {
        m[(i, j)] = v;
    }
    m
}

fn dense_principal(a: &SparseOperator) -> f64 {
    dense(a).complex_eigenvalues().iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
}

fn random_grid(u: &mut Uniform, s: &Scenario) -> Grid {
    loop {
        let n = [3 + u.below(10), 3 + u.below(8), 3 + u.below(8)];
        let interior: usize = n.iter().map(|k| k - 2).product();
        if (20..=500).contains(&interior) {
            return build_grid(*s.domain(), n).unwrap();
        }
    }
}

#[test]
fn inverse_power_matches_dense_spectrum() {
    let mut u = Uniform::new(11);
    for _ in 0..10 {
        let s = random_scenario(&mut u);
        let g = random_grid(&mut u, &s);
        let policy: Vec<f64> = (0..g.num_interior()).map(|_| u.range(-0.5, 0.5)).collect();
        let a = assemble(&g, &s, &policy).unwrap();
        let e = principal_eigenpair(&a, &TIGHT).unwrap();
        let oracle = dense_principal(&a);
        assert!((e.lambda - oracle).abs() <= 1e-8, "grid {:?}: {} vs {}", g.nodes(), e.lambda, oracle);
        assert!(e.lambda > 0.0);
    }
}

#[test]
fn discrete_sine_eigenvalue_on_quasi_1d_grid() {
    for n1 in [9, 33, 129] {
        let s = Scenario::new(ModelParams::zero(), NoiseSpec::constant(1.0), Domain::new([0.0; 3], [1.0; 3])).unwrap();
        let g = build_grid(*s.domain(), [n1, 3, 3]).unwrap();
        let a = assemble(&g, &s, &vec![0.0; g.num_interior()]).unwrap();
        let e = principal_eigenpair(&a, &EigenOptions { tol: 1e-10, max_iter: 1000 }).unwrap();
        let h = g.spacing()[0];
        let exact = (1.0 - (std::f64::consts::PI * h).cos()) / (h * h);
        assert!((e.lambda - exact).abs() <= 1e-8);
        assert!((e.lambda - dense_principal(&a)).abs() <= 1e-8);
    }
}

fn enumerate_min(g: &Grid, s: &Scenario, b: &ControlBounds) -> f64 {
    let n = g.num_interior();
    (0..1u32 << n)
        .map(|mask| {
            let v: Vec<f64> = (0..n).map(|j| if mask >> j & 1 == 1 { b.u_max } else { b.u_min }).collect();
            dense_principal(&assemble(g, s, &v).unwrap())
        })
        .fold(f64::INFINITY, f64::min)
}

fn pi_opts() -> PolicyIterationOptions {
    PolicyIterationOptions { tol_lambda: 1e-12, max_outer: 100, eigen: TIGHT }
}

#[test]
fn policy_iteration_matches_enumeration_on_six_nodes() {
    let mut u = Uniform::new(5);
    for _ in 0..20 {
        let s = random_scenario(&mut u);
        let g = build_grid(*s.domain(), [8, 3, 3]).unwrap();
        let umax = u.range(0.05, 1.0);
        let b = ControlBounds { u_min: -umax, u_max: umax, tie_tolerance: 0.0 };
        let sol = policy_iteration(&g, &s, &b, &Policy::uniform(&g, 0.0), &pi_opts()).unwrap();
        assert!(sol.converged);
        assert!(sol.policy_star.values().iter().all(|v| v.abs() == umax));
        let best = enumerate_min(&g, &s, &b);
        assert!((sol.lambda_star - best).abs() <= 1e-8, "{} vs {}", sol.lambda_star, best);
    }
}

#[test]
fn policy_iteration_matches_enumeration_with_asymmetric_bounds() {
    let mut u = Uniform::new(6);
    for _ in 0..10 {
        let s = random_scenario(&mut u);
        let g = build_grid(*s.domain(), [5, 4, 4]).unwrap();
        let b = ControlBounds { u_min: -u.range(0.0, 0.5), u_max: u.range(0.1, 1.0), tie_tolerance: 0.0 };
        let sol = policy_iteration(&g, &s, &b, &Policy::uniform(&g, b.u_min), &pi_opts()).unwrap();
        assert!(sol.converged);
        let best = enumerate_min(&g, &s, &b);
        assert!((sol.lambda_star - best).abs() <= 1e-8, "{} vs {}", sol.lambda_star, best);
    }
}
