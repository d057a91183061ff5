//! End-to-end policy iteration and verification on the example scenario.

use std::sync::OnceLock;

use exitctl_core::{
    assemble, build_grid, policy_iteration, principal_eigenpair, selector_gradient, verify_solution, ControlBounds,
    EigenOptions, Grid, OptimalSolution, Policy, PolicyIterationOptions, Scenario, Sequential, SimConfig,
    VerifyOptions,
};

const NODES: [usize; 3] = [33, 17, 17];

fn mc() -> SimConfig {
    SimConfig { dt: 1e-3, t_max: 10.0, n_paths: 10_000, seed: 1, ..SimConfig::default() }
}

fn setup() -> (Scenario, Grid) {
    let s = Scenario::example();
    let g = build_grid(*s.domain(), NODES).unwrap();
    (s, g)
}

fn solved() -> &'static OptimalSolution {
    static SOL: OnceLock<OptimalSolution> = OnceLock::new();
    SOL.get_or_init(|| {
        let (s, g) = setup();
        let b = VerifyOptions::default().bounds;
        policy_iteration(&g, &s, &b, &Policy::uniform(&g, 0.0), &PolicyIterationOptions::default()).unwrap()
    })
}

#[test]
fn policy_iteration_improves_monotonically() {
    let sol = solved();
    assert!(sol.converged);
    assert!(sol.iterations <= 50);
    for w in sol.lambda_history.windows(2) {
        assert!(w[1] <= w[0] + 1e-10, "{:?}", sol.lambda_history);
    }
    let (s, g) = setup();
    let free = principal_eigenpair(&assemble(&g, &s, &vec![0.0; g.num_interior()]).unwrap(), &EigenOptions::default())
        .unwrap();
    assert_eq!(sol.lambda_history[0], free.lambda);
    assert!(sol.lambda_star < free.lambda);
    assert!(sol.psi_star.iter().all(|v| *v > 0.0));
    let b = VerifyOptions::default().bounds;
    assert!(sol.policy_star.values().iter().all(|u| *u == b.u_min || *u == b.u_max || *u == 0.0));
}

#[test]
fn converged_solution_verifies() {
    let (s, _) = setup();
    let report = verify_solution(solved(), &s, &mc(), &s.domain().center(), &VerifyOptions::default(), &Sequential);
    for c in report.checks() {
        assert!(c.passed, "{} measured {} threshold {} {}", c.name, c.measured, c.threshold, c.detail);
    }
    assert!(report.overall);
    let m = &report.mc_crosscheck;
    assert!(m.lambda_mc.is_finite() && m.stderr > 0.0);
}

#[test]
fn perturbed_policy_fails_argmax_at_that_node() {
    let (s, g) = setup();
    let sol = solved();
    let b = VerifyOptions::default().bounds;
    let gradient = selector_gradient(&g, &g.extend_by_zero(&sol.psi_star), &b).unwrap();
    let node = (0..gradient.len()).max_by(|&i, &j| gradient[i].abs().total_cmp(&gradient[j].abs())).unwrap();
    let mut values = sol.policy_star.values().to_vec();
    values[node] = if values[node] == b.u_max { b.u_min } else { b.u_max };
    let broken = OptimalSolution { policy_star: Policy::from_values(&g, values).unwrap(), ..sol.clone() };
    let quick = SimConfig { n_paths: 500, ..mc() };
    let report = verify_solution(&broken, &s, &quick, &s.domain().center(), &VerifyOptions::default(), &Sequential);
    assert!(!report.argmax_check.passed);
    assert_eq!(report.argmax_check.measured, 1.0);
    assert!(report.argmax_check.detail.starts_with(&format!("worst node {node} ")), "{}", report.argmax_check.detail);
    assert!(!report.overall);
}

#[test]
fn singleton_control_set_passes_vacuously() {
    let (s, g) = setup();
    let b = ControlBounds { u_min: 0.0, u_max: 0.0, tie_tolerance: 0.0 };
    let sol = policy_iteration(&g, &s, &b, &Policy::uniform(&g, 0.0), &PolicyIterationOptions::default()).unwrap();
    assert_eq!(sol.iterations, 1);
    let opts = VerifyOptions { bounds: b, ..VerifyOptions::default() };
    let report = verify_solution(&sol, &s, &mc(), &s.domain().center(), &opts, &Sequential);
    assert!(report.argmax_check.passed && report.monotonicity_check.passed);
    assert!(report.mc_crosscheck.lambda_mc.is_finite());
    assert!(report.overall, "{:?}", report.mc_crosscheck);
}
