//! Randomized invariants.

use exitctl_core::{
    assemble, build_grid, eval_noise, fit_exit_rate, full_drift, improve_policy, reduced_drift, risk_sensitive_value,
    step, survival_curve, ConservationMode, ControlBounds, Domain, Face, ModelParams, NoiseKind, NoiseSpec, PathResult,
    RiskConfig, Scenario, State3, State4, SurvivalCurve,
};
use proptest::prelude::*;

fn rate() -> impl Strategy<Value = f64> {
    0.0..2.0f64
}

prop_compose! {
    fn params()(
        alpha in rate(), beta in rate(), xi in 0.0..=1.0f64, epsilon_rate in rate(), delta in rate(),
        mu in 0.0..0.1f64, extra in 0.0..0.2f64, gamma in rate(), zeta in rate(), nu in rate(),
        sigma_relapse in rate(), literal in any::<bool>(),
    ) -> ModelParams {
        ModelParams {
            alpha, beta, xi, epsilon_rate, delta, mu, mu_star: mu + extra, gamma, zeta, nu, sigma_relapse,
            conservation_mode: if literal { ConservationMode::Literal } else { ConservationMode::Corrected },
        }
    }
}

prop_compose! {
    fn simplex()(w in prop::array::uniform4(0.0..1.0f64)) -> State4 {
        let total: f64 = w.iter().sum::<f64>().max(1e-12);
        State4 { s: w[0] / total, p: w[1] / total, a: w[2] / total, r: w[3] / total }
    }
}

prop_compose! {
    fn noise()(lo in 0.01..0.2f64, width in 0.0..0.5f64, sigma0 in 0.0..1.0f64, affine in any::<bool>()) -> NoiseSpec {
        if affine {
            NoiseSpec { kind: NoiseKind::AffineClamped, sigma0, sigma_min: lo, sigma_max: lo + width }
        } else {
            NoiseSpec::constant(lo + width)
        }
    }
}

prop_compose! {
    fn domain()(lo in prop::array::uniform3(0.0..0.6f64), w in prop::array::uniform3(0.05..0.4f64)) -> Domain {
        Domain::new(lo, [lo[0] + w[0], lo[1] + w[1], lo[2] + w[2]])
    }
}

proptest! {
    #[test]
    fn corrected_mode_conserves_population(p in params(), x in simplex()) {
        let p = ModelParams { conservation_mode: ConservationMode::Corrected, ..p };
        let f = full_drift(&x, &p);
        prop_assert!(f.iter().sum::<f64>().abs() <= 1e-12);
    }

    #[test]
    fn literal_mode_leaks_nu_minus_mu(p in params(), x in simplex()) {
        let p = ModelParams { conservation_mode: ConservationMode::Literal, ..p };
        let f = full_drift(&x, &p);
        prop_assert!((f.iter().sum::<f64>() - (p.nu - p.mu) * x.r * x.a).abs() <= 1e-12);
    }

    #[test]
    fn reduced_drift_is_projection(p in params(), x in prop::array::uniform3(-0.5..1.5f64)) {
        let x = State3::from_array(x);
        let full = full_drift(&x.expand(), &p);
        let red = reduced_drift(&x, &p);
        prop_assert!((red[0] - full[0]).abs() <= 1e-14 * full[0].abs().max(1.0));
        prop_assert!((red[1] - full[2]).abs() <= 1e-14 * full[2].abs().max(1.0));
        prop_assert!((red[2] - full[3]).abs() <= 1e-14 * full[3].abs().max(1.0));
    }

    #[test]
    fn noise_stays_in_bounds(n in noise(), x1 in prop_oneof![
        -1e300..1e300f64, Just(f64::INFINITY), Just(f64::NEG_INFINITY), Just(f64::NAN),
    ]) {
        let s = eval_noise(&State3::new(x1, 0.0, 0.0), &n);
        prop_assert!(s >= n.sigma_min && s <= n.sigma_max);
    }

    #[test]
    fn step_moves_x2_x3_without_noise(
        p in params(), n in noise(), x in prop::array::uniform3(0.0..1.0f64),
        u in -1.0..1.0f64, dt in 0.0..0.1f64, dw in -1.0..1.0f64,
    ) {
        let x = State3::from_array(x);
        let a = step(&x, u, &p, &n, dt, dw, 1.0);
        let b = step(&x, u, &p, &n, dt, 0.0, 1.0);
        prop_assert_eq!(a.x2, b.x2);
        prop_assert_eq!(a.x3, b.x3);
        prop_assert!((a.x1 - b.x1 - eval_noise(&x, &n) * dw).abs() <= 1e-12);
    }

    #[test]
    fn grid_index_round_trips(n in prop::array::uniform3(3usize..9)) {
        let g = build_grid(Domain::new([0.0; 3], [1.0; 3]), n).unwrap();
        prop_assert_eq!(g.num_interior(), (n[0] - 2) * (n[1] - 2) * (n[2] - 2));
        for j in 0..g.num_interior() {
            prop_assert_eq!(g.index(g.lattice(j)), Some(j));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn assembled_operator_is_m_matrix(
        p in params(), n in noise(), d in domain(),
        dims in prop::array::uniform3(3usize..8), seed in any::<u64>(), umax in 0.0..2.0f64,
    ) {
        let s = Scenario::new(p, n, d).unwrap();
        let g = build_grid(d, dims).unwrap();
        let mut state = seed;
        let policy: Vec<f64> = (0..g.num_interior())
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                umax * ((state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
            })
            .collect();
        let a = assemble(&g, &s, &policy).unwrap();
        prop_assert!(a.check_m_matrix().is_ok());
    }

    #[test]
    fn control_change_touches_one_row(
        p in params(), d in domain(), dims in prop::array::uniform3(3usize..7),
        pick in any::<prop::sample::Index>(), v in -1.0..1.0f64,
    ) {
        let s = Scenario::new(p, NoiseSpec::constant(0.2), d).unwrap();
        let g = build_grid(d, dims).unwrap();
        let base = vec![0.0; g.num_interior()];
        let j = pick.index(g.num_interior());
        let mut moved = base.clone();
        moved[j] = v;
        let a = assemble(&g, &s, &base).unwrap();
        let b = assemble(&g, &s, &moved).unwrap();
        for ((r1, c1, x), (r2, c2, y)) in a.triplets().zip(b.triplets()) {
            prop_assert_eq!((r1, c1), (r2, c2));
            if r1 != j {
                prop_assert_eq!(x, y);
            } else if c1 != j && g.lattice(c1)[0] == g.lattice(j)[0] {
                // transverse neighbors do not depend on the control
                prop_assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn improved_policy_is_bang_bang(
        psi in prop::collection::vec(0.0..1.0f64, 5 * 3 * 4), umin in -1.0..0.0f64, umax in 0.0..1.0f64,
    ) {
        let g = build_grid(Domain::new([0.0; 3], [1.0; 3]), [7, 5, 6]).unwrap();
        let psi = g.extend_by_zero(&psi);
        let b = ControlBounds { u_min: umin, u_max: umax, tie_tolerance: 1e-9 };
        let pol = improve_policy(&g, &psi, &b).unwrap();
        prop_assert!(pol.values().iter().all(|u| *u == umin || *u == umax || *u == 0.0));
    }
}

fn exited(t: f64) -> PathResult {
    PathResult {
        exit_time: t,
        exit_face: Some(Face { axis: 0, upper: true }),
        final_state: State3::default(),
        trajectory: None,
    }
}

fn check_curve(c: &SurvivalCurve, n: usize) -> Result<(), TestCaseError> {
    prop_assert_eq!(c.p_hat[0], 1.0);
    prop_assert_eq!(c.n_paths, n as u64);
    for w in c.p_hat.windows(2) {
        prop_assert!(w[1] <= w[0]);
    }
    for i in 0..c.times.len() {
        prop_assert!(c.ci_lo[i] <= c.p_hat[i] && c.p_hat[i] <= c.ci_hi[i]);
        prop_assert_eq!(c.p_hat[i], c.survivors[i] as f64 / n as f64);
    }
    Ok(())
}

proptest! {
    #[test]
    fn survival_curve_is_monotone(times in prop::collection::vec(1e-6..2.0f64, 1..300), intervals in 1usize..60) {
        let t_max = 1.5;
        let paths: Vec<PathResult> = times
            .iter()
            .map(|&t| if t > t_max {
                PathResult { exit_time: t_max, exit_face: None, ..exited(t_max) }
            } else {
                exited(t)
            })
            .collect();
        let c = survival_curve(&paths, t_max, intervals);
        check_curve(&c, paths.len())?;
        prop_assert_eq!(c.censored_count, times.iter().filter(|t| **t > t_max).count() as u64);
        prop_assert_eq!(*c.survivors.last().unwrap(), c.censored_count);
    }

    #[test]
    fn fit_is_exact_on_exponentials(lambda in 0.01..20.0f64, scale in 0.1..1.0f64) {
        let times: Vec<f64> = (0..=40).map(|i| i as f64 * 0.05).collect();
        let p_hat: Vec<f64> = times.iter().map(|t| scale * (-lambda * t).exp()).collect();
        let c = SurvivalCurve {
            survivors: vec![0; times.len()], ci_lo: p_hat.clone(), ci_hi: p_hat.clone(),
            times, p_hat, n_paths: 0, censored_count: 0,
        };
        let r = fit_exit_rate(&c, (0.0, 2.0)).unwrap();
        prop_assert!((r.lambda_hat - lambda).abs() <= 1e-10 * lambda.max(1.0));
        prop_assert!(r.max_residual <= 1e-10);
    }

    #[test]
    fn risk_value_obeys_jensen(times in prop::collection::vec(1e-3..5.0f64, 1..200), theta in 1e-3..10.0f64) {
        let paths: Vec<PathResult> = times.iter().map(|&t| exited(t)).collect();
        let r = risk_sensitive_value(&paths, &RiskConfig { theta, eps_noise: 1.0 });
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        prop_assert!(r.value <= theta * mean * (1.0 + 1e-12));
        prop_assert!(r.value >= theta * times.iter().cloned().fold(f64::INFINITY, f64::min) * (1.0 - 1e-12));
    }
}
