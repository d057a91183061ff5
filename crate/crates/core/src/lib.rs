//! Minimal-exit-rate control of a randomly perturbed opioid-epidemic model.
//!
//! The state `(S, A, R)` of a compartmental model of prescription opioid use,
//! addiction and treatment is driven by noise on the susceptible coordinate
//! and steered by a control acting on the same coordinate. The goal is to keep
//! the process inside a box `D` for as long as possible, measured by the
//! asymptotic exit rate
//!
//! ```text
//! λ = -lim (1/t) log P{τ_D > t}
//! ```
//!
//! which equals the principal Dirichlet eigenvalue of the controlled
//! generator. The crate has three independent routes to it:
//!
//! * [`simulate`]: Euler–Maruyama paths and Monte Carlo survival estimates,
//! * [`operator`]: an upwind finite-difference discretization and its
//!   principal eigenpair,
//! * [`control`]: policy iteration on the HJB eigenvalue problem, with a
//!   verification report that cross-checks the other two.
//!
//! The crate is `no_std` (with `alloc`); file formats, configuration and the
//! command-line tool live in the `exitctl` companion crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod control;
pub mod model;
pub mod operator;
pub mod rng;
pub mod simulate;

pub use control::{
    discretization_allowance, improve_policy, policy_iteration, selector_gradient, verify_solution, CheckOutcome,
    ControlBounds, ControlError, McCrossCheck, OptimalSolution, Policy, PolicyIterationOptions, VerificationReport,
    VerifyOptions,
};
pub use model::{
    eval_noise, full_drift, reduced_drift, validate, ConservationMode, Domain, Face, ModelParams, NoiseKind, NoiseSpec,
    Scenario, State3, State4, Violation, Violations,
};
pub use operator::{
    assemble, build_grid, principal_eigenpair, principal_eigenpair_from, residual, EigenOptions, EigenPair, Grid,
    MMatrixViolation, OperatorError, SparseOperator,
};
pub use simulate::{
    default_fit_window, estimate_mean_exit_time, estimate_risk_sensitive, estimate_survival, fit_exit_rate,
    mean_exit_time, risk_sensitive_value, sample_path, simulate_ensemble, step, survival_curve, Control, MeanExitTime,
    PathResult, PathRunner, RateEstimate, RiskConfig, RiskEstimate, Sequential, SimConfig, SimError, SurvivalCurve,
};
