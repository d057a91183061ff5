//! Euler–Maruyama simulation of the controlled degenerate diffusion
//!
//! ```text
//! dX = [F(X) + B u] dt + √ε B σ̂(X) dW,   B = (1, 0, 0)ᵀ
//! ```
//!
//! with first-exit detection from the box domain, and Monte Carlo
//! estimators built on the exit times: survival curves, exit-rate fits,
//! mean exit times and the risk-sensitive value `-ε log E exp(-θτ/ε)`.
//!
//! Exit is tested at step endpoints only (no Brownian-bridge correction),
//! which biases exit times upward by `O(√dt)`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::control::Policy;
use crate::model::{eval_noise, reduced_drift, Face, ModelParams, NoiseSpec, Scenario, State3};
use crate::rng::NormalStream;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    /// A simulation setting is out of range.
    InvalidConfig { field: &'static str, value: f64 },
    /// The start point is on or outside the domain boundary.
    StartOutside { face: Face },
    /// Every path was censored at `t_max`.
    AllCensored { n_paths: u64 },
    /// The fit window holds fewer than two points with survivors.
    InsufficientData { t_lo: f64, t_hi: f64, usable: usize },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidConfig { field, value } => write!(f, "invalid {field} = {value}"),
            Self::StartOutside { face } => {
                write!(f, "start point must lie strictly inside the domain (violates face {face})")
            }
            Self::AllCensored { n_paths } => {
                write!(f, "all {n_paths} paths censored; t_max is too small")
            }
            Self::InsufficientData { t_lo, t_hi, usable } => {
                write!(f, "fit window [{t_lo}, {t_hi}] has {usable} usable points, need at least 2")
            }
        }
    }
}

impl core::error::Error for SimError {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: u64,
    pub seed: u64,
    pub record_trajectory: bool,
    /// Small-noise parameter ε; the noise term is scaled by `√ε`.
    pub eps_noise: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 1e-3, t_max: 10.0, n_paths: 10_000, seed: 0, record_trajectory: false, eps_noise: 1.0 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |field, value| Err(SimError::InvalidConfig { field, value });
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("sim.dt", self.dt);
        }
        if !(self.t_max >= self.dt) || !self.t_max.is_finite() {
            return bad("sim.t_max", self.t_max);
        }
        if self.n_paths < 1 {
            return bad("sim.n_paths", 0.0);
        }
        if !(self.eps_noise > 0.0) || !self.eps_noise.is_finite() {
            return bad("sim.eps_noise", self.eps_noise);
        }
        Ok(())
    }

    /// Number of steps to reach `t_max`; the last one may be shorter than `dt`.
    pub fn n_steps(&self) -> u64 {
        let ratio = self.t_max / self.dt;
        let nearest = libm::round(ratio);
        if (ratio - nearest).abs() <= 1e-9 * nearest {
            nearest as u64
        } else {
            libm::ceil(ratio) as u64
        }
    }

    fn time_at(&self, k: u64) -> f64 {
        (k as f64 * self.dt).min(self.t_max)
    }
}

/// Feedback control applied along a path.
#[derive(Debug, Clone, Copy)]
pub enum Control<'a> {
    Constant(f64),
    /// Grid policy sampled by trilinear interpolation.
    Policy(&'a Policy),
}

impl Control<'_> {
    pub fn at(&self, x: &State3) -> f64 {
        match self {
            Self::Constant(u) => *u,
            Self::Policy(p) => p.sample(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    /// First step end time outside the domain, or `t_max` when censored.
    pub exit_time: f64,
    /// Crossed face; `None` means the path was censored at `t_max`.
    pub exit_face: Option<Face>,
    pub final_state: State3,
    pub trajectory: Option<Vec<(f64, State3)>>,
}

impl PathResult {
    pub fn is_censored(&self) -> bool {
        self.exit_face.is_none()
    }
}

/// One Euler–Maruyama step. Noise and control enter the `x1` increment only.
pub fn step(x: &State3, u: f64, p: &ModelParams, n: &NoiseSpec, dt: f64, dw: f64, eps_noise: f64) -> State3 {
    let f = reduced_drift(x, p);
    let sigma = libm::sqrt(eps_noise) * eval_noise(x, n);
    State3::new(x.x1 + (f[0] + u) * dt + sigma * dw, x.x2 + f[1] * dt, x.x3 + f[2] * dt)
}

fn check_start(x0: &State3, scenario: &Scenario) -> Result<(), SimError> {
    match scenario.domain().exit_face(x0) {
        Some(face) => Err(SimError::StartOutside { face }),
        None => Ok(()),
    }
}

/// Simulates path `path_index` until first exit or `t_max`. The Brownian
/// increments depend only on `(cfg.seed, path_index, step)`.
pub fn sample_path(
    x0: &State3,
    control: Control<'_>,
    scenario: &Scenario,
    cfg: &SimConfig,
    path_index: u64,
) -> Result<PathResult, SimError> {
    cfg.validate()?;
    check_start(x0, scenario)?;
    Ok(run_path(x0, control, scenario, cfg, path_index))
}

fn run_path(x0: &State3, control: Control<'_>, scenario: &Scenario, cfg: &SimConfig, path_index: u64) -> PathResult {
    let mut normals = NormalStream::new(cfg.seed, path_index);
    let mut trajectory = cfg.record_trajectory.then(|| vec![(0.0, *x0)]);
    let mut x = *x0;
    let mut t_prev = 0.0;
    for k in 1..=cfg.n_steps() {
        let t = cfg.time_at(k);
        let dt = t - t_prev;
        let dw = libm::sqrt(dt) * normals.next_normal();
        x = step(&x, control.at(&x), scenario.params(), scenario.noise(), dt, dw, cfg.eps_noise);
        if let Some(tr) = trajectory.as_mut() {
            tr.push((t, x));
        }
        if let Some(face) = scenario.domain().exit_face(&x) {
            return PathResult { exit_time: t, exit_face: Some(face), final_state: x, trajectory };
        }
        t_prev = t;
    }
    PathResult { exit_time: cfg.t_max, exit_face: None, final_state: x, trajectory }
}

/// Maps path indices to results. Implementations may run paths in any
/// order or concurrently but must return results ordered by index.
pub trait PathRunner {
    fn run<F>(&self, n_paths: u64, path: F) -> Vec<PathResult>
    where
        F: Fn(u64) -> PathResult + Sync + Send;
}

/// Runs paths one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl PathRunner for Sequential {
    fn run<F>(&self, n_paths: u64, path: F) -> Vec<PathResult>
    where
        F: Fn(u64) -> PathResult + Sync + Send,
    {
        (0..n_paths).map(path).collect()
    }
}

/// Simulates paths `0..cfg.n_paths` from `x0`.
pub fn simulate_ensemble<R: PathRunner>(
    x0: &State3,
    control: Control<'_>,
    scenario: &Scenario,
    cfg: &SimConfig,
    runner: &R,
) -> Result<Vec<PathResult>, SimError> {
    cfg.validate()?;
    check_start(x0, scenario)?;
    let cfg = SimConfig { record_trajectory: false, ..*cfg };
    Ok(runner.run(cfg.n_paths, |i| run_path(x0, control, scenario, &cfg, i)))
}

/// Empirical `P{τ > t}` on a uniform time grid with 95% normal bands.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub survivors: Vec<u64>,
    pub p_hat: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub n_paths: u64,
    pub censored_count: u64,
}

/// Builds the survival curve on `intervals + 1` equally spaced times in
/// `[0, t_max]`. Censored paths survive through `t_max`.
pub fn survival_curve(results: &[PathResult], t_max: f64, intervals: usize) -> SurvivalCurve {
    let intervals = intervals.max(1);
    let n = results.len() as u64;
    let mut exits: Vec<f64> = results.iter().filter(|r| !r.is_censored()).map(|r| r.exit_time).collect();
    exits.sort_by(f64::total_cmp);
    let censored_count = n - exits.len() as u64;

    let mut curve = SurvivalCurve {
        times: Vec::with_capacity(intervals + 1),
        survivors: Vec::with_capacity(intervals + 1),
        p_hat: Vec::with_capacity(intervals + 1),
        ci_lo: Vec::with_capacity(intervals + 1),
        ci_hi: Vec::with_capacity(intervals + 1),
        n_paths: n,
        censored_count,
    };
    for i in 0..=intervals {
        let t = if i == intervals { t_max } else { t_max * i as f64 / intervals as f64 };
        let exited = exits.partition_point(|&e| e <= t) as u64;
        let alive = n - exited;
        let p = if n == 0 { 0.0 } else { alive as f64 / n as f64 };
        let half = Z95 * libm::sqrt(p * (1.0 - p) / n.max(1) as f64);
        curve.times.push(t);
        curve.survivors.push(alive);
        curve.p_hat.push(p);
        curve.ci_lo.push((p - half).max(0.0));
        curve.ci_hi.push((p + half).min(1.0));
    }
    curve
}

pub fn estimate_survival<R: PathRunner>(
    x0: &State3,
    control: Control<'_>,
    scenario: &Scenario,
    cfg: &SimConfig,
    intervals: usize,
    runner: &R,
) -> Result<SurvivalCurve, SimError> {
    let results = simulate_ensemble(x0, control, scenario, cfg, runner)?;
    Ok(survival_curve(&results, cfg.t_max, intervals))
}

/// Least-squares slope of `-log p_hat(t)` against `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub lambda_hat: f64,
    /// Monte Carlo standard error of the slope. Zero for a curve that was
    /// not sampled (`n_paths == 0`).
    pub stderr: f64,
    /// Textbook OLS standard error from the residuals, which treats the
    /// points as independent; infinite when only two points are used.
    pub residual_stderr: f64,
    pub fit_window: (f64, f64),
    pub r_squared: f64,
    pub n_points: usize,
    /// Largest absolute regression residual.
    pub max_residual: f64,
}

pub fn fit_exit_rate(curve: &SurvivalCurve, window: (f64, f64)) -> Result<RateEstimate, SimError> {
    let (t_lo, t_hi) = window;
    let pts: Vec<(f64, f64)> = curve
        .times
        .iter()
        .zip(&curve.p_hat)
        .filter(|(t, p)| **t >= t_lo && **t <= t_hi && **p > 0.0)
        .map(|(t, p)| (*t, -libm::log(*p)))
        .collect();
    let n = pts.len();
    if n < 2 {
        return Err(SimError::InsufficientData { t_lo, t_hi, usable: n });
    }
    let nf = n as f64;
    let t_mean = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let y_mean = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - t_mean) * (p.0 - t_mean)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - t_mean) * (p.1 - y_mean)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - y_mean) * (p.1 - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    let (ssr, max_residual) = pts.iter().fold((0.0, 0.0f64), |(s, m), p| {
        let r = p.1 - (intercept + slope * p.0);
        (s + r * r, m.max(r.abs()))
    });
    let residual_stderr = if n > 2 { libm::sqrt(ssr / (nf - 2.0) / sxx) } else { f64::INFINITY };
    let r_squared = if syy > 0.0 { 1.0 - ssr / syy } else { 1.0 };
    Ok(RateEstimate {
        lambda_hat: slope,
        stderr: libm::sqrt(slope_sampling_variance(&pts, t_mean, sxx, curve.n_paths)),
        residual_stderr,
        fit_window: (t_lo, t_hi),
        r_squared,
        n_points: n,
        max_residual,
    })
}

/// Variance of the OLS slope under multinomial sampling of exit times.
///
/// For `s ≤ t`, `Cov(p̂(s), p̂(t)) = p(t)(1 - p(s))/n`, so by the delta method
/// `Cov(-log p̂(s), -log p̂(t)) = v(s)` with `v(t) = (1 - p(t))/(n p(t))`,
/// nondecreasing in `t`. With slope weights `w_i = (t_i - t̄)/Sxx`,
/// `Σ_ij w_i w_j v(min(t_i, t_j)) = Σ_k (v_k - v_{k-1}) (Σ_{i≥k} w_i)²`.
fn slope_sampling_variance(pts: &[(f64, f64)], t_mean: f64, sxx: f64, n_paths: u64) -> f64 {
    if n_paths == 0 {
        return 0.0;
    }
    let n = n_paths as f64;
    let mut tail: f64 = pts.iter().map(|p| (p.0 - t_mean) / sxx).sum();
    let mut v_prev = 0.0;
    let mut var = 0.0;
    for &(t, y) in pts {
        let p = libm::exp(-y);
        let v = (1.0 - p) / (n * p);
        var += (v - v_prev) * tail * tail;
        tail -= (t - t_mean) / sxx;
        v_prev = v;
    }
    var.max(0.0)
}

/// `[t_max/2, last t with at least max(10, n_paths/1000) survivors]`: skips
/// the early transient and the sparse tail.
pub fn default_fit_window(curve: &SurvivalCurve) -> Result<(f64, f64), SimError> {
    let t_lo = curve.times.last().copied().unwrap_or(0.0) / 2.0;
    let need = (curve.n_paths / 1000).max(10);
    let t_hi =
        curve.times.iter().zip(&curve.survivors).filter(|(_, s)| **s >= need).map(|(t, _)| *t).next_back().unwrap_or(0.0);
    if t_hi <= t_lo {
        return Err(SimError::InsufficientData { t_lo, t_hi, usable: 0 });
    }
    Ok((t_lo, t_hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanExitTime {
    pub mean: f64,
    pub stderr: f64,
    pub censored_count: u64,
}

/// Sample mean over paths that exited before `t_max`.
pub fn mean_exit_time(results: &[PathResult]) -> Result<MeanExitTime, SimError> {
    let exits: Vec<f64> = results.iter().filter(|r| !r.is_censored()).map(|r| r.exit_time).collect();
    let censored_count = (results.len() - exits.len()) as u64;
    if exits.is_empty() {
        return Err(SimError::AllCensored { n_paths: results.len() as u64 });
    }
    let (mean, var) = mean_var(&exits);
    Ok(MeanExitTime { mean, stderr: libm::sqrt(var / exits.len() as f64), censored_count })
}

pub fn estimate_mean_exit_time<R: PathRunner>(
    x0: &State3,
    control: Control<'_>,
    scenario: &Scenario,
    cfg: &SimConfig,
    runner: &R,
) -> Result<MeanExitTime, SimError> {
    mean_exit_time(&simulate_ensemble(x0, control, scenario, cfg, runner)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskConfig {
    pub theta: f64,
    pub eps_noise: f64,
}

impl RiskConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return Err(SimError::InvalidConfig { field: "risk.theta", value: self.theta });
        }
        if !(self.eps_noise > 0.0) || !self.eps_noise.is_finite() {
            return Err(SimError::InvalidConfig { field: "risk.eps_noise", value: self.eps_noise });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    /// `-ε log( mean exp(-θ τ / ε) )`.
    pub value: f64,
    /// Delta-method standard error of `value`.
    pub stderr: f64,
    pub censored_count: u64,
}

/// Risk-sensitive value of an ensemble. Censored paths enter with
/// `τ = t_max`, which can only raise the value.
pub fn risk_sensitive_value(results: &[PathResult], rc: &RiskConfig) -> RiskEstimate {
    let scale = rc.theta / rc.eps_noise;
    let exponents: Vec<f64> = results.iter().map(|r| -scale * r.exit_time).collect();
    let shift = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = exponents.iter().map(|e| libm::exp(e - shift)).collect();
    let (m, var) = mean_var(&weights);
    let n = results.len() as f64;
    RiskEstimate {
        value: -rc.eps_noise * (libm::log(m) + shift),
        stderr: rc.eps_noise * libm::sqrt(var / n) / m,
        censored_count: results.iter().filter(|r| r.is_censored()).count() as u64,
    }
}

/// Simulates with noise scaled by `√rc.eps_noise` and evaluates the
/// risk-sensitive value.
pub fn estimate_risk_sensitive<R: PathRunner>(
    x0: &State3,
    control: Control<'_>,
    scenario: &Scenario,
    cfg: &SimConfig,
    rc: &RiskConfig,
    runner: &R,
) -> Result<RiskEstimate, SimError> {
    rc.validate()?;
    let cfg = SimConfig { eps_noise: rc.eps_noise, ..*cfg };
    let results = simulate_ensemble(x0, control, scenario, &cfg, runner)?;
    Ok(risk_sensitive_value(&results, rc))
}

/// Mean and unbiased variance (zero for a single sample).
fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}
