//! Scenario configuration: a JSON document with required model, noise,
//! domain and start-point sections and defaulted solver settings.

use std::fmt;
use std::path::PathBuf;

use exitctl_core::{
    validate, ConservationMode, ControlBounds, Domain, EigenOptions, ModelParams, NoiseKind, NoiseSpec,
    PolicyIterationOptions, RiskConfig, Scenario, SimConfig, State3, VerifyOptions,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Free text carried along unchanged.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub model: ModelConfig,
    pub noise: NoiseConfig,
    pub domain: DomainConfig,
    /// Start point `[x1, x2, x3]`, strictly inside the domain.
    pub x0: [f64; 3],
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub risk: RiskSection,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConservationConfig {
    #[default]
    Corrected,
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub alpha: f64,
    pub beta: f64,
    pub xi: f64,
    pub epsilon_rate: f64,
    pub delta: f64,
    pub mu: f64,
    pub mu_star: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub nu: f64,
    pub sigma_relapse: f64,
    #[serde(default)]
    pub conservation_mode: ConservationConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKindConfig {
    Constant,
    AffineClamped,
}

/// For the constant kind the clamps default to `sigma0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKindConfig,
    pub sigma0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: u64,
    pub seed: u64,
    pub eps_noise: f64,
    /// Number of intervals of the survival time grid.
    pub survival_intervals: usize,
    /// Exit-rate fit window `[t_lo, t_hi]`; the default window when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<[f64; 2]>,
    /// Path simulated by the `simulate` command.
    pub trajectory_path: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            dt: sim.dt,
            t_max: sim.t_max,
            n_paths: sim.n_paths,
            seed: sim.seed,
            eps_noise: sim.eps_noise,
            survival_intervals: VerifyOptions::default().survival_intervals,
            fit_window: None,
            trajectory_path: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Node counts per axis, boundary included.
    pub n: [usize; 3],
}

impl Default for GridSection {
    fn default() -> Self {
        Self { n: [33, 17, 17] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub u_min: f64,
    pub u_max: f64,
    pub tie_tolerance: f64,
    /// Constant control used by the simulation and `eigen` commands when
    /// no policy file is given.
    pub fixed_value: f64,
    /// Optional policy CSV (`x1,x2,x3,psi,u`, as written by `optimize`),
    /// relative to the configuration file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy_file: Option<PathBuf>,
}

impl Default for ControlSection {
    fn default() -> Self {
        let b = VerifyOptions::default().bounds;
        Self { u_min: b.u_min, u_max: b.u_max, tie_tolerance: b.tie_tolerance, fixed_value: 0.0, policy_file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskSection {
    pub thetas: Vec<f64>,
    pub eps_noise: f64,
}

impl Default for RiskSection {
    fn default() -> Self {
        Self { thetas: vec![0.01, 0.1, 1.0], eps_noise: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub tol_lambda: f64,
    pub max_outer: usize,
    pub solver_tol: f64,
    pub max_iter: usize,
    pub monotonicity_slack: f64,
    pub rate_tolerance_multiplier: f64,
    pub allowance_per_spacing: f64,
    pub allowance_per_sqrt_dt: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let pi = PolicyIterationOptions::default();
        let v = VerifyOptions::default();
        Self {
            tol_lambda: pi.tol_lambda,
            max_outer: pi.max_outer,
            solver_tol: pi.eigen.tol,
            max_iter: pi.eigen.max_iter,
            monotonicity_slack: v.monotonicity_slack,
            rate_tolerance_multiplier: v.rate_tolerance_multiplier,
            allowance_per_spacing: v.allowance_per_spacing,
            allowance_per_sqrt_dt: v.allowance_per_sqrt_dt,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Configuration problems, all reported with a dotted field path.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("missing required field `{path}`")]
    Missing { path: String },
    #[error("unknown field `{path}`")]
    Unknown { path: String },
    #[error("invalid value at `{path}` (line {line}, column {column}): {message}")]
    Type { path: String, line: usize, column: usize, message: String },
    #[error("invalid configuration:\n{}", list(.0))]
    Invalid(Vec<Problem>),
}

/// One failed constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub field: String,
    pub value: String,
    pub constraint: String,
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}: {}", self.field, self.value, self.constraint)
    }
}

fn list(problems: &[Problem]) -> String {
    problems.iter().map(|p| format!("  {p}")).collect::<Vec<_>>().join("\n")
}

impl ConfigError {
    /// Field paths of every reported problem.
    pub fn fields(&self) -> Vec<String> {
        match self {
            Self::Syntax { .. } => Vec::new(),
            Self::Missing { path } | Self::Unknown { path } | Self::Type { path, .. } => vec![path.clone()],
            Self::Invalid(ps) => ps.iter().map(|p| p.field.clone()).collect(),
        }
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg = deserialize(text)?;
    cfg.check()?;
    Ok(cfg)
}

fn deserialize(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let result: Result<ScenarioConfig, _> = serde_path_to_error::deserialize(&mut de);
    let err = match result {
        Ok(cfg) => {
            return de.end().map(|()| cfg).map_err(|e| ConfigError::Syntax {
                line: e.line(),
                column: e.column(),
                message: strip_position(&e),
            })
        }
        Err(err) => err,
    };
    let path = err.path().to_string();
    let inner = err.inner();
    let message = strip_position(inner);
    if inner.is_syntax() || inner.is_eof() {
        return Err(ConfigError::Syntax { line: inner.line(), column: inner.column(), message });
    }
    if let Some(name) = quoted_after(&message, "missing field ") {
        return Err(ConfigError::Missing { path: join(&path, &name) });
    }
    if message.starts_with("unknown field ") {
        return Err(ConfigError::Unknown { path });
    }
    Err(ConfigError::Type { path, line: inner.line(), column: inner.column(), message })
}

fn strip_position(e: &serde_json::Error) -> String {
    let s = e.to_string();
    match s.rfind(" at line ") {
        Some(i) => s[..i].to_string(),
        None => s,
    }
}

fn quoted_after(message: &str, prefix: &str) -> Option<String> {
    let rest = message.strip_prefix(prefix)?;
    let rest = rest.strip_prefix('`')?;
    Some(rest[..rest.find('`')?].to_string())
}

fn join(path: &str, field: &str) -> String {
    if path.is_empty() || path == "." {
        field.to_string()
    } else {
        format!("{path}.{field}")
    }
}

/// Compact JSON with every default filled in.
pub fn to_json(cfg: &ScenarioConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

impl ScenarioConfig {
    pub fn params(&self) -> ModelParams {
        let m = &self.model;
        ModelParams {
            alpha: m.alpha,
            beta: m.beta,
            xi: m.xi,
            epsilon_rate: m.epsilon_rate,
            delta: m.delta,
            mu: m.mu,
            mu_star: m.mu_star,
            gamma: m.gamma,
            zeta: m.zeta,
            nu: m.nu,
            sigma_relapse: m.sigma_relapse,
            conservation_mode: match m.conservation_mode {
                ConservationConfig::Corrected => ConservationMode::Corrected,
                ConservationConfig::Literal => ConservationMode::Literal,
            },
        }
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        let n = &self.noise;
        NoiseSpec {
            kind: match n.kind {
                NoiseKindConfig::Constant => NoiseKind::Constant,
                NoiseKindConfig::AffineClamped => NoiseKind::AffineClamped,
            },
            sigma0: n.sigma0,
            sigma_min: n.sigma_min.unwrap_or(n.sigma0),
            sigma_max: n.sigma_max.unwrap_or(n.sigma0),
        }
    }

    pub fn domain(&self) -> Domain {
        Domain::new(self.domain.lo, self.domain.hi)
    }

    /// Validated model, noise and domain.
    pub fn scenario(&self) -> Scenario {
        Scenario::new(self.params(), self.noise_spec(), self.domain()).expect("checked at parse time")
    }

    pub fn x0(&self) -> State3 {
        State3::from_array(self.x0)
    }

    pub fn sim(&self) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            dt: s.dt,
            t_max: s.t_max,
            n_paths: s.n_paths,
            seed: s.seed,
            record_trajectory: false,
            eps_noise: s.eps_noise,
        }
    }

    pub fn bounds(&self) -> ControlBounds {
        let c = &self.control;
        ControlBounds { u_min: c.u_min, u_max: c.u_max, tie_tolerance: c.tie_tolerance }
    }

    pub fn eigen_options(&self) -> EigenOptions {
        EigenOptions { tol: self.tolerances.solver_tol, max_iter: self.tolerances.max_iter }
    }

    pub fn policy_iteration_options(&self) -> PolicyIterationOptions {
        PolicyIterationOptions {
            tol_lambda: self.tolerances.tol_lambda,
            max_outer: self.tolerances.max_outer,
            eigen: self.eigen_options(),
        }
    }

    pub fn verify_options(&self) -> VerifyOptions {
        let t = &self.tolerances;
        VerifyOptions {
            bounds: self.bounds(),
            solver_tol: t.solver_tol,
            monotonicity_slack: t.monotonicity_slack,
            rate_tolerance_multiplier: t.rate_tolerance_multiplier,
            allowance_per_spacing: t.allowance_per_spacing,
            allowance_per_sqrt_dt: t.allowance_per_sqrt_dt,
            survival_intervals: self.sim.survival_intervals,
            fit_window: self.sim.fit_window.map(|w| (w[0], w[1])),
        }
    }

    pub fn risk_configs(&self) -> Vec<RiskConfig> {
        self.risk.thetas.iter().map(|&theta| RiskConfig { theta, eps_noise: self.risk.eps_noise }).collect()
    }

    /// Every invariant violation, not just the first.
    pub fn check(&self) -> Result<(), ConfigError> {
        let mut problems: Vec<Problem> = match validate(&self.params(), &self.noise_spec(), &self.domain()) {
            Ok(_) => Vec::new(),
            Err(v) => {
                v.0.iter()
                    .map(|v| Problem {
                        field: v.field.to_string(),
                        value: v.value.to_string(),
                        constraint: v.constraint.to_string(),
                    })
                    .collect()
            }
        };
        let mut bad = |field: &str, value: String, constraint: &str| {
            problems.push(Problem { field: field.to_string(), value, constraint: constraint.to_string() });
        };

        if self.noise.kind == NoiseKindConfig::Constant
            && (self.noise.sigma_min.is_some() || self.noise.sigma_max.is_some())
            && (self.noise.sigma_min.unwrap_or(self.noise.sigma0) > self.noise.sigma0
                || self.noise.sigma_max.unwrap_or(self.noise.sigma0) < self.noise.sigma0)
        {
            bad("noise.sigma0", self.noise.sigma0.to_string(), "constant noise within [sigma_min, sigma_max]");
        }
        let d = self.domain();
        if !self.x0.iter().all(|v| v.is_finite()) || !d.contains(&self.x0()) {
            bad("x0", format!("{:?}", self.x0), "strictly inside the domain");
        }
        let s = &self.sim;
        if !(s.dt > 0.0) || !s.dt.is_finite() {
            bad("sim.dt", s.dt.to_string(), "dt > 0");
        }
        if !(s.t_max >= s.dt) || !s.t_max.is_finite() {
            bad("sim.t_max", s.t_max.to_string(), "t_max >= dt");
        }
        if s.n_paths < 1 {
            bad("sim.n_paths", s.n_paths.to_string(), "n_paths >= 1");
        }
        if !(s.eps_noise > 0.0) || !s.eps_noise.is_finite() {
            bad("sim.eps_noise", s.eps_noise.to_string(), "eps_noise > 0");
        }
        if s.survival_intervals < 1 {
            bad("sim.survival_intervals", s.survival_intervals.to_string(), "at least one interval");
        }
        if let Some([lo, hi]) = s.fit_window {
            if !(lo < hi) || lo < 0.0 || !(hi <= s.t_max) {
                bad("sim.fit_window", format!("[{lo}, {hi}]"), "0 <= t_lo < t_hi <= t_max");
            }
        }
        if s.trajectory_path >= s.n_paths.max(1) {
            bad("sim.trajectory_path", s.trajectory_path.to_string(), "trajectory_path < n_paths");
        }
        for (i, n) in self.grid.n.iter().enumerate() {
            if *n < 3 {
                bad(&format!("grid.n[{i}]"), n.to_string(), "at least 3 nodes per axis");
            }
        }
        let c = &self.control;
        if !(c.u_min <= c.u_max) || !c.u_min.is_finite() || !c.u_max.is_finite() {
            bad("control.u_max", c.u_max.to_string(), "u_min <= u_max, both finite");
        }
        if !(c.tie_tolerance >= 0.0) {
            bad("control.tie_tolerance", c.tie_tolerance.to_string(), "tie_tolerance >= 0");
        }
        if !c.fixed_value.is_finite() {
            bad("control.fixed_value", c.fixed_value.to_string(), "finite");
        }
        for (i, t) in self.risk.thetas.iter().enumerate() {
            if !(*t > 0.0) || !t.is_finite() {
                bad(&format!("risk.thetas[{i}]"), t.to_string(), "theta > 0");
            }
        }
        if !(self.risk.eps_noise > 0.0) || !self.risk.eps_noise.is_finite() {
            bad("risk.eps_noise", self.risk.eps_noise.to_string(), "eps_noise > 0");
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.tol_lambda", t.tol_lambda),
            ("tolerances.solver_tol", t.solver_tol),
            ("tolerances.rate_tolerance_multiplier", t.rate_tolerance_multiplier),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                bad(name, v.to_string(), "> 0");
            }
        }
        for (name, v) in [
            ("tolerances.monotonicity_slack", t.monotonicity_slack),
            ("tolerances.allowance_per_spacing", t.allowance_per_spacing),
            ("tolerances.allowance_per_sqrt_dt", t.allowance_per_sqrt_dt),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                bad(name, v.to_string(), ">= 0");
            }
        }
        if t.max_outer < 1 {
            bad("tolerances.max_outer", t.max_outer.to_string(), ">= 1");
        }
        if t.max_iter < 1 {
            bad("tolerances.max_iter", t.max_iter.to_string(), ">= 1");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }
}
