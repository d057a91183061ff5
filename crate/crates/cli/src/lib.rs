//! Batch front end for `exitctl-core`: JSON scenario files, CSV outputs, a
//! run manifest and a rayon-backed Monte Carlo runner.
//!
//! Each subcommand reads one configuration file, applies the flag
//! overrides, writes its outputs plus `manifest.json` into the output
//! directory and maps failures onto exit codes (see [`ExitStatus`]).

pub mod config;
pub mod formats;
pub mod manifest;
pub mod runner;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use exitctl_core::{
    assemble, build_grid, default_fit_window, fit_exit_rate, mean_exit_time, policy_iteration, principal_eigenpair,
    risk_sensitive_value, sample_path, simulate_ensemble, survival_curve, verify_solution, Control, Grid, Policy,
    Scenario, SimConfig,
};

use config::{parse_config, to_json, ConfigError, ScenarioConfig};
use formats::Cell;
use manifest::{sha256_hex, FileEntry, Manifest};
use runner::Parallel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Simulate,
    Survival,
    Meantime,
    Eigen { dump_operator: bool },
    Optimize,
    Verify,
    Risk,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Validate => "validate",
            Self::Simulate => "simulate",
            Self::Survival => "survival",
            Self::Meantime => "meantime",
            Self::Eigen { .. } => "eigen",
            Self::Optimize => "optimize",
            Self::Verify => "verify",
            Self::Risk => "risk",
        }
    }
}

/// Flag overrides applied on top of the configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_paths: Option<u64>,
    pub out: Option<PathBuf>,
    /// Monte Carlo worker threads; all available cores when absent.
    pub workers: Option<usize>,
}

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    /// Usage, configuration or file error.
    Config = 1,
    /// Solver non-convergence or unusable Monte Carlo output.
    Numerical = 2,
    /// `verify` ran but a check failed.
    VerificationFailed = 3,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Io { path: PathBuf, source: std::io::Error },
    Input(String),
    Numerical(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(e) => write!(f, "{e}"),
            Self::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Self::Input(m) => f.write_str(m),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn status(&self) -> ExitStatus {
        match self {
            Self::Numerical(_) => ExitStatus::Numerical,
            _ => ExitStatus::Config,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

fn numerical<E: fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

/// Result of a command: files written, lines for stdout, exit status.
#[derive(Debug)]
pub struct Outcome {
    pub status: ExitStatus,
    pub files: Vec<PathBuf>,
    pub messages: Vec<String>,
}

/// Reads the configuration at `path` and applies `overrides`.
pub fn load(path: &Path, overrides: &Overrides) -> Result<(ScenarioConfig, Vec<u8>), CliError> {
    let raw = fs::read(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let text =
        String::from_utf8(raw.clone()).map_err(|_| CliError::Input(format!("{}: not valid UTF-8", path.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = overrides.seed {
        cfg.sim.seed = seed;
    }
    if let Some(n) = overrides.n_paths {
        cfg.sim.n_paths = n;
    }
    if let Some(out) = &overrides.out {
        cfg.output_dir = out.clone();
    }
    if let Some(policy) = &cfg.control.policy_file {
        if policy.is_relative() {
            let base = path.parent().unwrap_or(Path::new(""));
            cfg.control.policy_file = Some(base.join(policy));
        }
    }
    cfg.check()?;
    Ok((cfg, raw))
}

/// Runs `command` with the configuration at `config_path`.
pub fn execute(command: Command, config_path: &Path, overrides: &Overrides) -> Result<Outcome, CliError> {
    let (cfg, raw) = load(config_path, overrides)?;
    if command == Command::Validate {
        return Ok(Outcome {
            status: ExitStatus::Success,
            files: Vec::new(),
            messages: vec![format!("{}: configuration valid", config_path.display())],
        });
    }
    let workers =
        overrides.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let runner = Parallel::new(workers).map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    let mut run = Run { cfg: &cfg, files: Vec::new(), messages: Vec::new() };
    let result = run.dispatch(command, &runner);
    // outputs produced before a failure are still written
    let written = run.write(command, &raw)?;
    let status = result?;
    Ok(Outcome { status, files: written, messages: run.messages })
}

struct Run<'a> {
    cfg: &'a ScenarioConfig,
    files: Vec<(&'static str, Vec<u8>)>,
    messages: Vec<String>,
}

impl Run<'_> {
    fn emit(&mut self, name: &'static str, bytes: Vec<u8>) {
        self.files.push((name, bytes));
    }

    fn say(&mut self, line: String) {
        self.messages.push(line);
    }

    fn dispatch(&mut self, command: Command, runner: &Parallel) -> Result<ExitStatus, CliError> {
        let cfg = self.cfg;
        let scenario = cfg.scenario();
        let x0 = cfg.x0();
        let sim = cfg.sim();
        match command {
            Command::Validate => Ok(ExitStatus::Success),
            Command::Simulate => {
                let grid = self.grid()?;
                let policy = self.policy(&grid)?;
                let traced = SimConfig { record_trajectory: true, ..sim };
                let path = sample_path(&x0, control(&policy, cfg), &scenario, &traced, cfg.sim.trajectory_path)
                    .map_err(|e| CliError::Input(e.to_string()))?;
                self.emit("trajectory.csv", formats::trajectory_csv(&path));
                match path.exit_face {
                    Some(face) => self.say(format!("exit_time={} face={face}", path.exit_time)),
                    None => self.say(format!("censored at t_max={}", path.exit_time)),
                }
                Ok(ExitStatus::Success)
            }
            Command::Survival => {
                let grid = self.grid()?;
                let policy = self.policy(&grid)?;
                let paths = simulate_ensemble(&x0, control(&policy, cfg), &scenario, &sim, runner)
                    .map_err(|e| CliError::Input(e.to_string()))?;
                let curve = survival_curve(&paths, sim.t_max, cfg.sim.survival_intervals);
                self.emit("survival.csv", formats::survival_csv(&curve));
                let window = match cfg.sim.fit_window {
                    Some([lo, hi]) => (lo, hi),
                    None => default_fit_window(&curve).map_err(numerical)?,
                };
                let rate = fit_exit_rate(&curve, window).map_err(numerical)?;
                self.emit("exit_rate.csv", formats::summary_csv(&formats::rate_summary(&rate, &curve)));
                self.say(format!("lambda_hat={} stderr={}", rate.lambda_hat, rate.stderr));
                Ok(ExitStatus::Success)
            }
            Command::Meantime => {
                let grid = self.grid()?;
                let policy = self.policy(&grid)?;
                let paths = simulate_ensemble(&x0, control(&policy, cfg), &scenario, &sim, runner)
                    .map_err(|e| CliError::Input(e.to_string()))?;
                let m = mean_exit_time(&paths).map_err(numerical)?;
                self.emit(
                    "mean_exit_time.csv",
                    formats::summary_csv(&[
                        ("mean", m.mean.cell()),
                        ("stderr", m.stderr.cell()),
                        ("censored_count", m.censored_count.to_string()),
                        ("n_paths", sim.n_paths.to_string()),
                    ]),
                );
                self.say(format!("mean_exit_time={} stderr={} censored={}", m.mean, m.stderr, m.censored_count));
                Ok(ExitStatus::Success)
            }
            Command::Eigen { dump_operator } => {
                let grid = self.grid()?;
                let values = match self.policy(&grid)? {
                    Some(p) => p.values().to_vec(),
                    None => vec![cfg.control.fixed_value; grid.num_interior()],
                };
                let a = assemble(&grid, &scenario, &values).map_err(numerical)?;
                if dump_operator {
                    self.emit("operator.csv", formats::operator_csv(&a));
                }
                let e = principal_eigenpair(&a, &cfg.eigen_options()).map_err(numerical)?;
                self.emit("eigenpair.csv", formats::eigenpair_csv(&grid, &e));
                self.say(format!("lambda={} iterations={} residual={}", e.lambda, e.iterations, e.residual_norm));
                Ok(ExitStatus::Success)
            }
            Command::Optimize => {
                let sol = self.optimize(&scenario)?;
                self.emit("optimal_solution.csv", formats::solution_csv(&sol));
                self.emit("lambda_history.csv", formats::history_csv(&sol.lambda_history));
                self.say(format!("lambda_star={} iterations={}", sol.lambda_star, sol.iterations));
                if sol.converged {
                    Ok(ExitStatus::Success)
                } else {
                    Err(CliError::Numerical(format!(
                        "policy iteration did not converge in {} outer iterations; best lambda {} written",
                        sol.iterations, sol.lambda_star
                    )))
                }
            }
            Command::Verify => {
                let sol = self.optimize(&scenario)?;
                if !sol.converged {
                    return Err(CliError::Numerical(format!(
                        "policy iteration did not converge in {} outer iterations",
                        sol.iterations
                    )));
                }
                let report = verify_solution(&sol, &scenario, &sim, &x0, &cfg.verify_options(), runner);
                let text = formats::report_text(&report);
                self.say(String::from_utf8_lossy(&text).trim_end().to_string());
                self.emit("verification_report.txt", text);
                Ok(if report.overall { ExitStatus::Success } else { ExitStatus::VerificationFailed })
            }
            Command::Risk => {
                let grid = self.grid()?;
                let policy = self.policy(&grid)?;
                let noisy = SimConfig { eps_noise: cfg.risk.eps_noise, ..sim };
                let paths = simulate_ensemble(&x0, control(&policy, cfg), &scenario, &noisy, runner)
                    .map_err(|e| CliError::Input(e.to_string()))?;
                let rows: Vec<_> =
                    cfg.risk_configs().into_iter().map(|rc| (rc, risk_sensitive_value(&paths, &rc))).collect();
                for (rc, r) in &rows {
                    self.say(format!("theta={} value={} stderr={}", rc.theta, r.value, r.stderr));
                }
                self.emit("risk.csv", formats::risk_csv(&rows));
                Ok(ExitStatus::Success)
            }
        }
    }

    fn grid(&self) -> Result<Grid, CliError> {
        build_grid(self.cfg.domain(), self.cfg.grid.n).map_err(|e| CliError::Input(e.to_string()))
    }

    fn policy(&self, grid: &Grid) -> Result<Option<Policy>, CliError> {
        match &self.cfg.control.policy_file {
            None => Ok(None),
            Some(path) => formats::read_policy(path, grid).map(Some).map_err(|e| CliError::Input(e.to_string())),
        }
    }

    fn optimize(&self, scenario: &Scenario) -> Result<exitctl_core::OptimalSolution, CliError> {
        let grid = self.grid()?;
        let initial = match self.policy(&grid)? {
            Some(p) => p,
            None => Policy::uniform(&grid, self.cfg.bounds().neutral()),
        };
        policy_iteration(&grid, scenario, &self.cfg.bounds(), &initial, &self.cfg.policy_iteration_options()).map_err(
            |e| match e {
                exitctl_core::ControlError::Operator(_) => numerical(e),
                _ => CliError::Input(e.to_string()),
            },
        )
    }

    /// Writes the collected files and the manifest into the output directory.
    fn write(&self, command: Command, raw_config: &[u8]) -> Result<Vec<PathBuf>, CliError> {
        if self.files.is_empty() {
            return Ok(Vec::new());
        }
        let dir = &self.cfg.output_dir;
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|source| CliError::Io { path: path.clone(), source })?;
            written.push(path);
        }
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.name().to_string(),
            config_sha256: sha256_hex(raw_config),
            effective_config_sha256: effective_digest(self.cfg),
            seed: self.cfg.sim.seed,
            n_paths: self.cfg.sim.n_paths,
            files: self.files.iter().map(|(n, b)| FileEntry::new(n, b)).collect(),
        };
        let path = dir.join("manifest.json");
        fs::write(&path, manifest.to_bytes()).map_err(|source| CliError::Io { path: path.clone(), source })?;
        written.push(path);
        Ok(written)
    }
}

fn control<'a>(policy: &'a Option<Policy>, cfg: &ScenarioConfig) -> Control<'a> {
    match policy {
        Some(p) => Control::Policy(p),
        None => Control::Constant(cfg.control.fixed_value),
    }
}

/// Digest of the effective configuration. The output directory is left out
/// so that the manifest does not depend on where it is written.
fn effective_digest(cfg: &ScenarioConfig) -> String {
    let mut cfg = cfg.clone();
    cfg.output_dir = PathBuf::new();
    sha256_hex(to_json(&cfg).as_bytes())
}
