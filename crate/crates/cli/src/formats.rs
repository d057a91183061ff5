//! CSV and text renderings of solver results. Floats use the shortest
//! representation that parses back to the same value (exponent form below
//! `1e-4` and from `1e16` on), so identical values give identical bytes.

use std::path::Path;

use exitctl_core::{
    EigenPair, Grid, OptimalSolution, PathResult, Policy, RateEstimate, RiskConfig, RiskEstimate, SparseOperator,
    SurvivalCurve, VerificationReport,
};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {message}")]
    Content { path: String, message: String },
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory writer")
}

fn row<I: IntoIterator<Item = String>>(w: &mut csv::Writer<Vec<u8>>, fields: I) {
    w.write_record(fields.into_iter().collect::<Vec<_>>()).expect("in-memory writer");
}

/// Text of one CSV cell.
pub trait Cell {
    fn cell(&self) -> String;
}

impl Cell for f64 {
    fn cell(&self) -> String {
        let a = self.abs();
        if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
            format!("{self:e}")
        } else {
            format!("{self}")
        }
    }
}

macro_rules! plain_cell {
    ($($t:ty),*) => { $(impl Cell for $t { fn cell(&self) -> String { self.to_string() } })* };
}
plain_cell!(u64, usize, str, String);

impl<T: Cell + ?Sized> Cell for &T {
    fn cell(&self) -> String {
        (**self).cell()
    }
}

macro_rules! fields {
    ($($x:expr),* $(,)?) => { [$(Cell::cell(&$x)),*] };
}

/// `t,survivors,p_hat,ci_lo,ci_hi`
pub fn survival_csv(c: &SurvivalCurve) -> Vec<u8> {
    let mut w = writer();
    row(&mut w, fields!["t", "survivors", "p_hat", "ci_lo", "ci_hi"]);
    for i in 0..c.times.len() {
        row(&mut w, fields![c.times[i], c.survivors[i], c.p_hat[i], c.ci_lo[i], c.ci_hi[i]]);
    }
    finish(w)
}

/// `t,x1,x2,x3`
pub fn trajectory_csv(p: &PathResult) -> Vec<u8> {
    let mut w = writer();
    row(&mut w, fields!["t", "x1", "x2", "x3"]);
    for (t, x) in p.trajectory.iter().flatten() {
        row(&mut w, fields![t, x.x1, x.x2, x.x3]);
    }
    finish(w)
}

/// `quantity,value` pairs.
pub fn summary_csv(entries: &[(&str, String)]) -> Vec<u8> {
    let mut w = writer();
    row(&mut w, fields!["quantity", "value"]);
    for (k, v) in entries {
        row(&mut w, fields![k, v]);
    }
    finish(w)
}

pub fn rate_summary(r: &RateEstimate, c: &SurvivalCurve) -> Vec<(&'static str, String)> {
    vec![
        ("lambda_hat", r.lambda_hat.cell()),
        ("stderr", r.stderr.cell()),
        ("residual_stderr", r.residual_stderr.cell()),
        ("fit_t_lo", r.fit_window.0.cell()),
        ("fit_t_hi", r.fit_window.1.cell()),
        ("r_squared", r.r_squared.cell()),
        ("n_points", r.n_points.to_string()),
        ("n_paths", c.n_paths.to_string()),
        ("censored_count", c.censored_count.to_string()),
    ]
}

/// A `# name=value` line followed by `x1,x2,x3,psi` over every grid node,
/// with zeros on the boundary.
pub fn eigenpair_csv(grid: &Grid, e: &EigenPair) -> Vec<u8> {
    let mut out = format!("# lambda={}\n", e.lambda.cell()).into_bytes();
    let mut w = writer();
    row(&mut w, fields!["x1", "x2", "x3", "psi"]);
    for (node, psi) in e.full_values(grid).iter().enumerate() {
        let x = grid.position(grid.node_lattice(node));
        row(&mut w, fields![x.x1, x.x2, x.x3, psi]);
    }
    out.extend(finish(w));
    out
}

/// Reads the `# lambda=` header of an eigenpair file.
pub fn eigenpair_lambda(bytes: &[u8]) -> Option<f64> {
    let text = std::str::from_utf8(bytes).ok()?;
    text.lines().next()?.strip_prefix("# lambda=")?.trim().parse().ok()
}

/// `row,col,value`
pub fn operator_csv(a: &SparseOperator) -> Vec<u8> {
    let mut w = writer();
    row(&mut w, fields!["row", "col", "value"]);
    for (i, j, v) in a.triplets() {
        row(&mut w, fields![i, j, v]);
    }
    finish(w)
}

/// A `# lambda_star=` line followed by `x1,x2,x3,psi,u` over interior nodes.
pub fn solution_csv(sol: &OptimalSolution) -> Vec<u8> {
    let grid = sol.grid();
    let mut out = format!("# lambda_star={}\n", sol.lambda_star.cell()).into_bytes();
    let mut w = writer();
    row(&mut w, fields!["x1", "x2", "x3", "psi", "u"]);
    for (j, (psi, u)) in sol.psi_star.iter().zip(sol.policy_star.values()).enumerate() {
        let x = grid.interior_position(j);
        row(&mut w, fields![x.x1, x.x2, x.x3, psi, u]);
    }
    out.extend(finish(w));
    out
}

/// `iteration,lambda`
pub fn history_csv(history: &[f64]) -> Vec<u8> {
    let mut w = writer();
    row(&mut w, fields!["iteration", "lambda"]);
    for (i, l) in history.iter().enumerate() {
        row(&mut w, fields![i + 1, l]);
    }
    finish(w)
}

/// `theta,eps_noise,value,stderr,value_over_theta,censored_count`
pub fn risk_csv(rows: &[(RiskConfig, RiskEstimate)]) -> Vec<u8> {
    let mut w = writer();
    row(&mut w, fields!["theta", "eps_noise", "value", "stderr", "value_over_theta", "censored_count"]);
    for (rc, r) in rows {
        row(&mut w, fields![rc.theta, rc.eps_noise, r.value, r.stderr, r.value / rc.theta, r.censored_count]);
    }
    finish(w)
}

/// One line per check, `name measured=.. threshold=.. PASS|FAIL [detail]`,
/// then `overall PASS|FAIL`.
pub fn report_text(r: &VerificationReport) -> Vec<u8> {
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let mut s = String::new();
    for c in r.checks() {
        s.push_str(&format!(
            "{} measured={} threshold={} {}",
            c.name,
            c.measured.cell(),
            c.threshold.cell(),
            verdict(c.passed)
        ));
        if !c.detail.is_empty() {
            s.push_str(&format!(" ({})", c.detail));
        }
        s.push('\n');
    }
    s.push_str(&format!("overall {}\n", verdict(r.overall)));
    s.into_bytes()
}

/// Loads the `u` column of a solution file written by [`solution_csv`]. The
/// node coordinates must match `grid`.
pub fn read_policy(path: &Path, grid: &Grid) -> Result<Policy, FormatError> {
    let name = path.display().to_string();
    let content = |message: String| FormatError::Content { path: name.clone(), message };
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|source| FormatError::Csv { path: name.clone(), source })?;
    let mut values = Vec::with_capacity(grid.num_interior());
    for (j, rec) in r.records().enumerate() {
        let rec = rec.map_err(|source| FormatError::Csv { path: name.clone(), source })?;
        let num = |k: usize| -> Result<f64, FormatError> {
            rec.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| content(format!("row {}: column {} is not a number", j + 1, k + 1)))
        };
        if j >= grid.num_interior() {
            return Err(content(format!("more rows than the {} interior nodes", grid.num_interior())));
        }
        let x = grid.interior_position(j);
        let h = grid.spacing();
        for (k, (got, want)) in [num(0)?, num(1)?, num(2)?].iter().zip([x.x1, x.x2, x.x3]).enumerate() {
            if (got - want).abs() > 1e-9 * h[k] {
                return Err(content(format!("row {}: node does not match the configured grid", j + 1)));
            }
        }
        values.push(num(4)?);
    }
    if values.len() != grid.num_interior() {
        return Err(content(format!("{} rows for {} interior nodes", values.len(), grid.num_interior())));
    }
    Policy::from_values(grid, values).map_err(|e| content(e.to_string()))
}
