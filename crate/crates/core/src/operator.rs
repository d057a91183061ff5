//! Finite-difference discretization of the controlled generator
//!
//! ```text
//! L_v ψ = ½ σ̂(x)² ∂²ψ/∂x1² + (f1(x) + v(x)) ∂ψ/∂x1 + f2(x) ∂ψ/∂x2 + f3(x) ∂ψ/∂x3
//! ```
//!
//! on a tensor grid over the box domain with `ψ = 0` on every face, and the
//! principal eigenpair of `-L_v`.
//!
//! Diffusion uses the central three-point stencil in `x1`. Every advection
//! term is upwinded, and the control is upwinded separately from `f1`, so
//! the assembled matrix is an M-matrix for any drift, noise and policy. Its
//! inverse is then entrywise nonnegative and the principal eigenvector can
//! be taken positive.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::model::{eval_noise, reduced_drift, Domain, Scenario, State3};

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorError {
    /// Fewer than three nodes along an axis leaves no interior.
    GridTooSmall { axis: usize, nodes: usize },
    /// Drift, noise or control is not finite at an interior node.
    NonFinite { node: usize, quantity: &'static str },
    /// Control vector length differs from the interior node count.
    ControlLength { expected: usize, got: usize },
    /// Nonpositive or non-finite pivot during factorization.
    Factorization { row: usize, pivot: f64 },
    /// Inverse iteration did not meet the tolerance.
    NotConverged { iterations: usize, residual: f64, lambda: f64 },
    /// Converged eigenvector has a nonpositive entry.
    NonPositive { node: usize, value: f64 },
}

impl fmt::Display for OperatorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::GridTooSmall { axis, nodes } => {
                write!(f, "axis x{} has {nodes} nodes, need at least 3", axis + 1)
            }
            Self::NonFinite { node, quantity } => {
                write!(f, "non-finite {quantity} at interior node {node}")
            }
            Self::ControlLength { expected, got } => {
                write!(f, "control has {got} values, grid has {expected} interior nodes")
            }
            Self::Factorization { row, pivot } => {
                write!(f, "factorization failed at row {row} (pivot {pivot})")
            }
            Self::NotConverged { iterations, residual, lambda } => write!(
                f,
                "inverse iteration not converged after {iterations} iterations \
                 (lambda {lambda}, residual {residual})"
            ),
            Self::NonPositive { node, value } => {
                write!(f, "eigenvector entry {value} at interior node {node} is not positive")
            }
        }
    }
}

impl core::error::Error for OperatorError {}

/// Uniform tensor grid over a box. Interior nodes are numbered
/// lexicographically with `x1` fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    domain: Domain,
    n: [usize; 3],
    h: [f64; 3],
}

pub fn build_grid(domain: Domain, n: [usize; 3]) -> Result<Grid, OperatorError> {
    for (axis, &nodes) in n.iter().enumerate() {
        if nodes < 3 {
            return Err(OperatorError::GridTooSmall { axis, nodes });
        }
    }
    let h = core::array::from_fn(|i| (domain.hi[i] - domain.lo[i]) / (n[i] - 1) as f64);
    Ok(Grid { domain, n, h })
}

impl Grid {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Node counts per axis, boundary included.
    pub fn nodes(&self) -> [usize; 3] {
        self.n
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.h
    }

    pub fn max_spacing(&self) -> f64 {
        self.h[0].max(self.h[1]).max(self.h[2])
    }

    /// Interior node counts per axis.
    pub fn interior_dims(&self) -> [usize; 3] {
        [self.n[0] - 2, self.n[1] - 2, self.n[2] - 2]
    }

    pub fn num_interior(&self) -> usize {
        self.interior_dims().iter().product()
    }

    pub fn num_nodes(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_interior(&self, l: [usize; 3]) -> bool {
        (0..3).all(|i| l[i] >= 1 && l[i] + 1 < self.n[i])
    }

    /// Interior index of lattice point `l`, or `None` on the boundary.
    pub fn index(&self, l: [usize; 3]) -> Option<usize> {
        if !self.is_interior(l) {
            return None;
        }
        let m = self.interior_dims();
        Some((l[0] - 1) + m[0] * ((l[1] - 1) + m[1] * (l[2] - 1)))
    }

    /// Lattice coordinates of interior index `idx`.
    pub fn lattice(&self, idx: usize) -> [usize; 3] {
        let m = self.interior_dims();
        [idx % m[0] + 1, (idx / m[0]) % m[1] + 1, idx / (m[0] * m[1]) + 1]
    }

    /// Position in the full (boundary-inclusive) node array, `x1` fastest.
    pub fn node_index(&self, l: [usize; 3]) -> usize {
        l[0] + self.n[0] * (l[1] + self.n[1] * l[2])
    }

    pub fn node_lattice(&self, node: usize) -> [usize; 3] {
        [node % self.n[0], (node / self.n[0]) % self.n[1], node / (self.n[0] * self.n[1])]
    }

    pub fn position(&self, l: [usize; 3]) -> State3 {
        let c: [f64; 3] = core::array::from_fn(|i| {
            if l[i] + 1 == self.n[i] {
                self.domain.hi[i]
            } else {
                self.domain.lo[i] + l[i] as f64 * self.h[i]
            }
        });
        State3::from_array(c)
    }

    pub fn interior_position(&self, idx: usize) -> State3 {
        self.position(self.lattice(idx))
    }

    /// Extends interior values by zero to every node of the grid.
    pub fn extend_by_zero(&self, interior: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_nodes()];
        for (idx, &v) in interior.iter().enumerate() {
            out[self.node_index(self.lattice(idx))] = v;
        }
        out
    }
}

/// `-L_v` restricted to interior nodes, compressed by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    grid: Grid,
    control: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Control value used at each interior node.
    pub fn control(&self) -> &[f64] {
        &self.control
    }

    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(column, value)` pairs of `row`, columns ascending.
    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[row]..self.row_ptr[row + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    /// All `(row, col, value)` triplets in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim()).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.row(row).find(|&(c, _)| c == col).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            *out = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// Largest `|i - j|` over stored entries, below and above the diagonal.
    pub fn bandwidths(&self) -> (usize, usize) {
        self.triplets().fold(
            (0, 0),
            |(lo, hi), (r, c, _)| {
                if c < r {
                    (lo.max(r - c), hi)
                } else {
                    (lo, hi.max(c - r))
                }
            },
        )
    }

    /// Checks the M-matrix sign pattern: positive diagonal, nonpositive
    /// off-diagonals and nonnegative row sums. Row sums are compared against
    /// a round-off allowance of a few ulps of the diagonal.
    pub fn check_m_matrix(&self) -> Result<(), MMatrixViolation> {
        for r in 0..self.dim() {
            let mut diag = 0.0;
            let mut sum = 0.0;
            for (c, v) in self.row(r) {
                if c == r {
                    diag = v;
                } else if !(v <= 0.0) {
                    return Err(MMatrixViolation::PositiveOffDiagonal { row: r, col: c, value: v });
                }
                sum += v;
            }
            if !(diag > 0.0) {
                return Err(MMatrixViolation::NonPositiveDiagonal { row: r, value: diag });
            }
            if sum < -8.0 * f64::EPSILON * diag {
                return Err(MMatrixViolation::NegativeRowSum { row: r, sum });
            }
        }
        Ok(())
    }

    /// True when the directed graph of off-diagonal entries is strongly
    /// connected, i.e. the matrix is irreducible.
    pub fn is_irreducible(&self) -> bool {
        let n = self.dim();
        let mut rev_ptr = vec![0usize; n + 1];
        for (_, c, _) in self.triplets() {
            rev_ptr[c + 1] += 1;
        }
        for i in 0..n {
            rev_ptr[i + 1] += rev_ptr[i];
        }
        let mut fill = rev_ptr.clone();
        let mut rev = vec![0usize; self.nnz()];
        for (r, c, _) in self.triplets() {
            rev[fill[c]] = r;
            fill[c] += 1;
        }
        let reach_all = |next: &dyn Fn(usize, &mut Vec<usize>)| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            let mut count = 1;
            let mut buf = Vec::new();
            while let Some(v) = stack.pop() {
                buf.clear();
                next(v, &mut buf);
                for &w in &buf {
                    if !seen[w] {
                        seen[w] = true;
                        count += 1;
                        stack.push(w);
                    }
                }
            }
            count == n
        };
        reach_all(&|v, out| out.extend(self.row(v).map(|(c, _)| c)))
            && reach_all(&|v, out| out.extend_from_slice(&rev[rev_ptr[v]..rev_ptr[v + 1]]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MMatrixViolation {
    NonPositiveDiagonal { row: usize, value: f64 },
    PositiveOffDiagonal { row: usize, col: usize, value: f64 },
    NegativeRowSum { row: usize, sum: f64 },
}

/// Assembles `-L_v` with `control[j]` the control at interior node `j`.
pub fn assemble(grid: &Grid, scenario: &Scenario, control: &[f64]) -> Result<SparseOperator, OperatorError> {
    let n = grid.num_interior();
    if control.len() != n {
        return Err(OperatorError::ControlLength { expected: n, got: control.len() });
    }
    let h = grid.spacing();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(7 * n);
    let mut vals = Vec::with_capacity(7 * n);
    row_ptr.push(0);

    for (j, &v) in control.iter().enumerate() {
        let l = grid.lattice(j);
        let x = grid.position(l);
        let f = reduced_drift(&x, scenario.params());
        let sigma = eval_noise(&x, scenario.noise());
        if !f.iter().all(|c| c.is_finite()) {
            return Err(OperatorError::NonFinite { node: j, quantity: "drift" });
        }
        if !sigma.is_finite() {
            return Err(OperatorError::NonFinite { node: j, quantity: "noise" });
        }
        if !v.is_finite() {
            return Err(OperatorError::NonFinite { node: j, quantity: "control" });
        }

        // weights toward the -/+ neighbor along each axis
        let mut minus = [0.0f64; 3];
        let mut plus = [0.0f64; 3];
        let diffusion = 0.5 * sigma * sigma / (h[0] * h[0]);
        minus[0] += diffusion;
        plus[0] += diffusion;
        for (axis, b) in [(0, f[0]), (0, v), (1, f[1]), (2, f[2])] {
            if b > 0.0 {
                plus[axis] += b / h[axis];
            } else if b < 0.0 {
                minus[axis] -= b / h[axis];
            }
        }
        let diag: f64 = minus.iter().chain(plus.iter()).sum();

        // columns ascending: -x3, -x2, -x1, diagonal, +x1, +x2, +x3
        let mut entries = [(0usize, 0.0f64); 7];
        let mut len = 0;
        for axis in (0..3).rev() {
            let mut nb = l;
            nb[axis] -= 1;
            if let (Some(c), true) = (grid.index(nb), minus[axis] != 0.0) {
                entries[len] = (c, -minus[axis]);
                len += 1;
            }
        }
        entries[len] = (j, diag);
        len += 1;
        for axis in 0..3 {
            let mut nb = l;
            nb[axis] += 1;
            if let (Some(c), true) = (grid.index(nb), plus[axis] != 0.0) {
                entries[len] = (c, -plus[axis]);
                len += 1;
            }
        }
        for &(c, v) in &entries[..len] {
            cols.push(c);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }

    Ok(SparseOperator { grid: *grid, control: control.to_vec(), row_ptr, cols, vals })
}

/// Dense-band LU factors without pivoting. Gaussian elimination on a
/// nonsingular M-matrix keeps every pivot positive.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    band: Vec<f64>,
}

impl BandedLu {
    pub fn factor(a: &SparseOperator) -> Result<Self, OperatorError> {
        let n = a.dim();
        let (lower, upper) = a.bandwidths();
        let w = lower + upper + 1;
        let mut band = vec![0.0; n * w];
        for (r, c, v) in a.triplets() {
            band[r * w + c + lower - r] = v;
        }
        for k in 0..n {
            let pivot = band[k * w + lower];
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(OperatorError::Factorization { row: k, pivot });
            }
            let col_end = (k + upper).min(n - 1);
            let row_end = (k + lower).min(n - 1);
            for i in k + 1..=row_end {
                let ik = i * w + k + lower - i;
                let m = band[ik];
                if m == 0.0 {
                    continue;
                }
                let m = m / pivot;
                band[ik] = m;
                let (head, tail) = band.split_at_mut(i * w);
                let pivot_row = &head[k * w + lower + 1..k * w + lower + 1 + (col_end - k)];
                let start = k + 1 + lower - i;
                let target = &mut tail[start..start + (col_end - k)];
                for (t, p) in target.iter_mut().zip(pivot_row) {
                    *t -= m * p;
                }
            }
        }
        Ok(Self { n, lower, upper, band })
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, x: &mut [f64]) {
        let (n, lo, up) = (self.n, self.lower, self.upper);
        let w = lo + up + 1;
        for i in 0..n {
            let start = i.saturating_sub(lo);
            let row = &self.band[i * w..];
            let mut s = x[i];
            for j in start..i {
                s -= row[j + lo - i] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let end = (i + up).min(n - 1);
            let row = &self.band[i * w..];
            let mut s = x[i];
            for j in i + 1..=end {
                s -= row[j + lo - i] * x[j];
            }
            x[i] = s / row[lo];
        }
    }
}

/// Principal eigenvalue and positive eigenfunction of `-L_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub lambda: f64,
    /// Interior values, sup-normalized to 1.
    pub psi: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

impl EigenPair {
    /// `psi` on every grid node, zero on the boundary.
    pub fn full_values(&self, grid: &Grid) -> Vec<f64> {
        grid.extend_by_zero(&self.psi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 20_000 }
    }
}

/// Inverse power iteration from the all-ones vector.
pub fn principal_eigenpair(a: &SparseOperator, opts: &EigenOptions) -> Result<EigenPair, OperatorError> {
    principal_eigenpair_from(a, opts, None)
}

/// Inverse power iteration with one LU factorization. `start`, when given,
/// must be entrywise positive (e.g. the eigenfunction of a nearby operator).
pub fn principal_eigenpair_from(
    a: &SparseOperator,
    opts: &EigenOptions,
    start: Option<&[f64]>,
) -> Result<EigenPair, OperatorError> {
    let n = a.dim();
    let lu = BandedLu::factor(a)?;
    let mut psi = match start {
        Some(s) if s.len() == n && s.iter().all(|v| *v > 0.0) => normalized(s.to_vec()),
        _ => vec![1.0; n],
    };
    let mut y = vec![0.0; n];
    let mut lambda = f64::NAN;
    let mut residual = f64::INFINITY;

    for it in 1..=opts.max_iter {
        y.copy_from_slice(&psi);
        lu.solve(&mut y);
        let norm = sup_norm(&y);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(OperatorError::Factorization { row: 0, pivot: norm });
        }
        // ‖ψ_k‖ = 1, so 1/‖A⁻¹ψ_k‖ estimates the smallest eigenvalue of A
        let next = 1.0 / norm;
        for (p, v) in psi.iter_mut().zip(&y) {
            *p = v / norm;
        }
        residual = residual_of(a, next, &psi);
        let settled = (next - lambda).abs() <= opts.tol * next;
        lambda = next;
        if settled && residual <= opts.tol {
            if let Some((node, &value)) = psi.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(OperatorError::NonPositive { node, value });
            }
            return Ok(EigenPair { lambda, psi, iterations: it, residual_norm: residual });
        }
    }
    Err(OperatorError::NotConverged { iterations: opts.max_iter, residual, lambda })
}

/// `max_j |(A ψ)_j − λ ψ_j|`.
pub fn residual(a: &SparseOperator, e: &EigenPair) -> f64 {
    residual_of(a, e.lambda, &e.psi)
}

fn residual_of(a: &SparseOperator, lambda: f64, psi: &[f64]) -> f64 {
    (0..a.dim())
        .map(|r| {
            let ap: f64 = a.row(r).map(|(c, v)| v * psi[c]).sum();
            (ap - lambda * psi[r]).abs()
        })
        .fold(0.0, f64::max)
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s = sup_norm(&v);
    for x in &mut v {
        *x /= s;
    }
    v
}
