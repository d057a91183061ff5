//! Compartmental dynamics of prescription-opioid use and addiction.
//!
//! Four groups are tracked as population fractions: susceptible `S`,
//! prescribed users `P`, addicted users `A` and people in treatment `R`.
//! Eliminating `P = 1 - S - A - R` leaves a three-dimensional state
//! `(x1, x2, x3) = (S, A, R)`, which is the state space of the stochastic
//! model. Noise acts on the susceptible coordinate only.

use alloc::vec::Vec;
use core::fmt;

/// How the bilinear relapse term `R·A` leaves the treatment compartment.
///
/// `Corrected` removes `nu·R·A` from `R`, matching the `+nu·R·A` inflow into
/// `A` so that the four compartments sum to a constant. `Literal` removes
/// `mu·R·A` as the equations are usually printed; the total then drifts at
/// rate `(nu - mu)·R·A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConservationMode {
    #[default]
    Corrected,
    Literal,
}

/// Rate constants of the compartmental model (all in 1/time except `xi`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Prescription rate.
    pub alpha: f64,
    /// Total rate of addiction other than by prescription.
    pub beta: f64,
    /// Share of `beta` due to diverted prescription drugs, in `[0, 1]`.
    pub xi: f64,
    /// Prescribed users returning to susceptible.
    pub epsilon_rate: f64,
    /// Completed treatment returning to susceptible.
    pub delta: f64,
    /// Natural death rate.
    pub mu: f64,
    /// Death rate of addicts (natural plus overdose).
    pub mu_star: f64,
    /// Prescribed users falling into addiction.
    pub gamma: f64,
    /// Addicts entering treatment.
    pub zeta: f64,
    /// Relapse of people in treatment driven by drug availability.
    pub nu: f64,
    /// Inherent relapse rate from treatment back to addiction.
    pub sigma_relapse: f64,
    pub conservation_mode: ConservationMode,
}

impl ModelParams {
    /// Every rate set to zero; the drift vanishes identically.
    pub const fn zero() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            xi: 0.0,
            epsilon_rate: 0.0,
            delta: 0.0,
            mu: 0.0,
            mu_star: 0.0,
            gamma: 0.0,
            zeta: 0.0,
            nu: 0.0,
            sigma_relapse: 0.0,
            conservation_mode: ConservationMode::Corrected,
        }
    }

    /// Illustrative parameter set with a stable interior endemic equilibrium
    /// near `(S, A, R) = (0.443, 0.301, 0.137)`. Not calibrated to data.
    pub const fn example() -> Self {
        Self {
            alpha: 0.3,
            beta: 0.8,
            xi: 0.5,
            epsilon_rate: 1.0,
            delta: 0.5,
            mu: 0.02,
            mu_star: 0.05,
            gamma: 0.1,
            zeta: 0.4,
            nu: 0.2,
            sigma_relapse: 0.3,
            conservation_mode: ConservationMode::Corrected,
        }
    }

    fn relapse_outflow_coefficient(&self) -> f64 {
        match self.conservation_mode {
            ConservationMode::Corrected => self.nu,
            ConservationMode::Literal => self.mu,
        }
    }
}

/// Full state `(S, P, A, R)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct State4 {
    pub s: f64,
    pub p: f64,
    pub a: f64,
    pub r: f64,
}

impl State4 {
    pub const fn new(s: f64, p: f64, a: f64, r: f64) -> Self {
        Self { s, p, a, r }
    }

    /// Drops `P`, keeping `(S, A, R)`.
    pub const fn reduce(&self) -> State3 {
        State3::new(self.s, self.a, self.r)
    }

    pub fn sum(&self) -> f64 {
        self.s + self.p + self.a + self.r
    }
}

/// Reduced state `(x1, x2, x3) = (S, A, R)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct State3 {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl State3 {
    pub const fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Self { x1, x2, x3 }
    }

    pub const fn from_array(x: [f64; 3]) -> Self {
        Self::new(x[0], x[1], x[2])
    }

    pub const fn to_array(self) -> [f64; 3] {
        [self.x1, self.x2, self.x3]
    }

    /// Recovers the full state with `P = 1 - S - A - R`.
    pub fn expand(&self) -> State4 {
        State4::new(self.x1, 1.0 - self.x1 - self.x2 - self.x3, self.x2, self.x3)
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite()
    }
}

/// Right-hand side `(dS, dP, dA, dR)/dt` of the four-compartment model.
pub fn full_drift(x: &State4, p: &ModelParams) -> [f64; 4] {
    let State4 { s, p: pr, a, r } = *x;
    let illicit = p.beta * (1.0 - p.xi) * s * a;
    let diverted = p.beta * p.xi * s * pr;

    let ds = -p.alpha * s - illicit - diverted + p.epsilon_rate * pr + p.delta * r + p.mu * (pr + r) + p.mu_star * a;
    let dp = p.alpha * s - (p.epsilon_rate + p.gamma + p.mu) * pr;
    let da = p.gamma * pr + p.sigma_relapse * r + illicit + diverted + p.nu * r * a - (p.zeta + p.mu_star) * a;
    let dr = p.zeta * a - p.relapse_outflow_coefficient() * r * a - (p.delta + p.sigma_relapse + p.mu) * r;
    [ds, dp, da, dr]
}

/// Drift `F = (f1, f2, f3)` of the reduced system, with `P = 1 - x1 - x2 - x3`.
pub fn reduced_drift(x: &State3, p: &ModelParams) -> [f64; 3] {
    let State3 { x1, x2, x3 } = *x;
    let pr = 1.0 - x1 - x2 - x3;
    let illicit = p.beta * (1.0 - p.xi) * x1 * x2;
    let diverted = p.beta * p.xi * x1 * pr;

    let f1 = -p.alpha * x1 - illicit - diverted + (p.epsilon_rate + p.mu) * pr + (p.delta + p.mu) * x3 + p.mu_star * x2;
    let f2 = p.gamma * pr + p.sigma_relapse * x3 + illicit + diverted + p.nu * x3 * x2 - (p.zeta + p.mu_star) * x2;
    let f3 = p.zeta * x2 - p.relapse_outflow_coefficient() * x3 * x2 - (p.delta + p.sigma_relapse + p.mu) * x3;
    [f1, f2, f3]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseKind {
    #[default]
    Constant,
    /// `sigma0 * (1 + x1)` clamped to `[sigma_min, sigma_max]`.
    AffineClamped,
}

/// Amplitude of the scalar noise driving the susceptible coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma0: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl NoiseSpec {
    pub const fn constant(sigma0: f64) -> Self {
        Self { kind: NoiseKind::Constant, sigma0, sigma_min: sigma0, sigma_max: sigma0 }
    }
}

/// Noise amplitude at `x`; always within `[sigma_min, sigma_max]` for a
/// validated spec, including for non-finite `x1`.
pub fn eval_noise(x: &State3, n: &NoiseSpec) -> f64 {
    match n.kind {
        NoiseKind::Constant => n.sigma0,
        NoiseKind::AffineClamped => {
            let raw = n.sigma0 * (1.0 + x.x1);
            if raw.is_nan() {
                n.sigma_max
            } else {
                raw.clamp(n.sigma_min, n.sigma_max)
            }
        }
    }
}

/// Axis-aligned open box `lo < x < hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

/// One of the six faces of a [`Domain`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Face {
    pub axis: usize,
    pub upper: bool,
}

impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}{}", self.axis + 1, if self.upper { "+" } else { "-" })
    }
}

impl Domain {
    pub const fn new(lo: [f64; 3], hi: [f64; 3]) -> Self {
        Self { lo, hi }
    }

    /// Box used by the shipped example scenario, around the endemic
    /// equilibrium of [`ModelParams::example`].
    pub const fn example() -> Self {
        Self::new([0.25, 0.2, 0.05], [0.65, 0.4, 0.25])
    }

    pub fn contains(&self, x: &State3) -> bool {
        self.exit_face(x).is_none()
    }

    /// `None` when `x` lies in the open box. Otherwise the face that was
    /// crossed; when several bounds are violated, the one overshot by the
    /// largest fraction of the box width. NaN coordinates count as outside.
    pub fn exit_face(&self, x: &State3) -> Option<Face> {
        let c = x.to_array();
        let mut worst: Option<(f64, Face)> = None;
        for axis in 0..3 {
            let width = self.hi[axis] - self.lo[axis];
            let (over, upper) = if c[axis].is_nan() {
                (f64::INFINITY, true)
            } else if c[axis] <= self.lo[axis] {
                ((self.lo[axis] - c[axis]) / width, false)
            } else if c[axis] >= self.hi[axis] {
                ((c[axis] - self.hi[axis]) / width, true)
            } else {
                continue;
            };
            if worst.is_none_or(|(w, _)| over > w) {
                worst = Some((over, Face { axis, upper }));
            }
        }
        worst.map(|(_, f)| f)
    }

    pub fn center(&self) -> State3 {
        State3::new(0.5 * (self.lo[0] + self.hi[0]), 0.5 * (self.lo[1] + self.hi[1]), 0.5 * (self.lo[2] + self.hi[2]))
    }
}

/// A single broken constraint found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub value: f64,
    pub constraint: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}: violates {}", self.field, self.value, self.constraint)
    }
}

/// Every violation found, not just the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Violations(pub Vec<Violation>);

impl Violations {
    pub fn fields(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.0.iter().map(|v| v.field)
    }
}

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl core::error::Error for Violations {}

/// A validated model: parameters, noise and domain that satisfy every
/// invariant. Downstream solvers only accept this type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    params: ModelParams,
    noise: NoiseSpec,
    domain: Domain,
}

impl Scenario {
    pub fn new(params: ModelParams, noise: NoiseSpec, domain: Domain) -> Result<Self, Violations> {
        validate(&params, &noise, &domain)
    }

    pub fn example() -> Self {
        Self::new(ModelParams::example(), NoiseSpec::constant(0.2), Domain::example())
            .expect("example scenario is valid")
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn with_domain(&self, domain: Domain) -> Result<Self, Violations> {
        Self::new(self.params, self.noise, domain)
    }
}

/// Checks every parameter, noise and domain invariant and reports all
/// violations at once.
pub fn validate(p: &ModelParams, n: &NoiseSpec, d: &Domain) -> Result<Scenario, Violations> {
    let mut out = Vec::new();
    let mut check = |ok: bool, field: &'static str, value: f64, constraint: &'static str| {
        if !ok {
            out.push(Violation { field, value, constraint });
        }
    };

    let rates = [
        ("model.alpha", p.alpha),
        ("model.beta", p.beta),
        ("model.epsilon_rate", p.epsilon_rate),
        ("model.delta", p.delta),
        ("model.mu", p.mu),
        ("model.mu_star", p.mu_star),
        ("model.gamma", p.gamma),
        ("model.zeta", p.zeta),
        ("model.nu", p.nu),
        ("model.sigma_relapse", p.sigma_relapse),
    ];
    for (field, value) in rates {
        check(value.is_finite() && value >= 0.0, field, value, "finite rate >= 0");
    }
    check(p.xi >= 0.0 && p.xi <= 1.0, "model.xi", p.xi, "xi ∈ [0,1]");
    check(!(p.mu_star < p.mu), "model.mu_star", p.mu_star, "mu_star >= mu (addict death rate includes natural deaths)");

    check(
        n.sigma_min.is_finite() && n.sigma_min > 0.0,
        "noise.sigma_min",
        n.sigma_min,
        "sigma_min > 0 (noise amplitude must stay bounded away from zero so its inverse is bounded)",
    );
    check(
        n.sigma_max.is_finite() && n.sigma_max >= n.sigma_min,
        "noise.sigma_max",
        n.sigma_max,
        "finite sigma_max >= sigma_min (noise amplitude must be bounded)",
    );
    match n.kind {
        NoiseKind::Constant => check(
            n.sigma0 >= n.sigma_min && n.sigma0 <= n.sigma_max,
            "noise.sigma0",
            n.sigma0,
            "sigma_min <= sigma0 <= sigma_max for constant noise",
        ),
        NoiseKind::AffineClamped => check(n.sigma0.is_finite(), "noise.sigma0", n.sigma0, "finite sigma0"),
    }

    const LO: [&str; 3] = ["domain.lo[0]", "domain.lo[1]", "domain.lo[2]"];
    const HI: [&str; 3] = ["domain.hi[0]", "domain.hi[1]", "domain.hi[2]"];
    for axis in 0..3 {
        check(d.lo[axis].is_finite(), LO[axis], d.lo[axis], "finite bound");
        check(d.hi[axis].is_finite(), HI[axis], d.hi[axis], "finite bound");
        check(d.lo[axis] < d.hi[axis], HI[axis], d.hi[axis], "lo < hi (box must have nonempty interior)");
    }

    if out.is_empty() {
        Ok(Scenario { params: *p, noise: *n, domain: *d })
    } else {
        Err(Violations(out))
    }
}
