//! Coefficient sets of the unified stochastic SIR system.
//!
//! A model supplies, for each compartment `i ∈ {X, Y, Z}`, a drift `b_i`,
//! diffusion columns `σ_ij`, small-jump coefficients `h_i` (compensated,
//! `|u| < 1`) and large-jump coefficients `g_i` (`|u| ≥ 1`). Five concrete
//! systems are built in; [`CustomModel`] takes arbitrary expressions.
//!
//! Jump coefficients are stored with the sign they carry in each system's
//! equations, so e.g. the susceptible row of [`System::Ex1`] is `-h1·x·y`.

use rand::Rng;
use thiserror::Error;

use crate::expr::{default_bounds, EvalError, ParseError, Point, StateExpr, TimeFunction, Var};
use crate::levy::{LevyMeasure, Region};

/// Tolerance for the sum identities on the simplex.
pub const CONSERVATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("operation requires a simplex-domain model")]
    NotSimplex,
    #[error("custom model fails conservation: max deviation {0:e}")]
    Conservation(f64),
    #[error("custom model fails positivity: minimum ratio {0}")]
    Positivity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl State {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        State { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        State::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn sum(&self) -> f64 {
        self.x + self.y + self.z
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn is_positive(&self) -> bool {
        self.x > 0.0 && self.y > 0.0 && self.z > 0.0
    }
}

/// State space of a model: proportions on the simplex `Δ` or population
/// numbers in the positive octant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Simplex,
    Octant,
}

impl Domain {
    /// Whether `s` is an admissible state, allowing `tol` off the simplex.
    pub fn admits(self, s: &State, tol: f64) -> bool {
        s.is_finite()
            && s.is_positive()
            && match self {
                Domain::Simplex => (s.sum() - 1.0).abs() <= tol,
                Domain::Octant => true,
            }
    }
}

/// Which groups of terms are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub drift: bool,
    pub diffusion: bool,
    pub jumps: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        drift: true,
        diffusion: true,
        jumps: true,
    };
    /// Drift only: the noise-free companion system.
    pub const DETERMINISTIC: Terms = Terms {
        drift: true,
        diffusion: false,
        jumps: false,
    };
    pub const DIFFUSION_ONLY: Terms = Terms {
        drift: false,
        diffusion: true,
        jumps: false,
    };
    pub const JUMPS_ONLY: Terms = Terms {
        drift: false,
        diffusion: false,
        jumps: true,
    };
    pub const NONE: Terms = Terms {
        drift: false,
        diffusion: false,
        jumps: false,
    };
}

impl Default for Terms {
    fn default() -> Self {
        Terms::ALL
    }
}

/// `x ∧ 1`
pub fn star(x: f64) -> f64 {
    x.min(1.0)
}

/// `x ∧ cap`
pub fn dagger(x: f64, cap: f64) -> f64 {
    x.min(cap)
}

/// Power-law transmission with saturation and two noise sources, on `Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ex1Params {
    pub beta: TimeFunction,
    pub gamma: TimeFunction,
    pub xi: TimeFunction,
    pub sigma1: TimeFunction,
    pub sigma2: TimeFunction,
    pub phi1: TimeFunction,
    pub phi2: TimeFunction,
    pub phi3: TimeFunction,
    pub h1: f64,
    pub h2: f64,
    pub g1: f64,
    pub g2: f64,
}

/// Bilinear transmission with recovery feedback `γ2·Z`, on `Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ex1bParams {
    pub beta: TimeFunction,
    pub gamma1: TimeFunction,
    pub gamma2: TimeFunction,
    pub sigma: TimeFunction,
    pub h1: f64,
    pub h2: f64,
    pub g1: f64,
    pub g2: f64,
}

/// Demographic SIR with disease-induced death and one Brownian source, in
/// population numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct XcParams {
    pub lambda: TimeFunction,
    pub mu: TimeFunction,
    pub beta: TimeFunction,
    pub gamma: TimeFunction,
    pub epsilon: TimeFunction,
    pub sigma: TimeFunction,
}

/// Truncated population-number analogue of [`Ex1Params`] with waning
/// immunity and logistic infected growth.
#[derive(Debug, Clone, PartialEq)]
pub struct Ex34aParams {
    pub lambda: TimeFunction,
    pub mu: TimeFunction,
    pub beta: TimeFunction,
    pub gamma1: TimeFunction,
    pub gamma2: TimeFunction,
    pub gamma3: TimeFunction,
    pub gamma4: TimeFunction,
    pub xi: TimeFunction,
    pub sigma1: TimeFunction,
    pub sigma2: TimeFunction,
    pub phi1: TimeFunction,
    pub phi2: TimeFunction,
    pub phi3: TimeFunction,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub g1: f64,
    pub g2: f64,
    /// Truncation cap `M` of `x†`.
    pub cap: f64,
}

/// Truncated population-number analogue of [`Ex1bParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Ex34bParams {
    pub lambda: TimeFunction,
    pub mu: TimeFunction,
    pub beta: TimeFunction,
    pub gamma1: TimeFunction,
    pub gamma2: TimeFunction,
    pub sigma: TimeFunction,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub cap: f64,
}

/// Model given by raw expressions in `(t, x, y, z, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomModel {
    pub domain: Domain,
    pub drift: [StateExpr; 3],
    /// One entry per Brownian motion, each the column `(σ_1j, σ_2j, σ_3j)`.
    pub diffusion: Vec<[StateExpr; 3]>,
    pub small_jump: [StateExpr; 3],
    pub large_jump: [StateExpr; 3],
}

impl CustomModel {
    /// Parses row-wise expression strings.
    pub fn parse(
        domain: Domain,
        drift: [&str; 3],
        diffusion: &[[&str; 3]],
        small_jump: [&str; 3],
        large_jump: [&str; 3],
    ) -> Result<Self, ParseError> {
        let row = |r: [&str; 3]| -> Result<[StateExpr; 3], ParseError> {
            Ok([
                StateExpr::parse(r[0])?,
                StateExpr::parse(r[1])?,
                StateExpr::parse(r[2])?,
            ])
        };
        Ok(CustomModel {
            domain,
            drift: row(drift)?,
            diffusion: diffusion
                .iter()
                .map(|c| row(*c))
                .collect::<Result<_, _>>()?,
            small_jump: row(small_jump)?,
            large_jump: row(large_jump)?,
        })
    }

    fn jumps_use_u(&self) -> bool {
        self.small_jump
            .iter()
            .chain(self.large_jump.iter())
            .any(|e| e.uses(Var::U))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum System {
    Ex1(Ex1Params),
    Ex1b(Ex1bParams),
    Xc(XcParams),
    Ex34a(Ex34aParams),
    Ex34b(Ex34bParams),
    Custom(CustomModel),
}

impl System {
    pub fn name(&self) -> &'static str {
        match self {
            System::Ex1(_) => "ex1",
            System::Ex1b(_) => "ex1b",
            System::Xc(_) => "xc",
            System::Ex34a(_) => "ex34a",
            System::Ex34b(_) => "ex34b",
            System::Custom(_) => "custom",
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            System::Ex1(_) | System::Ex1b(_) => Domain::Simplex,
            System::Xc(_) | System::Ex34a(_) | System::Ex34b(_) => Domain::Octant,
            System::Custom(c) => c.domain,
        }
    }

    pub fn brownian_dim(&self) -> usize {
        match self {
            System::Ex1(_) | System::Ex34a(_) => 2,
            System::Ex1b(_) | System::Xc(_) | System::Ex34b(_) => 1,
            System::Custom(c) => c.diffusion.len(),
        }
    }

    /// The time-dependent coefficients by name.
    pub fn time_functions(&self) -> Vec<(&'static str, &TimeFunction)> {
        match self {
            System::Ex1(p) => vec![
                ("beta", &p.beta),
                ("gamma", &p.gamma),
                ("xi", &p.xi),
                ("sigma1", &p.sigma1),
                ("sigma2", &p.sigma2),
                ("phi1", &p.phi1),
                ("phi2", &p.phi2),
                ("phi3", &p.phi3),
            ],
            System::Ex1b(p) => vec![
                ("beta", &p.beta),
                ("gamma1", &p.gamma1),
                ("gamma2", &p.gamma2),
                ("sigma", &p.sigma),
            ],
            System::Xc(p) => vec![
                ("Lambda", &p.lambda),
                ("mu", &p.mu),
                ("beta", &p.beta),
                ("gamma", &p.gamma),
                ("epsilon", &p.epsilon),
                ("sigma", &p.sigma),
            ],
            System::Ex34a(p) => vec![
                ("Lambda", &p.lambda),
                ("mu", &p.mu),
                ("beta", &p.beta),
                ("gamma1", &p.gamma1),
                ("gamma2", &p.gamma2),
                ("gamma3", &p.gamma3),
                ("gamma4", &p.gamma4),
                ("xi", &p.xi),
                ("sigma1", &p.sigma1),
                ("sigma2", &p.sigma2),
                ("phi1", &p.phi1),
                ("phi2", &p.phi2),
                ("phi3", &p.phi3),
            ],
            System::Ex34b(p) => vec![
                ("Lambda", &p.lambda),
                ("mu", &p.mu),
                ("beta", &p.beta),
                ("gamma1", &p.gamma1),
                ("gamma2", &p.gamma2),
                ("sigma", &p.sigma),
            ],
            System::Custom(_) => Vec::new(),
        }
    }
}

/// A complete coefficient set together with its intensity measure.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    system: System,
    measure: LevyMeasure,
    terms: Terms,
}

impl ModelSpec {
    /// Wraps a system without checking the hypotheses its builder enforces.
    pub fn unchecked(system: System, measure: LevyMeasure) -> Self {
        ModelSpec {
            system,
            measure,
            terms: Terms::ALL,
        }
    }

    pub fn system(&self) -> &System {
        &self.system
    }

    pub fn measure(&self) -> &LevyMeasure {
        &self.measure
    }

    pub fn terms(&self) -> Terms {
        self.terms
    }

    pub fn domain(&self) -> Domain {
        self.system.domain()
    }

    pub fn brownian_dim(&self) -> usize {
        self.system.brownian_dim()
    }

    pub fn name(&self) -> &'static str {
        self.system.name()
    }

    /// Whether the jump coefficients vary with the mark `u`.
    pub fn jumps_depend_on_u(&self) -> bool {
        matches!(&self.system, System::Custom(c) if c.jumps_use_u())
    }

    /// Same model with only `terms` switched on.
    pub fn with_terms(&self, terms: Terms) -> Self {
        ModelSpec {
            terms,
            ..self.clone()
        }
    }

    /// Freezes every time-dependent coefficient at `t`.
    pub fn at(&self, t: f64) -> Result<Coefficients<'_>, EvalError> {
        let frozen = match &self.system {
            System::Ex1(p) => Frozen::Ex1(Ex1At {
                beta: p.beta.eval(t)?,
                gamma: p.gamma.eval(t)?,
                xi: p.xi.eval(t)?,
                sigma1: p.sigma1.eval(t)?,
                sigma2: p.sigma2.eval(t)?,
                phi: [p.phi1.eval(t)?, p.phi2.eval(t)?, p.phi3.eval(t)?],
                h: [p.h1, p.h2],
                g: [p.g1, p.g2],
            }),
            System::Ex1b(p) => Frozen::Ex1b(Ex1bAt {
                beta: p.beta.eval(t)?,
                gamma1: p.gamma1.eval(t)?,
                gamma2: p.gamma2.eval(t)?,
                sigma: p.sigma.eval(t)?,
                h: [p.h1, p.h2],
                g: [p.g1, p.g2],
            }),
            System::Xc(p) => Frozen::Xc(XcAt {
                lambda: p.lambda.eval(t)?,
                mu: p.mu.eval(t)?,
                beta: p.beta.eval(t)?,
                gamma: p.gamma.eval(t)?,
                epsilon: p.epsilon.eval(t)?,
                sigma: p.sigma.eval(t)?,
            }),
            System::Ex34a(p) => Frozen::Ex34a(Ex34aAt {
                lambda: p.lambda.eval(t)?,
                mu: p.mu.eval(t)?,
                beta: p.beta.eval(t)?,
                gamma: [
                    p.gamma1.eval(t)?,
                    p.gamma2.eval(t)?,
                    p.gamma3.eval(t)?,
                    p.gamma4.eval(t)?,
                ],
                xi: p.xi.eval(t)?,
                sigma1: p.sigma1.eval(t)?,
                sigma2: p.sigma2.eval(t)?,
                phi: [p.phi1.eval(t)?, p.phi2.eval(t)?, p.phi3.eval(t)?],
                h: [p.h1, p.h2, p.h3],
                g: [p.g1, p.g2],
                cap: p.cap,
            }),
            System::Ex34b(p) => Frozen::Ex34b(Ex34bAt {
                lambda: p.lambda.eval(t)?,
                mu: p.mu.eval(t)?,
                beta: p.beta.eval(t)?,
                gamma1: p.gamma1.eval(t)?,
                gamma2: p.gamma2.eval(t)?,
                sigma: p.sigma.eval(t)?,
                h: [p.h1, p.h2, p.h3],
                g: [p.g1, p.g2, p.g3],
                cap: p.cap,
            }),
            System::Custom(c) => Frozen::Custom(c),
        };
        Ok(Coefficients {
            t,
            terms: self.terms,
            frozen,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Ex1At {
    beta: f64,
    gamma: f64,
    xi: f64,
    sigma1: f64,
    sigma2: f64,
    phi: [f64; 3],
    h: [f64; 2],
    g: [f64; 2],
}

#[derive(Debug, Clone, Copy)]
struct Ex1bAt {
    beta: f64,
    gamma1: f64,
    gamma2: f64,
    sigma: f64,
    h: [f64; 2],
    g: [f64; 2],
}

#[derive(Debug, Clone, Copy)]
struct XcAt {
    lambda: f64,
    mu: f64,
    beta: f64,
    gamma: f64,
    epsilon: f64,
    sigma: f64,
}

#[derive(Debug, Clone, Copy)]
struct Ex34aAt {
    lambda: f64,
    mu: f64,
    beta: f64,
    gamma: [f64; 4],
    xi: f64,
    sigma1: f64,
    sigma2: f64,
    phi: [f64; 3],
    h: [f64; 3],
    g: [f64; 2],
    cap: f64,
}

#[derive(Debug, Clone, Copy)]
struct Ex34bAt {
    lambda: f64,
    mu: f64,
    beta: f64,
    gamma1: f64,
    gamma2: f64,
    sigma: f64,
    h: [f64; 3],
    g: [f64; 3],
    cap: f64,
}

#[derive(Debug, Clone)]
enum Frozen<'a> {
    Ex1(Ex1At),
    Ex1b(Ex1bAt),
    Xc(XcAt),
    Ex34a(Ex34aAt),
    Ex34b(Ex34bAt),
    Custom(&'a CustomModel),
}

/// Per-capita form of the infected row, `b_2/y` and `σ_2j/y`, with the
/// factor `y` cancelled symbolically for the built-in systems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfectedRates {
    pub drift: f64,
    /// Non-negative split `b_2/y = gain - loss`, when the system has one.
    pub gain: Option<f64>,
    pub loss: Option<f64>,
    /// `Σ_j (σ_2j / y)²`
    pub diffusion_sq: f64,
}

/// Coefficients frozen at one time instant.
#[derive(Debug, Clone)]
pub struct Coefficients<'a> {
    t: f64,
    terms: Terms,
    frozen: Frozen<'a>,
}

fn mask(on: bool, v: [f64; 3]) -> [f64; 3] {
    if on {
        v
    } else {
        [0.0; 3]
    }
}

impl Coefficients<'_> {
    pub fn time(&self) -> f64 {
        self.t
    }

    fn point(&self, s: &State, u: f64) -> Point {
        Point {
            t: self.t,
            x: s.x,
            y: s.y,
            z: s.z,
            u,
        }
    }

    fn custom_row(&self, row: &[StateExpr; 3], s: &State, u: f64) -> [f64; 3] {
        let p = self.point(s, u);
        [
            row[0].eval_or_nan(&p),
            row[1].eval_or_nan(&p),
            row[2].eval_or_nan(&p),
        ]
    }

    /// Whether the jump coefficients vary with the mark `u`.
    pub fn jumps_depend_on_u(&self) -> bool {
        match &self.frozen {
            Frozen::Custom(c) => c.jumps_use_u(),
            _ => false,
        }
    }

    pub fn drift(&self, s: &State) -> [f64; 3] {
        let State { x, y, z } = *s;
        let b = match &self.frozen {
            Frozen::Ex1(p) => {
                let den = 1.0 + p.phi[0] * x + p.phi[1] * y + p.phi[2] * x * y;
                let inc = p.beta * x.powf(p.xi) * y / den;
                let rec = p.gamma * y;
                [-inc, inc - rec, rec]
            }
            Frozen::Ex1b(p) => {
                let inc = p.beta * x * y;
                let rec = (p.gamma1 - p.gamma2 * z) * y;
                [-inc, inc - rec, rec]
            }
            Frozen::Xc(p) => [
                p.lambda - p.mu * x - p.beta * x * y,
                p.beta * x * y - (p.mu + p.gamma + p.epsilon) * y,
                p.gamma * y - p.mu * z,
            ],
            Frozen::Ex34a(p) => {
                let (xd, yd, zd) = (dagger(x, p.cap), dagger(y, p.cap), dagger(z, p.cap));
                let den = 1.0 + p.phi[0] * x + p.phi[1] * y + p.phi[2] * x * y;
                let inc = p.beta * xd * yd.powf(p.xi) / den;
                let [g1, g2, g3, g4] = p.gamma;
                [
                    p.lambda - p.mu * xd - inc + g1 * zd,
                    inc + (g2 - p.mu - g3 * yd) * yd,
                    g4 * yd - (p.mu + g1) * zd,
                ]
            }
            Frozen::Ex34b(p) => {
                let (xd, yd, zd) = (dagger(x, p.cap), dagger(y, p.cap), dagger(z, p.cap));
                [
                    p.lambda - p.mu * xd - p.beta * xd * yd + p.gamma1 * zd,
                    p.beta * xd * yd - (p.mu + p.gamma2) * yd,
                    p.gamma2 * yd - (p.mu + p.gamma1) * zd,
                ]
            }
            Frozen::Custom(c) => self.custom_row(&c.drift, s, 0.0),
        };
        mask(self.terms.drift, b)
    }

    /// Column `j` of the diffusion matrix.
    pub fn diffusion_column(&self, s: &State, j: usize) -> [f64; 3] {
        let State { x, y, z } = *s;
        let col = match (&self.frozen, j) {
            (Frozen::Ex1(p), 0) => {
                let den = 1.0 + p.phi[0] * x + p.phi[1] * y + p.phi[2] * x * y;
                let a = p.sigma1 * x * y / den;
                [-a, a, 0.0]
            }
            (Frozen::Ex1(p), 1) => {
                let c = p.sigma2 * y * z;
                [0.0, c, -c]
            }
            (Frozen::Ex1b(p), 0) => {
                let c = p.sigma * x * y * z;
                [-c, 2.0 * c, -c]
            }
            (Frozen::Xc(p), 0) => {
                let c = p.sigma * x * y;
                [-c, c, 0.0]
            }
            (Frozen::Ex34a(p), 0) => {
                let den = 1.0 + p.phi[0] * x + p.phi[1] * y + p.phi[2] * x * y;
                let a = p.sigma1 * dagger(x, p.cap) * dagger(y, p.cap) / den;
                [-a, a, 0.0]
            }
            (Frozen::Ex34a(p), 1) => {
                let c = p.sigma2 * dagger(y, p.cap) * dagger(z, p.cap);
                [0.0, c, -c]
            }
            (Frozen::Ex34b(p), 0) => {
                let c = p.sigma * dagger(x, p.cap) * dagger(y, p.cap) * dagger(z, p.cap);
                [-c, 2.0 * c, -c]
            }
            (Frozen::Custom(c), j) if j < c.diffusion.len() => {
                self.custom_row(&c.diffusion[j], s, 0.0)
            }
            _ => [0.0; 3],
        };
        mask(self.terms.diffusion, col)
    }

    /// `h(t, s, u)`, used for marks with `|u| < 1`.
    pub fn small_jump(&self, s: &State, u: f64) -> [f64; 3] {
        let State { x, y, z } = *s;
        let h = match &self.frozen {
            Frozen::Ex1(p) => {
                let (a, c) = (p.h[0] * x * y, p.h[1] * y * z);
                [-a, a - c, c]
            }
            Frozen::Ex1b(p) => {
                let q = x * y * z;
                [-p.h[0] * q, (p.h[0] - p.h[1]) * q, p.h[1] * q]
            }
            Frozen::Xc(_) => [0.0; 3],
            Frozen::Ex34a(p) => {
                let (xs, ys, zs) = (star(x), star(y), star(z));
                let (a, c, e) = (p.h[0] * xs * ys, p.h[1] * ys * zs, p.h[2] * xs * zs);
                [-(a - e), a - c, c - e]
            }
            Frozen::Ex34b(p) => {
                let q = star(x) * star(y) * star(z);
                [
                    -(p.h[0] - p.h[2]) * q,
                    (p.h[0] - p.h[1]) * q,
                    (p.h[1] - p.h[2]) * q,
                ]
            }
            Frozen::Custom(c) => self.custom_row(&c.small_jump, s, u),
        };
        mask(self.terms.jumps, h)
    }

    /// `g(t, s, u)`, used for marks with `|u| ≥ 1`.
    pub fn large_jump(&self, s: &State, u: f64) -> [f64; 3] {
        let State { x, y, z } = *s;
        let g = match &self.frozen {
            Frozen::Ex1(p) => {
                let (a, c) = (p.g[0] * x * y, p.g[1] * y * z);
                [-a, a - c, c]
            }
            Frozen::Ex1b(p) => {
                let q = x * y * z;
                [-p.g[0] * q, (p.g[0] - p.g[1]) * q, p.g[1] * q]
            }
            Frozen::Xc(_) => [0.0; 3],
            Frozen::Ex34a(p) => {
                let (xs, ys, zs) = (star(x), star(y), star(z));
                let (a, c) = (p.g[0] * xs * ys, p.g[1] * ys * zs);
                [-a, a - c, c]
            }
            Frozen::Ex34b(p) => {
                let q = star(x) * star(y) * star(z);
                [
                    -(p.g[0] - p.g[2]) * q,
                    (p.g[0] - p.g[1]) * q,
                    (p.g[1] - p.g[2]) * q,
                ]
            }
            Frozen::Custom(c) => self.custom_row(&c.large_jump, s, u),
        };
        mask(self.terms.jumps, g)
    }

    pub fn infected_rates(&self, s: &State) -> InfectedRates {
        let State { x, y, z } = *s;
        let (gain, loss, diffusion_sq) = match &self.frozen {
            Frozen::Ex1(p) => {
                let den = 1.0 + p.phi[0] * x + p.phi[1] * y + p.phi[2] * x * y;
                let d1 = p.sigma1 * x / den;
                let d2 = p.sigma2 * z;
                (p.beta * x.powf(p.xi) / den, p.gamma, d1 * d1 + d2 * d2)
            }
            Frozen::Ex1b(p) => {
                let d = 2.0 * p.sigma * x * z;
                (p.beta * x + p.gamma2 * z, p.gamma1, d * d)
            }
            Frozen::Xc(p) => {
                let d = p.sigma * x;
                (p.beta * x, p.mu + p.gamma + p.epsilon, d * d)
            }
            Frozen::Ex34a(p) => {
                let (xd, yd, zd) = (dagger(x, p.cap), dagger(y, p.cap), dagger(z, p.cap));
                // y†/y, equal to 1 below the cap
                let r = if y <= p.cap { 1.0 } else { p.cap / y };
                let den = 1.0 + p.phi[0] * x + p.phi[1] * y + p.phi[2] * x * y;
                let [_, g2, g3, _] = p.gamma;
                let d1 = p.sigma1 * xd * r / den;
                let d2 = p.sigma2 * zd * r;
                (
                    p.beta * xd * yd.powf(p.xi - 1.0) * r / den + g2 * r,
                    (p.mu + g3 * yd) * r,
                    d1 * d1 + d2 * d2,
                )
            }
            Frozen::Ex34b(p) => {
                let (xd, zd) = (dagger(x, p.cap), dagger(z, p.cap));
                let r = if y <= p.cap { 1.0 } else { p.cap / y };
                let d = 2.0 * p.sigma * xd * zd * r;
                (p.beta * xd * r, (p.mu + p.gamma2) * r, d * d)
            }
            Frozen::Custom(c) => {
                let p = self.point(s, 0.0);
                let drift = if self.terms.drift {
                    c.drift[1].eval_or_nan(&p) / y
                } else {
                    0.0
                };
                let diffusion_sq = if self.terms.diffusion {
                    c.diffusion
                        .iter()
                        .map(|col| (col[1].eval_or_nan(&p) / y).powi(2))
                        .sum()
                } else {
                    0.0
                };
                return InfectedRates {
                    drift,
                    gain: None,
                    loss: None,
                    diffusion_sq,
                };
            }
        };
        let (gain, loss) = if self.terms.drift {
            (gain, loss)
        } else {
            (0.0, 0.0)
        };
        InfectedRates {
            drift: gain - loss,
            gain: Some(gain),
            loss: Some(loss),
            diffusion_sq: if self.terms.diffusion {
                diffusion_sq
            } else {
                0.0
            },
        }
    }

    /// `h_2(t, s, u) / y`
    pub fn small_jump_ratio_y(&self, s: &State, u: f64) -> f64 {
        if !self.terms.jumps {
            return 0.0;
        }
        let State { x, y, z } = *s;
        match &self.frozen {
            Frozen::Ex1(p) => p.h[0] * x - p.h[1] * z,
            Frozen::Ex1b(p) => (p.h[0] - p.h[1]) * x * z,
            Frozen::Xc(_) => 0.0,
            Frozen::Ex34a(p) => (p.h[0] * star(x) - p.h[1] * star(z)) * star(y) / y,
            Frozen::Ex34b(p) => (p.h[0] - p.h[1]) * star(x) * star(z) * star(y) / y,
            Frozen::Custom(c) => c.small_jump[1].eval_or_nan(&self.point(s, u)) / y,
        }
    }

    /// `g_2(t, s, u) / y`
    pub fn large_jump_ratio_y(&self, s: &State, u: f64) -> f64 {
        if !self.terms.jumps {
            return 0.0;
        }
        let State { x, y, z } = *s;
        match &self.frozen {
            Frozen::Ex1(p) => p.g[0] * x - p.g[1] * z,
            Frozen::Ex1b(p) => (p.g[0] - p.g[1]) * x * z,
            Frozen::Xc(_) => 0.0,
            Frozen::Ex34a(p) => (p.g[0] * star(x) - p.g[1] * star(z)) * star(y) / y,
            Frozen::Ex34b(p) => (p.g[0] - p.g[1]) * star(x) * star(z) * star(y) / y,
            Frozen::Custom(c) => c.large_jump[1].eval_or_nan(&self.point(s, u)) / y,
        }
    }
}

fn check_jump_caps(caps: &[(&str, f64)]) -> Result<(), ModelError> {
    for &(name, v) in caps {
        if !(0.0..1.0).contains(&v) {
            return Err(ModelError::Hypothesis(format!(
                "jump coefficient {name} = {v} must lie in [0, 1)"
            )));
        }
    }
    Ok(())
}

fn check_xi(xi: &TimeFunction) -> Result<(), ModelError> {
    let b = default_bounds(xi)?;
    if b.inf < 1.0 {
        return Err(ModelError::Hypothesis(format!(
            "inf xi = {} must be at least 1",
            b.inf
        )));
    }
    Ok(())
}

fn check_cap(cap: f64) -> Result<(), ModelError> {
    if cap > 0.0 {
        Ok(())
    } else {
        Err(ModelError::Hypothesis(format!(
            "truncation cap M = {cap} must be positive"
        )))
    }
}

pub fn build_ex1(params: Ex1Params, measure: LevyMeasure) -> Result<ModelSpec, ModelError> {
    check_xi(&params.xi)?;
    check_jump_caps(&[
        ("h1", params.h1),
        ("h2", params.h2),
        ("g1", params.g1),
        ("g2", params.g2),
    ])?;
    Ok(ModelSpec::unchecked(System::Ex1(params), measure))
}

pub fn build_ex1b(params: Ex1bParams, measure: LevyMeasure) -> Result<ModelSpec, ModelError> {
    check_jump_caps(&[
        ("h1", params.h1),
        ("h2", params.h2),
        ("g1", params.g1),
        ("g2", params.g2),
    ])?;
    Ok(ModelSpec::unchecked(System::Ex1b(params), measure))
}

pub fn build_xc(params: XcParams) -> Result<ModelSpec, ModelError> {
    let mu = default_bounds(&params.mu)?;
    if mu.inf <= 0.0 {
        return Err(ModelError::Hypothesis(format!(
            "inf mu = {} must be positive",
            mu.inf
        )));
    }
    Ok(ModelSpec::unchecked(
        System::Xc(params),
        LevyMeasure::none(),
    ))
}

pub fn build_ex34a(params: Ex34aParams, measure: LevyMeasure) -> Result<ModelSpec, ModelError> {
    check_cap(params.cap)?;
    check_xi(&params.xi)?;
    check_jump_caps(&[
        ("h1", params.h1),
        ("h2", params.h2),
        ("h3", params.h3),
        ("g1", params.g1),
        ("g2", params.g2),
    ])?;
    Ok(ModelSpec::unchecked(System::Ex34a(params), measure))
}

pub fn build_ex34b(params: Ex34bParams, measure: LevyMeasure) -> Result<ModelSpec, ModelError> {
    check_cap(params.cap)?;
    check_jump_caps(&[
        ("h1", params.h1),
        ("h2", params.h2),
        ("h3", params.h3),
        ("g1", params.g1),
        ("g2", params.g2),
        ("g3", params.g3),
    ])?;
    Ok(ModelSpec::unchecked(System::Ex34b(params), measure))
}

/// Builds a custom model. On the simplex the conservation and positivity
/// checks must pass at 1000 sampled points each.
pub fn build_custom(model: CustomModel, measure: LevyMeasure) -> Result<ModelSpec, ModelError> {
    use rand::SeedableRng;
    let spec = ModelSpec::unchecked(System::Custom(model), measure);
    if spec.domain() == Domain::Simplex {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let c = check_conservation(&spec, 1000, &mut rng)?;
        if !c.passed() {
            return Err(ModelError::Conservation(c.max_deviation));
        }
        let p = check_positivity_ratios(&spec, 1000, &mut rng)?;
        if !p.passed() {
            return Err(ModelError::Positivity(p.min_ratio));
        }
    }
    Ok(spec)
}

/// Horizon from which validation sample times are drawn.
const SAMPLE_HORIZON: f64 = 100.0;

fn sample_state<R: Rng + ?Sized>(domain: Domain, rng: &mut R) -> State {
    match domain {
        Domain::Simplex => {
            // uniform on Δ via normalized exponentials
            let e: [f64; 3] = std::array::from_fn(|_| -(1.0 - rng.random::<f64>()).ln());
            let s = e[0] + e[1] + e[2];
            State::new(e[0] / s, e[1] / s, e[2] / s)
        }
        Domain::Octant => {
            // log-uniform on [1e-3, 1e2] per coordinate
            let mut c = || 10f64.powf(-3.0 + 5.0 * rng.random::<f64>());
            State::new(c(), c(), c())
        }
    }
}

/// Largest deviation from zero of the four sum identities on `Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservationReport {
    pub samples: usize,
    pub max_deviation: f64,
    /// Which sum attained the maximum: `drift`, `diffusion[j]`,
    /// `small_jump` or `large_jump`.
    pub worst: String,
}

impl ConservationReport {
    pub fn passed(&self) -> bool {
        self.max_deviation <= CONSERVATION_TOL
    }
}

/// Evaluates `Σ b_i`, `Σ σ_ij` for each `j`, `Σ h_i` and `Σ g_i` at random
/// `(t, state, u)` points of the simplex.
pub fn check_conservation<R: Rng + ?Sized>(
    model: &ModelSpec,
    samples: usize,
    rng: &mut R,
) -> Result<ConservationReport, ModelError> {
    if model.domain() != Domain::Simplex {
        return Err(ModelError::NotSimplex);
    }
    let mut report = ConservationReport {
        samples,
        max_deviation: 0.0,
        worst: String::from("none"),
    };
    let mut record = |dev: f64, which: String| {
        // NaN counts as a failure
        if !(dev <= report.max_deviation) {
            report.max_deviation = if dev.is_nan() { f64::INFINITY } else { dev };
            report.worst = which;
        }
    };
    for _ in 0..samples {
        let t = rng.random::<f64>() * SAMPLE_HORIZON;
        let s = sample_state(Domain::Simplex, rng);
        let c = model.at(t)?;
        let sum = |v: [f64; 3]| (v[0] + v[1] + v[2]).abs();
        record(sum(c.drift(&s)), "drift".into());
        for j in 0..model.brownian_dim() {
            record(sum(c.diffusion_column(&s, j)), format!("diffusion[{j}]"));
        }
        if let Some(u) = model.measure().sample_mark(Region::Small, rng) {
            record(sum(c.small_jump(&s, u)), "small_jump".into());
        }
        if let Some(u) = model.measure().sample_mark(Region::Large, rng) {
            record(sum(c.large_jump(&s, u)), "large_jump".into());
        }
    }
    Ok(report)
}

/// Smallest of `1 + h_i/x_i` and `1 + g_i/x_i` over sampled points.
#[derive(Debug, Clone, PartialEq)]
pub struct PositivityReport {
    pub samples: usize,
    pub min_ratio: f64,
    pub violations: usize,
    pub worst: String,
}

impl PositivityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

pub fn check_positivity_ratios<R: Rng + ?Sized>(
    model: &ModelSpec,
    samples: usize,
    rng: &mut R,
) -> Result<PositivityReport, ModelError> {
    const NAMES: [&str; 3] = ["x", "y", "z"];
    let mut report = PositivityReport {
        samples,
        min_ratio: 1.0,
        violations: 0,
        worst: String::from("none"),
    };
    for _ in 0..samples {
        let t = rng.random::<f64>() * SAMPLE_HORIZON;
        let s = sample_state(model.domain(), rng);
        let c = model.at(t)?;
        let comps = s.to_array();
        let mut check = |v: [f64; 3], kind: &str| {
            for i in 0..3 {
                let ratio = 1.0 + v[i] / comps[i];
                if !(ratio > 0.0) {
                    report.violations += 1;
                }
                if !(ratio >= report.min_ratio) {
                    report.min_ratio = ratio;
                    report.worst = format!("1 + {kind}{}/{}", i + 1, NAMES[i]);
                }
            }
        };
        if let Some(u) = model.measure().sample_mark(Region::Small, rng) {
            check(c.small_jump(&s, u), "h");
        }
        if let Some(u) = model.measure().sample_mark(Region::Large, rng) {
            check(c.large_jump(&s, u), "g");
        }
    }
    Ok(report)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn tf(s: &str) -> TimeFunction {
        TimeFunction::parse(s).unwrap()
    }

    pub fn table1() -> Ex1Params {
        Ex1Params {
            beta: tf("0.3+0.1*sin(4*t)"),
            gamma: tf("0.8+0.04*cos(7*t)"),
            xi: tf("1+t/(1+t)"),
            sigma1: tf("0.5+0.01*cos(7*t)"),
            sigma2: tf("0.4+0.01*sin(7*t)"),
            phi1: tf("0.01+0.005*cos(t)"),
            phi2: tf("0.01+0.005*cos(t)"),
            phi3: tf("1+0.5*sin(15*t)"),
            h1: 0.01,
            h2: 0.025,
            g1: 0.1,
            g2: 0.12,
        }
    }

    pub fn table2() -> Ex1bParams {
        Ex1bParams {
            beta: tf("0.17+0.01*cos(20*t)"),
            gamma1: tf("0.12+0.01*cos(t)"),
            gamma2: tf("0.56+0.01*sin(t)"),
            sigma: tf("0.141+0.02*(sin(t)+cos(t))"),
            h1: 0.019,
            h2: 0.018,
            g1: 0.11,
            g2: 0.1,
        }
    }

    pub fn table3() -> XcParams {
        XcParams {
            lambda: tf("0.5+0.06*sin(t)"),
            mu: tf("0.07+0.004*cos(t)"),
            beta: tf("0.13+0.01*sin(t)"),
            gamma: tf("0.9+0.02*sin(t)"),
            epsilon: tf("0.15+0.07*sin(t)"),
            sigma: tf("0.12+0.01*(sin(t)+cos(t))"),
        }
    }

    pub fn table6() -> Ex34aParams {
        Ex34aParams {
            lambda: tf("0.15+0.006*sin(t)"),
            mu: tf("0.002+0.0001*cos(t)"),
            beta: tf("0.18+0.01*sin(2*t)"),
            gamma1: tf("0.15+0.004*cos(t)"),
            gamma2: tf("0.12+0.02*cos(t)"),
            gamma3: tf("0.12+0.04*cos(2*t)"),
            gamma4: tf("0.1+0.04*sin(4*t)"),
            xi: tf("1+ln(1+abs(sin(t)))"),
            sigma1: tf("0.15+0.01*cos(t)"),
            sigma2: tf("0.12+0.01*sin(t)"),
            phi1: tf("0.01+0.005*cos(t)"),
            phi2: tf("0.01+0.005*cos(t)"),
            phi3: tf("1+0.25*sin(15*t)"),
            h1: 0.0001,
            h2: 0.00025,
            h3: 0.0009,
            g1: 0.001,
            g2: 0.0012,
            cap: 2.0,
        }
    }

    pub fn table7() -> Ex34bParams {
        Ex34bParams {
            lambda: tf("0.09+0.01*cos(t)"),
            mu: tf("0.003+0.001*sin(t)"),
            beta: tf("0.14+0.005*cos(10*t)"),
            gamma1: tf("0.002+0.002*cos(25*t)"),
            gamma2: tf("0.35+0.04*cos(15*t)"),
            sigma: tf("0.3125+0.002*(sin(t)+cos(t))"),
            h1: 0.0001,
            h2: 0.0004,
            h3: 0.0009,
            g1: 0.001,
            g2: 0.007,
            g3: 0.005,
            cap: 1.5,
        }
    }

    /// Table 1 written out as a custom model.
    pub fn ex1_as_custom(b1: &str) -> CustomModel {
        let den = "(1+(0.01+0.005*cos(t))*x+(0.01+0.005*cos(t))*y+(1+0.5*sin(15*t))*x*y)";
        // x^xi is not in the grammar; xi = 1 keeps the comparison algebraic
        let inc = format!("(0.3+0.1*sin(4*t))*x*y/{den}");
        let b1 = if b1.is_empty() {
            format!("-{inc}")
        } else {
            b1.to_string()
        };
        let a = format!("(0.5+0.01*cos(7*t))*x*y/{den}");
        let c = "(0.4+0.01*sin(7*t))*y*z";
        CustomModel::parse(
            Domain::Simplex,
            [
                &b1,
                &format!("{inc}-(0.8+0.04*cos(7*t))*y"),
                "(0.8+0.04*cos(7*t))*y",
            ],
            &[[&format!("-{a}"), &a, "0"], ["0", c, &format!("-{c}")]],
            ["-0.01*x*y", "0.01*x*y-0.025*y*z", "0.025*y*z"],
            ["-0.1*x*y", "0.1*x*y-0.12*y*z", "0.12*y*z"],
        )
        .unwrap()
    }
}
