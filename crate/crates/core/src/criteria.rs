//! Closed-form extinction and persistence thresholds, the k-function, and
//! grid estimates of the general extinction exponent.
//!
//! Every closed-form criterion is a pure function of [`BoundsPair`] inputs;
//! the `*Inputs::from_params` helpers derive those from the time functions.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{default_bounds, BoundsPair, EvalError, TimeFunction};
use crate::levy::Region;
use crate::models::{
    Ex1Params, Ex1bParams, Ex34aParams, Ex34bParams, ModelSpec, State, System, XcParams,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CriteriaError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("k is undefined: ratio factor 1 + h{index}/x{index} = {factor} is not positive")]
    Domain { index: usize, factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Extinct,
    Persistent,
    Indeterminate,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Extinct => "extinct",
            Classification::Persistent => "persistent",
            Classification::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SideCondition {
    pub name: String,
    pub satisfied: bool,
    /// Signed slack; positive exactly when the condition holds strictly.
    pub margin: f64,
}

impl SideCondition {
    /// `lhs < rhs`
    fn less(name: &str, lhs: f64, rhs: f64) -> Self {
        SideCondition {
            name: name.to_string(),
            satisfied: lhs < rhs,
            margin: rhs - lhs,
        }
    }

    /// `lhs ≤ rhs`
    fn at_most(name: &str, lhs: f64, rhs: f64) -> Self {
        SideCondition {
            name: name.to_string(),
            satisfied: lhs <= rhs,
            margin: rhs - lhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaReport {
    pub model: String,
    pub classification: Classification,
    /// Lower bound on `-α`, the exponential decay rate of `Y`.
    pub extinction_rate_lb: Option<f64>,
    pub lambda0: Option<f64>,
    pub lambda: Option<f64>,
    /// Lower bound `λ/λ₀` on the long-run time average of `Y`.
    pub mean_infected_lb: Option<f64>,
    pub r_tilde: Option<f64>,
    pub r_tilde_persistence: Option<f64>,
    /// `Λ̄/μ̲`, the size of the invariant set.
    pub invariant_bound: Option<f64>,
    pub side_conditions: Vec<SideCondition>,
}

/// Column order of [`CriteriaReport::csv_row`].
pub const CSV_HEADER: &str = "model,classification,extinction_rate_lb,lambda0,lambda,\
mean_infected_lb,r_tilde,r_tilde_persistence,invariant_bound,side_conditions_met";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl CriteriaReport {
    fn empty(model: &str) -> Self {
        CriteriaReport {
            model: model.to_string(),
            classification: Classification::Indeterminate,
            extinction_rate_lb: None,
            lambda0: None,
            lambda: None,
            mean_infected_lb: None,
            r_tilde: None,
            r_tilde_persistence: None,
            invariant_bound: None,
            side_conditions: Vec::new(),
        }
    }

    fn conditions_hold(&self) -> bool {
        self.side_conditions.iter().all(|c| c.satisfied)
    }

    fn set_persistent(&mut self, lambda0: f64, lambda: f64) {
        self.lambda0 = Some(lambda0);
        self.lambda = Some(lambda);
        if lambda0 > 0.0 && lambda > 0.0 {
            self.classification = Classification::Persistent;
            self.mean_infected_lb = Some(lambda / lambda0);
        }
    }

    /// One `key: value` per line; absent values print as `NA`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let na = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
        let _ = writeln!(out, "model: {}", self.model);
        let _ = writeln!(out, "classification: {}", self.classification.as_str());
        let fields = [
            ("extinction_rate_lb", self.extinction_rate_lb),
            ("lambda0", self.lambda0),
            ("lambda", self.lambda),
            ("mean_infected_lb", self.mean_infected_lb),
            ("r_tilde", self.r_tilde),
            ("r_tilde_persistence", self.r_tilde_persistence),
            ("invariant_bound", self.invariant_bound),
        ];
        for (k, v) in fields {
            let _ = writeln!(out, "{k}: {}", na(v));
        }
        for c in &self.side_conditions {
            let _ = writeln!(
                out,
                "condition[{}]: {} (margin {})",
                c.name,
                if c.satisfied { "satisfied" } else { "violated" },
                c.margin
            );
        }
        out
    }

    pub fn csv_row(&self) -> String {
        let met = self.side_conditions.iter().filter(|c| c.satisfied).count();
        format!(
            "{},{},{},{},{},{},{},{},{},{}/{}",
            self.model,
            self.classification.as_str(),
            opt(self.extinction_rate_lb),
            opt(self.lambda0),
            opt(self.lambda),
            opt(self.mean_infected_lb),
            opt(self.r_tilde),
            opt(self.r_tilde_persistence),
            opt(self.invariant_bound),
            met,
            self.side_conditions.len()
        )
    }
}

/// `Σ hᵢ/xᵢ − ln Π(1 + hᵢ/xᵢ)` for the small-jump coefficients at `u`.
pub fn k_value(model: &ModelSpec, t: f64, s: &State, u: f64) -> Result<f64, CriteriaError> {
    let h = model.at(t)?.small_jump(s, u);
    k_from_ratios([h[0] / s.x, h[1] / s.y, h[2] / s.z])
}

/// The k-function from the three ratios `hᵢ/xᵢ`.
pub fn k_from_ratios(r: [f64; 3]) -> Result<f64, CriteriaError> {
    let mut k = 0.0;
    for (i, &ri) in r.iter().enumerate() {
        let factor = 1.0 + ri;
        if !(factor > 0.0) {
            return Err(CriteriaError::Domain {
                index: i + 1,
                factor,
            });
        }
        k += ri - ri.ln_1p();
    }
    Ok(k)
}

fn bounds_of(f: &TimeFunction) -> Result<BoundsPair, EvalError> {
    default_bounds(f)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ex1Inputs {
    pub beta: BoundsPair,
    pub gamma: BoundsPair,
    pub g1: f64,
}

impl Ex1Inputs {
    pub fn from_params(p: &Ex1Params) -> Result<Self, EvalError> {
        Ok(Ex1Inputs {
            beta: bounds_of(&p.beta)?,
            gamma: bounds_of(&p.gamma)?,
            g1: p.g1,
        })
    }
}

/// Extinction bound `-α ≥ γ̲ − β̄ − 2ḡ₁` under `β̄ + 2ḡ₁ < γ̲`.
pub fn ex1_extinction(inp: &Ex1Inputs) -> CriteriaReport {
    let mut r = CriteriaReport::empty("ex1");
    let lhs = inp.beta.sup + 2.0 * inp.g1;
    r.side_conditions.push(SideCondition::less(
        "beta_sup + 2 g1_sup < gamma_inf",
        lhs,
        inp.gamma.inf,
    ));
    if r.conditions_hold() {
        r.classification = Classification::Extinct;
        r.extinction_rate_lb = Some(inp.gamma.inf - inp.beta.sup - 2.0 * inp.g1);
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ex1bInputs {
    pub beta: BoundsPair,
    pub gamma1: BoundsPair,
    pub gamma2: BoundsPair,
    pub sigma: BoundsPair,
    pub h1: f64,
    pub h2: f64,
    pub g2: f64,
}

impl Ex1bInputs {
    pub fn from_params(p: &Ex1bParams) -> Result<Self, EvalError> {
        Ok(Ex1bInputs {
            beta: bounds_of(&p.beta)?,
            gamma1: bounds_of(&p.gamma1)?,
            gamma2: bounds_of(&p.gamma2)?,
            sigma: bounds_of(&p.sigma)?,
            h1: p.h1,
            h2: p.h2,
            g2: p.g2,
        })
    }
}

/// `λ₀ = γ₂̲`, `λ = γ₂̲ − γ₁̄ − 2[σ̄² + h̄₁ − ln((1−h̄₂)(1−ḡ₂))]`.
pub fn ex1b_persistence(inp: &Ex1bInputs) -> CriteriaReport {
    let mut r = CriteriaReport::empty("ex1b");
    let noise = inp.sigma.sup.powi(2) + inp.h1 - ((1.0 - inp.h2) * (1.0 - inp.g2)).ln();
    let gap = inp.gamma2.inf - inp.gamma1.sup;
    r.side_conditions.push(SideCondition::less(
        "gamma1_sup < beta_inf",
        inp.gamma1.sup,
        inp.beta.inf,
    ));
    r.side_conditions.push(SideCondition::at_most(
        "beta_inf <= gamma2_inf",
        inp.beta.inf,
        inp.gamma2.inf,
    ));
    r.side_conditions.push(SideCondition::less(
        "sigma_sup^2 + h1 - ln((1-h2)(1-g2)) < (gamma2_inf - gamma1_sup)/2",
        noise,
        gap / 2.0,
    ));
    if r.conditions_hold() {
        r.set_persistent(inp.gamma2.inf, gap - 2.0 * noise);
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XcInputs {
    pub lambda: BoundsPair,
    pub mu: BoundsPair,
    pub beta: BoundsPair,
    pub gamma: BoundsPair,
    pub epsilon: BoundsPair,
    pub sigma: BoundsPair,
}

impl XcInputs {
    pub fn from_params(p: &XcParams) -> Result<Self, EvalError> {
        Ok(XcInputs {
            lambda: bounds_of(&p.lambda)?,
            mu: bounds_of(&p.mu)?,
            beta: bounds_of(&p.beta)?,
            gamma: bounds_of(&p.gamma)?,
            epsilon: bounds_of(&p.epsilon)?,
            sigma: bounds_of(&p.sigma)?,
        })
    }
}

/// Invariant-set size, the two extinction regimes and the persistence
/// threshold of the demographic model.
pub fn xc_report(inp: &XcInputs) -> CriteriaReport {
    let mut r = CriteriaReport::empty("xc");
    let (lam_inf, lam_sup) = (inp.lambda.inf, inp.lambda.sup);
    let (mu_inf, mu_sup) = (inp.mu.inf, inp.mu.sup);
    let (beta_inf, beta_sup) = (inp.beta.inf, inp.beta.sup);
    let s2_inf = inp.sigma.inf.powi(2);
    let s2_sup = inp.sigma.sup.powi(2);
    let removal_inf = mu_inf + inp.gamma.inf + inp.epsilon.inf;
    let removal_sup = mu_sup + inp.gamma.sup + inp.epsilon.sup;

    r.invariant_bound = Some(lam_sup / mu_inf);
    let r0 = beta_sup * lam_sup / (mu_inf * removal_inf)
        - s2_inf * lam_sup * lam_sup / (2.0 * mu_inf * mu_inf * removal_inf);
    let r0_pers = beta_inf * lam_inf / (mu_sup * removal_sup)
        - s2_sup * lam_sup * lam_sup / (2.0 * mu_inf * mu_inf * removal_sup);
    r.r_tilde = Some(r0);
    r.r_tilde_persistence = Some(r0_pers);

    let weak_noise = mu_inf * beta_sup / lam_sup;
    let strong_noise = weak_noise.max(beta_sup * beta_sup / (2.0 * removal_inf));
    let a1 = SideCondition::at_most(
        "sigma_inf^2 <= mu_inf beta_sup / Lambda_sup",
        s2_inf,
        weak_noise,
    );
    let a2 = SideCondition::less("r_tilde < 1", r0, 1.0);
    let b = SideCondition::less(
        "sigma_inf^2 > max(mu_inf beta_sup / Lambda_sup, beta_sup^2 / (2 (mu+gamma+epsilon)_inf))",
        strong_noise,
        s2_inf,
    );
    let p = SideCondition::less("r_tilde_persistence > 1", 1.0, r0_pers);
    let case_a = a1.satisfied && a2.satisfied;
    let case_b = b.satisfied;
    let case_p = p.satisfied;
    r.side_conditions = vec![a1, a2, b, p];

    if case_a {
        r.classification = Classification::Extinct;
        r.extinction_rate_lb = Some(removal_inf * (1.0 - r0));
    } else if case_b {
        r.classification = Classification::Extinct;
        r.extinction_rate_lb = Some(removal_inf - beta_sup * beta_sup / (2.0 * s2_inf));
    } else if case_p {
        let lambda0 = beta_inf * removal_sup / mu_sup;
        let lambda = beta_inf * lam_inf / mu_sup
            - removal_sup
            - s2_sup * lam_sup * lam_sup / (2.0 * mu_inf * mu_inf);
        r.set_persistent(lambda0, lambda);
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ex34aInputs {
    pub mu: BoundsPair,
    pub gamma2: BoundsPair,
    pub gamma3: BoundsPair,
    pub sigma1: BoundsPair,
    pub sigma2: BoundsPair,
    pub h1: f64,
    pub h2: f64,
    pub g2: f64,
    pub cap: f64,
}

impl Ex34aInputs {
    pub fn from_params(p: &Ex34aParams) -> Result<Self, EvalError> {
        Ok(Ex34aInputs {
            mu: bounds_of(&p.mu)?,
            gamma2: bounds_of(&p.gamma2)?,
            gamma3: bounds_of(&p.gamma3)?,
            sigma1: bounds_of(&p.sigma1)?,
            sigma2: bounds_of(&p.sigma2)?,
            h1: p.h1,
            h2: p.h2,
            g2: p.g2,
            cap: p.cap,
        })
    }
}

/// `λ₀ = γ̄₃ + 1`, `λ = min{M, γ₂̲ − μ̄} − [(σ̄₁² + σ̄₂²)/2 + h̄₁ − ln((1−h̄₂)(1−ḡ₂))]`.
pub fn ex34a_persistence(inp: &Ex34aInputs) -> CriteriaReport {
    let mut r = CriteriaReport::empty("ex34a");
    let level = inp.cap.min(inp.gamma2.inf - inp.mu.sup);
    let jumps = inp.h1 - ((1.0 - inp.h2) * (1.0 - inp.g2)).ln();
    let s2 = inp.sigma1.sup.powi(2) + inp.sigma2.sup.powi(2);
    r.side_conditions.push(SideCondition::less(
        "mu_sup < gamma2_inf",
        inp.mu.sup,
        inp.gamma2.inf,
    ));
    r.side_conditions.push(SideCondition::less(
        "sigma1_sup^2 + sigma2_sup^2 + 2[h1 - ln((1-h2)(1-g2))] < 2 min(M, gamma2_inf - mu_sup)",
        s2 + 2.0 * jumps,
        2.0 * level,
    ));
    if r.conditions_hold() {
        r.set_persistent(inp.gamma3.sup + 1.0, level - (s2 / 2.0 + jumps));
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ex34bInputs {
    pub mu: BoundsPair,
    pub beta: BoundsPair,
    pub gamma2: BoundsPair,
    pub g1: f64,
}

impl Ex34bInputs {
    pub fn from_params(p: &Ex34bParams) -> Result<Self, EvalError> {
        Ok(Ex34bInputs {
            mu: bounds_of(&p.mu)?,
            beta: bounds_of(&p.beta)?,
            gamma2: bounds_of(&p.gamma2)?,
            g1: p.g1,
        })
    }
}

/// `-α > γ₂̲ + μ̲ − β̄ − 2ḡ₁` under `β̄ + 2ḡ₁ < γ₂̲ + μ̲`.
pub fn ex34b_extinction(inp: &Ex34bInputs) -> CriteriaReport {
    let mut r = CriteriaReport::empty("ex34b");
    let loss = inp.gamma2.inf + inp.mu.inf;
    r.side_conditions.push(SideCondition::less(
        "beta_sup + 2 g1_sup < gamma2_inf + mu_inf",
        inp.beta.sup + 2.0 * inp.g1,
        loss,
    ));
    if r.conditions_hold() {
        r.classification = Classification::Extinct;
        r.extinction_rate_lb = Some(loss - inp.beta.sup - 2.0 * inp.g1);
    }
    r
}

/// Closed-form report for a built-in system; `None` for custom models.
pub fn closed_form_report(model: &ModelSpec) -> Result<Option<CriteriaReport>, EvalError> {
    Ok(Some(match model.system() {
        System::Ex1(p) => ex1_extinction(&Ex1Inputs::from_params(p)?),
        System::Ex1b(p) => ex1b_persistence(&Ex1bInputs::from_params(p)?),
        System::Xc(p) => xc_report(&XcInputs::from_params(p)?),
        System::Ex34a(p) => ex34a_persistence(&Ex34aInputs::from_params(p)?),
        System::Ex34b(p) => ex34b_extinction(&Ex34bInputs::from_params(p)?),
        System::Custom(_) => return Ok(None),
    }))
}

pub const DEFAULT_Y_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    fn points(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.n.max(1);
        (0..n).map(move |k| {
            if n == 1 {
                self.lo
            } else {
                self.lo + (self.hi - self.lo) * k as f64 / (n - 1) as f64
            }
        })
    }
}

/// State points over which suprema and infima are taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateGrid {
    /// `y` on `points_per_axis` levels in `[y_min, 1]`, and for each level
    /// the remaining mass split between `x` and `z` at `points_per_axis`
    /// ratios.
    Simplex {
        points_per_axis: usize,
        y_min: f64,
    },
    Box {
        x: Axis,
        y: Axis,
        z: Axis,
    },
}

impl StateGrid {
    pub fn simplex(points_per_axis: usize) -> Self {
        StateGrid::Simplex {
            points_per_axis,
            y_min: DEFAULT_Y_MIN,
        }
    }

    pub fn y_min(&self) -> f64 {
        match self {
            StateGrid::Simplex { y_min, .. } => *y_min,
            StateGrid::Box { y, .. } => y.lo.min(y.hi),
        }
    }

    pub fn points(&self) -> Vec<State> {
        match *self {
            StateGrid::Simplex {
                points_per_axis,
                y_min,
            } => {
                let ys = Axis {
                    lo: y_min,
                    hi: 1.0,
                    n: points_per_axis,
                };
                let vs = Axis {
                    lo: 0.0,
                    hi: 1.0,
                    n: points_per_axis,
                };
                let mut out = Vec::with_capacity(points_per_axis * points_per_axis);
                for y in ys.points() {
                    for v in vs.points() {
                        let x = (1.0 - y) * v;
                        out.push(State::new(x, y, (1.0 - y - x).max(0.0)));
                    }
                }
                out
            }
            StateGrid::Box { x, y, z } => {
                let mut out = Vec::with_capacity(x.n * y.n * z.n);
                for a in x.points() {
                    for b in y.points() {
                        for c in z.points() {
                            out.push(State::new(a, b, c));
                        }
                    }
                }
                out
            }
        }
    }
}

/// `n` evenly spaced times on `[lo, hi]`.
pub fn time_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    Axis { lo, hi, n }.points().collect()
}

/// Quadrature nodes per measure piece for mark-dependent jump
/// coefficients in the grid estimates.
pub const ESTIMATE_NODES: usize = 1000;

fn nan_max(a: f64, b: f64) -> f64 {
    // NaN points (e.g. a custom coefficient undefined on the grid edge) are skipped
    a.max(b)
}

/// `∫ sup_s φ(s, u) ν(du)` over `region`, or `mass · sup_s φ(s)` when the
/// coefficients do not depend on `u`.
fn sup_integral(
    model: &ModelSpec,
    region: Region,
    states: &[State],
    f: impl Fn(&State, f64) -> f64,
) -> f64 {
    let measure = model.measure();
    let mass = measure.region_mass(region);
    if mass == 0.0 {
        return 0.0;
    }
    let sup_at = |u: f64| {
        states
            .iter()
            .map(|s| f(s, u))
            .fold(f64::NEG_INFINITY, nan_max)
    };
    if !model.jumps_depend_on_u() {
        return mass * sup_at(0.0);
    }
    measure
        .quadrature(region, ESTIMATE_NODES)
        .iter()
        .map(|&(u, w)| w * sup_at(u))
        .sum()
}

fn jump_terms_sup(model: &ModelSpec, t: f64, states: &[State]) -> Result<f64, EvalError> {
    let c = model.at(t)?;
    let small = sup_integral(model, Region::Small, states, |s, u| {
        let r = c.small_jump_ratio_y(s, u);
        r.ln_1p() - r
    });
    let large = sup_integral(model, Region::Large, states, |s, u| {
        c.large_jump_ratio_y(s, u).ln_1p()
    });
    Ok(small + large)
}

fn max_over_times(
    t_grid: &[f64],
    per_time: impl Fn(f64) -> Result<f64, EvalError> + Sync,
) -> Result<f64, EvalError> {
    let values: Vec<f64> = t_grid
        .par_iter()
        .map(|&t| per_time(t))
        .collect::<Result<_, _>>()?;
    Ok(values.into_iter().fold(f64::NEG_INFINITY, nan_max))
}

/// Grid estimate of the extinction exponent
/// `α = max_t { sup_s [b₂/y − Σσ₂ⱼ²/(2y²)] + ∫_{|u|<1} sup_s [ln(1+h₂/y) − h₂/y] ν(du)
/// + ∫_{|u|≥1} sup_s ln(1+g₂/y) ν(du) }`.
///
/// Suprema over finite grids can only undershoot the true ones, so this is
/// a lower estimate of `α`.
pub fn generic_alpha_estimate(
    model: &ModelSpec,
    t_grid: &[f64],
    grid: &StateGrid,
) -> Result<f64, EvalError> {
    let states = grid.points();
    max_over_times(t_grid, |t| {
        let c = model.at(t)?;
        let bracket = states
            .iter()
            .map(|s| {
                let r = c.infected_rates(s);
                r.drift - 0.5 * r.diffusion_sq
            })
            .fold(f64::NEG_INFINITY, nan_max);
        Ok(bracket + jump_terms_sup(model, t, &states)?)
    })
}

/// Grid estimate of the strengthened exponent `α*`, which replaces the
/// drift–diffusion bracket by `gain²/(2Σσ₂ⱼ²/y²) − loss`. Needs a split
/// `b₂/y = gain − loss`; `None` for models without one.
pub fn alpha_star_estimate(
    model: &ModelSpec,
    t_grid: &[f64],
    grid: &StateGrid,
) -> Result<Option<f64>, EvalError> {
    if matches!(model.system(), System::Custom(_)) {
        return Ok(None);
    }
    let states = grid.points();
    max_over_times(t_grid, |t| {
        let c = model.at(t)?;
        let bracket = states
            .iter()
            .map(|s| {
                let r = c.infected_rates(s);
                let (gain, loss) = (r.gain.unwrap_or(0.0), r.loss.unwrap_or(0.0));
                if r.diffusion_sq > 0.0 {
                    gain * gain / (2.0 * r.diffusion_sq) - loss
                } else if gain > 0.0 {
                    f64::INFINITY
                } else {
                    -loss
                }
            })
            .fold(f64::NEG_INFINITY, nan_max);
        Ok(bracket + jump_terms_sup(model, t, &states)?)
    })
    .map(Some)
}

/// Grid estimate of the largest `λ` with
/// `inf_s {λ₀y + b₂/y − Σσ₂ⱼ²/(2y²) + ∫[ln(1+h₂/y) − h₂/y]ν + ∫ln(1+g₂/y)ν} ≥ λ`
/// for every grid time. Infima over grids can only overshoot, so this is
/// an upper estimate of the true `λ`.
pub fn generic_persistence_estimate(
    model: &ModelSpec,
    lambda0: f64,
    t_grid: &[f64],
    grid: &StateGrid,
) -> Result<f64, EvalError> {
    let states = grid.points();
    let measure = model.measure();
    let depends = model.jumps_depend_on_u();
    let nodes = |region| {
        if depends {
            measure.quadrature(region, ESTIMATE_NODES)
        } else {
            vec![(0.0, measure.region_mass(region))]
        }
    };
    let small_nodes = nodes(Region::Small);
    let large_nodes = nodes(Region::Large);
    let neg = max_over_times(t_grid, |t| {
        let c = model.at(t)?;
        let inf = states
            .iter()
            .map(|s| {
                let r = c.infected_rates(s);
                let small: f64 = small_nodes
                    .iter()
                    .map(|&(u, w)| {
                        let q = c.small_jump_ratio_y(s, u);
                        w * (q.ln_1p() - q)
                    })
                    .sum();
                let large: f64 = large_nodes
                    .iter()
                    .map(|&(u, w)| w * c.large_jump_ratio_y(s, u).ln_1p())
                    .sum();
                lambda0 * s.y + r.drift - 0.5 * r.diffusion_sq + small + large
            })
            .fold(f64::INFINITY, f64::min);
        Ok(-inf)
    })?;
    Ok(-neg)
}

/// Report from the grid estimate: extinct when the estimate is negative.
pub fn generic_report(
    model: &ModelSpec,
    t_grid: &[f64],
    grid: &StateGrid,
) -> Result<CriteriaReport, EvalError> {
    let alpha = generic_alpha_estimate(model, t_grid, grid)?;
    let mut r = CriteriaReport::empty(model.name());
    r.side_conditions
        .push(SideCondition::less("alpha_estimate < 0", alpha, 0.0));
    if alpha < 0.0 {
        r.classification = Classification::Extinct;
        r.extinction_rate_lb = Some(-alpha);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{BoundsMethod, TimeFunction};
    use crate::levy::LevyMeasure;
    use crate::models::fixtures::*;
    use crate::models::{build_custom, build_ex1, CustomModel, Domain, Ex1Params};

    fn c(v: f64) -> BoundsPair {
        BoundsPair::constant(v)
    }

    fn b(inf: f64, sup: f64) -> BoundsPair {
        BoundsPair {
            inf,
            sup,
            method: BoundsMethod::Analytic,
        }
    }

    #[test]
    fn k_function() {
        let m = build_ex1(table1(), LevyMeasure::default()).unwrap();
        let s = State::new(0.8, 0.19, 0.01);
        let k = k_value(&m, 0.0, &s, 0.4).unwrap();
        let r = [-0.01 * 0.19, 0.01 * 0.8 - 0.025 * 0.01, 0.025 * 0.19];
        let oracle: f64 = r.iter().sum::<f64>() - r.iter().map(|x| (1.0 + x).ln()).sum::<f64>();
        assert!(k >= 0.0 && (k - oracle).abs() < 1e-15);
        assert_eq!(k_from_ratios([0.0; 3]).unwrap(), 0.0);
        let one = k_from_ratios([1.0, 0.0, 0.0]).unwrap();
        assert!((one - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!(matches!(
            k_from_ratios([0.0, -1.0, 0.0]),
            Err(CriteriaError::Domain { index: 2, .. })
        ));
    }

    #[test]
    fn ex1_table1() {
        let r = ex1_extinction(&Ex1Inputs::from_params(&table1()).unwrap());
        assert_eq!(r.classification, Classification::Extinct);
        assert!((r.extinction_rate_lb.unwrap() - 0.16).abs() < 1e-12);
    }

    #[test]
    fn ex1_boundary_and_arithmetic() {
        let r = ex1_extinction(&Ex1Inputs {
            beta: c(0.5),
            gamma: c(0.5),
            g1: 0.0,
        });
        assert_eq!(r.classification, Classification::Indeterminate);
        assert_eq!(r.extinction_rate_lb, None);
        let r = ex1_extinction(&Ex1Inputs {
            beta: c(0.5),
            gamma: c(1.0),
            g1: 0.1,
        });
        assert!((r.extinction_rate_lb.unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn ex1b_table2() {
        let r = ex1b_persistence(&Ex1bInputs::from_params(&table2()).unwrap());
        assert_eq!(r.classification, Classification::Persistent);
        assert!((r.lambda0.unwrap() - 0.55).abs() < 1e-15);
        let sigma = 0.141 + 0.02 * 2f64.sqrt();
        let oracle = 0.55 - 0.13 - 2.0 * (sigma * sigma + 0.019 - (0.982f64 * 0.9).ln());
        assert!((r.lambda.unwrap() - oracle).abs() < 1e-12);
        assert!((r.lambda.unwrap() - 0.0776367).abs() < 1e-5);
        assert!((r.mean_infected_lb.unwrap() - 0.14115).abs() < 1e-4);
    }

    #[test]
    fn ex1b_formula_and_gate() {
        let quiet = Ex1bInputs {
            beta: c(0.3),
            gamma1: c(0.1),
            gamma2: c(0.5),
            sigma: c(0.0),
            h1: 0.0,
            h2: 0.0,
            g2: 0.0,
        };
        let r = ex1b_persistence(&quiet);
        assert!((r.lambda.unwrap() - 0.4).abs() < 1e-15);
        let r = ex1b_persistence(&Ex1bInputs {
            beta: c(0.6),
            ..quiet
        });
        assert_eq!(r.classification, Classification::Indeterminate);
        assert!(!r.side_conditions[1].satisfied);
    }

    #[test]
    fn xc_table3() {
        let r = xc_report(&XcInputs::from_params(&table3()).unwrap());
        assert!((r.invariant_bound.unwrap() - 8.484848).abs() < 1e-6);
        // independent evaluation at the tabulated bounds
        let sig2 = (0.12 - 0.01 * 2f64.sqrt()).powi(2);
        let d = 0.066 + 0.88 + 0.08;
        let r0 = 0.14 * 0.56 / (0.066 * d) - sig2 * 0.56 * 0.56 / (2.0 * 0.066 * 0.066 * d);
        assert!((r.r_tilde.unwrap() - r0).abs() < 1e-12);
        assert!((r.r_tilde.unwrap() - 0.7646).abs() < 5e-4);
        assert_eq!(r.classification, Classification::Extinct);
        assert!((r.extinction_rate_lb.unwrap() - 0.241).abs() < 1e-3);
        assert!(sig2 < 0.0121);
        let weak = &r.side_conditions[0];
        assert!(weak.satisfied && (weak.margin + sig2 - 0.0165).abs() < 1e-12);
    }

    #[test]
    fn xc_table4() {
        let mut p = table3();
        p.sigma = tf("0.55+0.003*(sin(t)+cos(t))");
        let r = xc_report(&XcInputs::from_params(&p).unwrap());
        let sig2 = (0.55 - 0.003 * 2f64.sqrt()).powi(2);
        assert!(sig2 >= 0.29);
        assert!(r.side_conditions[2].satisfied);
        assert_eq!(r.classification, Classification::Extinct);
        let oracle = 1.026 - 0.14 * 0.14 / (2.0 * sig2);
        assert!((r.extinction_rate_lb.unwrap() - oracle).abs() < 1e-12);
        assert!((r.extinction_rate_lb.unwrap() - 0.993).abs() < 1e-3);
    }

    #[test]
    fn xc_table5() {
        let mut p = table3();
        p.beta = tf("0.56+0.01*sin(4*t)");
        p.gamma = tf("0.25+0.1*cos(5*t)");
        p.sigma = tf("0.24+0.01*(sin(t)+cos(t))");
        let r = xc_report(&XcInputs::from_params(&p).unwrap());
        let s2 = (0.24 + 0.01 * 2f64.sqrt()).powi(2);
        let d = 0.074 + 0.35 + 0.22;
        let hand = 0.55 * 0.44 / (0.074 * d) - s2 * 0.56 * 0.56 / (2.0 * 0.066 * 0.066 * d);
        let rp = r.r_tilde_persistence.unwrap();
        assert!((rp - hand).abs() < 1e-12);
        assert!((rp - 1.468).abs() < 1e-3);
        assert_eq!(r.classification, Classification::Persistent);
        let printed = 0.074 * (rp - 1.0) / 0.55;
        assert!((r.mean_infected_lb.unwrap() - printed).abs() < 1e-12);
    }

    #[test]
    fn xc_monotone_in_sigma_inf() {
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let inp = XcInputs {
                sigma: c(0.005 * k as f64),
                ..XcInputs::from_params(&table3()).unwrap()
            };
            let r0 = xc_report(&inp).r_tilde.unwrap();
            assert!(r0 <= last);
            last = r0;
        }
    }

    #[test]
    fn ex34a_table6() {
        let r = ex34a_persistence(&Ex34aInputs::from_params(&table6()).unwrap());
        assert_eq!(r.lambda0, Some(1.16));
        let oracle = 0.0979
            - ((0.16f64.powi(2) + 0.13f64.powi(2)) / 2.0 + 0.0001 - (0.99975f64 * 0.9988).ln());
        assert!((r.lambda.unwrap() - oracle).abs() < 1e-12);
        assert!((r.lambda.unwrap() - 0.075).abs() < 1e-3);
        assert!((r.mean_infected_lb.unwrap() - 0.064).abs() < 1e-3);
    }

    #[test]
    fn ex34a_degenerate_cases() {
        let base = Ex34aInputs {
            mu: c(0.01),
            gamma2: c(0.3),
            gamma3: c(0.0),
            sigma1: c(0.0),
            sigma2: c(0.0),
            h1: 0.0,
            h2: 0.0,
            g2: 0.0,
            cap: 1e9,
        };
        assert!((ex34a_persistence(&base).lambda.unwrap() - 0.29).abs() < 1e-15);
        let r = ex34a_persistence(&Ex34aInputs {
            gamma2: c(0.01),
            ..base
        });
        assert_eq!(r.classification, Classification::Indeterminate);
    }

    #[test]
    fn ex34b_cases() {
        let r = ex34b_extinction(&Ex34bInputs::from_params(&table7()).unwrap());
        assert!((r.extinction_rate_lb.unwrap() - 0.165).abs() < 1e-3);
        let r = ex34b_extinction(&Ex34bInputs {
            mu: c(0.1),
            beta: c(0.2),
            gamma2: c(0.5),
            g1: 0.05,
        });
        assert!((r.extinction_rate_lb.unwrap() - 0.3).abs() < 1e-15);
        let r = ex34b_extinction(&Ex34bInputs {
            mu: c(0.1),
            beta: c(0.6),
            gamma2: c(0.5),
            g1: 0.0,
        });
        assert_eq!(r.classification, Classification::Indeterminate);
    }

    #[test]
    fn report_serialization() {
        let r = ex1_extinction(&Ex1Inputs {
            beta: b(0.2, 0.4),
            gamma: b(0.76, 0.84),
            g1: 0.1,
        });
        let text = r.to_text();
        assert!(text.contains("classification: extinct\n"));
        assert!(text.contains("lambda0: NA\n"));
        assert!(text.lines().all(|l| l.contains(": ")));
        let row = r.csv_row();
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
        assert!(row.starts_with("ex1,extinct,"));
        assert!(row.ends_with(",1/1"));
    }

    fn constant_ex1(g1: f64) -> ModelSpec {
        let k = TimeFunction::constant;
        build_ex1(
            Ex1Params {
                beta: k(0.3),
                gamma: k(0.8),
                xi: k(1.0),
                sigma1: k(0.0),
                sigma2: k(0.0),
                phi1: k(0.0),
                phi2: k(0.0),
                phi3: k(0.0),
                h1: 0.0,
                h2: 0.0,
                g1,
                g2: 0.0,
            },
            LevyMeasure::default(),
        )
        .unwrap()
    }

    #[test]
    fn alpha_estimate_matches_tight_closed_form() {
        let m = constant_ex1(0.01);
        let est = generic_alpha_estimate(&m, &[0.0], &StateGrid::simplex(200)).unwrap();
        let closed = ex1_extinction(&Ex1Inputs {
            beta: c(0.3),
            gamma: c(0.8),
            g1: 0.01,
        })
        .extinction_rate_lb
        .unwrap();
        assert!((est + closed).abs() < 0.02, "{est} vs {closed}");
        // sup at x = 1 - y_min
        let oracle = 0.3 * (1.0 - 1e-3) - 0.8 + 2.0 * (0.01f64 * (1.0 - 1e-3)).ln_1p();
        assert!((est - oracle).abs() < 1e-12);
    }

    #[test]
    fn alpha_estimate_below_table1_bound() {
        let m = build_ex1(table1(), LevyMeasure::default()).unwrap();
        let t = time_grid(0.0, 20.0, 100);
        let est = generic_alpha_estimate(&m, &t, &StateGrid::simplex(100)).unwrap();
        assert!(est <= -0.16 + 0.02, "{est}");
        let star = alpha_star_estimate(&m, &t, &StateGrid::simplex(100))
            .unwrap()
            .unwrap();
        assert!(star >= est);
    }

    #[test]
    fn alpha_of_linear_decay() {
        let m = build_custom(
            CustomModel::parse(
                Domain::Simplex,
                ["0", "-0.3*y", "0.3*y"],
                &[],
                ["0", "0", "0"],
                ["0", "0", "0"],
            )
            .unwrap(),
            LevyMeasure::default(),
        )
        .unwrap();
        let est =
            generic_alpha_estimate(&m, &time_grid(0.0, 5.0, 7), &StateGrid::simplex(30)).unwrap();
        assert!((est + 0.3).abs() < 1e-15);
        let r = generic_report(&m, &[0.0], &StateGrid::simplex(30)).unwrap();
        assert_eq!(r.classification, Classification::Extinct);
        assert_eq!(
            alpha_star_estimate(&m, &[0.0], &StateGrid::simplex(5)).unwrap(),
            None
        );
    }

    #[test]
    fn jump_contribution_by_quadrature() {
        let only_jumps = |g2: &str| {
            let neg = format!("-({g2})");
            // conserving but not positivity-preserving near x = 0, so unchecked
            ModelSpec::unchecked(
                System::Custom(
                    CustomModel::parse(
                        Domain::Simplex,
                        ["0", "0", "0"],
                        &[],
                        ["0", "0", "0"],
                        [&neg, g2, "0"],
                    )
                    .unwrap(),
                ),
                LevyMeasure::default(),
            )
        };
        let grid = StateGrid::simplex(10);
        let flat = generic_alpha_estimate(&only_jumps("0.2*y"), &[0.0], &grid).unwrap();
        assert!((flat - 2.0 * 1.2f64.ln()).abs() < 1e-12);
        // ∫_{1≤|u|≤2} ln(1 + 0.2u²) du
        let f = |u: f64| {
            let a = 0.2f64.sqrt();
            u * (1.0 + 0.2 * u * u).ln() - 2.0 * u + 2.0 * (a * u).atan() / a
        };
        let closed = 2.0 * (f(2.0) - f(1.0));
        let curved = generic_alpha_estimate(&only_jumps("0.2*u*u*y"), &[0.0], &grid).unwrap();
        assert!((curved - closed).abs() < 1e-6, "{curved} vs {closed}");
    }

    #[test]
    fn persistence_estimate_on_constant_rates() {
        let m = constant_ex1(0.0);
        // inf over y of λ₀y + βx − γ with x = 0 at the grid edge
        let lam = generic_persistence_estimate(&m, 1.0, &[0.0], &StateGrid::simplex(50)).unwrap();
        assert!((lam - (1e-3 - 0.8)).abs() < 1e-12);
    }

    #[test]
    fn grid_points() {
        let pts = StateGrid::simplex(4).points();
        assert_eq!(pts.len(), 16);
        assert!(pts
            .iter()
            .all(|s| (s.sum() - 1.0).abs() < 1e-15 && s.y >= 1e-3));
        let bx = StateGrid::Box {
            x: Axis {
                lo: 0.0,
                hi: 1.0,
                n: 3,
            },
            y: Axis {
                lo: 0.5,
                hi: 0.5,
                n: 1,
            },
            z: Axis {
                lo: 1.0,
                hi: 2.0,
                n: 2,
            },
        };
        assert_eq!(bx.points().len(), 6);
        assert_eq!(bx.y_min(), 0.5);
        assert_eq!(time_grid(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn k_is_nonnegative(a in -0.999f64..5.0, b2 in -0.999f64..5.0, c3 in -0.999f64..5.0) {
                prop_assert!(k_from_ratios([a, b2, c3]).unwrap() >= 0.0);
            }

            #[test]
            fn ex1_rate_weakly_decreasing_in_g1(g in 0.0f64..0.5, dg in 0.0f64..0.5) {
                let inp = |g1| Ex1Inputs { beta: c(0.2), gamma: c(2.0), g1 };
                let lo = ex1_extinction(&inp(g)).extinction_rate_lb;
                let hi = ex1_extinction(&inp(g + dg)).extinction_rate_lb;
                match (lo, hi) {
                    (Some(a), Some(b)) => prop_assert!(b <= a),
                    (None, Some(_)) => prop_assert!(false),
                    _ => {}
                }
            }

            #[test]
            fn grid_order_does_not_matter(seed in 0u64..1000) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let m = build_ex1(table1(), LevyMeasure::default()).unwrap();
                let mut t = time_grid(0.0, 3.0, 6);
                let a = generic_alpha_estimate(&m, &t, &StateGrid::simplex(8)).unwrap();
                t.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let b = generic_alpha_estimate(&m, &t, &StateGrid::simplex(8)).unwrap();
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
