//! Euler–Maruyama stepping with Poisson jumps.
//!
//! One step from `(t, s)` draws, in this order, the Brownian increments
//! `ΔB_1..ΔB_n ~ N(0, dt)`, the small-jump count and marks, then the
//! large-jump count and marks. All draws happen even when a term group is
//! switched off, so runs that differ only in [`Terms`](crate::models::Terms)
//! see the same noise realization.
//!
//! Random streams come from [`ChaCha8Rng`] seeded with `seed_from_u64`;
//! ensemble path `i` of master seed `m` uses [`path_seed`]`(m, i)`.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::expr::EvalError;
use crate::levy::{compensator_with, JumpSampler, Region, QUADRATURE_NODES};
use crate::models::{Domain, ModelSpec, State};

pub const DEFAULT_DT: f64 = 0.001;
pub const DEFAULT_FLOOR: f64 = 1e-12;
/// Simplex states are renormalized only when `|x+y+z-1|` exceeds this.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("initial state {0:?} is not admissible for the {1:?} domain")]
    Inadmissible(State, Domain),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub positivity_floor: f64,
    pub record_stride: usize,
}

impl SimConfig {
    pub fn new(horizon: f64, seed: u64) -> Self {
        SimConfig {
            dt: DEFAULT_DT,
            horizon,
            seed,
            positivity_floor: DEFAULT_FLOOR,
            record_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config(format!(
                "dt = {} must be positive",
                self.dt
            )));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(SimError::Config(format!(
                "horizon = {} must be at least dt = {}",
                self.horizon, self.dt
            )));
        }
        if self.record_stride == 0 {
            return Err(SimError::Config("record_stride must be at least 1".into()));
        }
        if !(self.positivity_floor > 0.0) {
            return Err(SimError::Config(format!(
                "positivity_floor = {} must be positive",
                self.positivity_floor
            )));
        }
        Ok(())
    }

    /// Number of steps `⌈T/dt⌉`, ignoring rounding noise in the ratio.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil().max(1.0) as usize
    }
}

/// Seed of ensemble path `index` under master seed `seed` (SplitMix64
/// finalizer applied to the pair).
pub fn path_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .rotate_left(17)
        ^ index;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// Number of components raised to the positivity floor.
    pub floor_hits: usize,
    /// Largest `|x+y+z-1|` of any pre-projection state; 0 off the simplex.
    pub simplex_drift: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first(&self) -> (f64, State) {
        (self.times[0], self.states[0])
    }

    pub fn last(&self) -> (f64, State) {
        let k = self.times.len() - 1;
        (self.times[k], self.states[k])
    }

    /// CSV with header `t,X,Y,Z`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,X,Y,Z")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(w, "{t:.16e},{:.16e},{:.16e},{:.16e}", s.x, s.y, s.z)?;
        }
        Ok(())
    }

    /// CSV of one compartment, header `t,<name>`.
    pub fn write_component_csv<W: Write>(&self, index: usize, mut w: W) -> io::Result<()> {
        let name = ["X", "Y", "Z"][index];
        writeln!(w, "t,{name}")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(w, "{t:.16e},{:.16e}", s.to_array()[index])?;
        }
        Ok(())
    }
}

/// Raises non-positive (or NaN) components to `floor` and, on the simplex,
/// rescales to unit sum when off by more than [`SIMPLEX_TOL`]. Returns the
/// projected state and the number of clamped components.
///
/// Positive components below `floor` are kept: on extinction paths the
/// infected share legitimately decays far below any fixed floor.
pub fn project(s: State, domain: Domain, floor: f64) -> (State, usize) {
    let mut hits = 0;
    let mut a = s.to_array();
    for v in &mut a {
        if !(*v > 0.0) {
            *v = floor;
            hits += 1;
        }
    }
    if domain == Domain::Simplex {
        let sum = a[0] + a[1] + a[2];
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            for v in &mut a {
                *v /= sum;
            }
        }
    }
    (State::from_array(a), hits)
}

/// Reusable per-path stepping state for one model and step size.
pub struct Stepper<'m> {
    model: &'m ModelSpec,
    dt: f64,
    sqrt_dt: f64,
    small: JumpSampler<'m>,
    large: JumpSampler<'m>,
    nodes: Vec<(f64, f64)>,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m ModelSpec, dt: f64) -> Self {
        let measure = model.measure();
        Stepper {
            model,
            dt,
            sqrt_dt: dt.sqrt(),
            small: measure.sampler(Region::Small, dt),
            large: measure.sampler(Region::Large, dt),
            nodes: if model.jumps_depend_on_u() {
                measure.quadrature(Region::Small, QUADRATURE_NODES)
            } else {
                Vec::new()
            },
        }
    }

    /// One Euler–Maruyama step without the positivity safeguard.
    pub fn raw_step<R: Rng + ?Sized>(
        &self,
        t: f64,
        s: &State,
        rng: &mut R,
    ) -> Result<State, EvalError> {
        let c = self.model.at(t)?;
        let b = c.drift(s);
        let mut next = s.to_array();
        for i in 0..3 {
            next[i] += b[i] * self.dt;
        }
        for j in 0..self.model.brownian_dim() {
            let db: f64 = rng.sample::<f64, _>(StandardNormal) * self.sqrt_dt;
            let col = c.diffusion_column(s, j);
            for i in 0..3 {
                next[i] += col[i] * db;
            }
        }
        let n_small = self.small.sample_count(rng);
        for _ in 0..n_small {
            let h = c.small_jump(s, self.small.sample_mark(rng));
            for i in 0..3 {
                next[i] += h[i];
            }
        }
        let comp = compensator_with(&c, self.model.measure(), &self.nodes, s);
        for i in 0..3 {
            next[i] -= comp[i] * self.dt;
        }
        let n_large = self.large.sample_count(rng);
        for _ in 0..n_large {
            let g = c.large_jump(s, self.large.sample_mark(rng));
            for i in 0..3 {
                next[i] += g[i];
            }
        }
        Ok(State::from_array(next))
    }
}

/// One safeguarded step with the default positivity floor.
pub fn step<R: Rng + ?Sized>(
    model: &ModelSpec,
    t: f64,
    s: &State,
    dt: f64,
    rng: &mut R,
) -> Result<State, EvalError> {
    let raw = Stepper::new(model, dt).raw_step(t, s, rng)?;
    Ok(project(raw, model.domain(), DEFAULT_FLOOR).0)
}

pub fn simulate(model: &ModelSpec, s0: State, cfg: &SimConfig) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let domain = model.domain();
    if !domain.admits(&s0, SIMPLEX_TOL) {
        return Err(SimError::Inadmissible(s0, domain));
    }
    let k_max = cfg.steps();
    let stepper = Stepper::new(model, cfg.dt);
    let mut rng = rng_from_seed(cfg.seed);
    let capacity = k_max / cfg.record_stride + 2;
    let mut traj = Trajectory {
        times: Vec::with_capacity(capacity),
        states: Vec::with_capacity(capacity),
        floor_hits: 0,
        simplex_drift: 0.0,
    };
    let drift = |s: &State| {
        if domain == Domain::Simplex {
            (s.sum() - 1.0).abs()
        } else {
            0.0
        }
    };
    traj.simplex_drift = drift(&s0);
    traj.times.push(0.0);
    traj.states.push(s0);
    let mut s = s0;
    for k in 0..k_max {
        let t = k as f64 * cfg.dt;
        let raw = stepper.raw_step(t, &s, &mut rng)?;
        traj.simplex_drift = traj.simplex_drift.max(drift(&raw));
        let (next, hits) = project(raw, domain, cfg.positivity_floor);
        traj.floor_hits += hits;
        s = next;
        let k1 = k + 1;
        if k1 % cfg.record_stride == 0 || k1 == k_max {
            traj.times.push(k1 as f64 * cfg.dt);
            traj.states.push(s);
        }
    }
    Ok(traj)
}

/// Strong error of Euler–Maruyama on `dS = aS dt + bS dB` at each step size.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<(f64, f64)>,
    /// Least-squares slope of `ln error` against `ln dt`.
    pub order: f64,
}

/// Compares E-M against `s0·exp((a − b²/2)T + b·B_T)` driven by the same
/// increments. Per path, increments are drawn on the finest grid and summed
/// for coarser step sizes that are integer multiples of it.
pub fn convergence_probe(
    a: f64,
    b: f64,
    s0: f64,
    horizon: f64,
    dt_list: &[f64],
    paths: usize,
    seed: u64,
) -> ConvergenceTable {
    let fine = dt_list.iter().copied().fold(f64::INFINITY, f64::min);
    let fine_steps = (horizon / fine).round().max(1.0) as usize;
    let fine_h = horizon / fine_steps as f64;
    let mut sums = vec![0.0; dt_list.len()];
    let mut increments = vec![0.0; fine_steps];
    for p in 0..paths {
        let mut rng = rng_from_seed(path_seed(seed, p as u64));
        let sd = fine_h.sqrt();
        for db in &mut increments {
            *db = rng.sample::<f64, _>(StandardNormal) * sd;
        }
        let b_total: f64 = increments.iter().sum();
        let exact = s0 * ((a - 0.5 * b * b) * horizon + b * b_total).exp();
        for (idx, &dt) in dt_list.iter().enumerate() {
            let ratio = dt / fine_h;
            let m = ratio.round() as usize;
            let approx =
                if m >= 1 && (ratio - m as f64).abs() < 1e-6 && fine_steps.is_multiple_of(m) {
                    let h = fine_h * m as f64;
                    increments.chunks(m).fold(s0, |s, chunk| {
                        let db: f64 = chunk.iter().sum();
                        s + a * s * h + b * s * db
                    })
                } else {
                    // not nested in the finest grid: independent increments,
                    // exact solution from the same ones
                    let k = (horizon / dt).round().max(1.0) as usize;
                    let h = horizon / k as f64;
                    let mut own = rng_from_seed(path_seed(seed ^ (idx as u64 + 1), p as u64));
                    let (mut s, mut bt) = (s0, 0.0);
                    for _ in 0..k {
                        let db = own.sample::<f64, _>(StandardNormal) * h.sqrt();
                        s += a * s * h + b * s * db;
                        bt += db;
                    }
                    let exact_own = s0 * ((a - 0.5 * b * b) * horizon + b * bt).exp();
                    sums[idx] += (exact_own - s).abs();
                    continue;
                };
            sums[idx] += (exact - approx).abs();
        }
    }
    let rows: Vec<(f64, f64)> = dt_list
        .iter()
        .zip(&sums)
        .map(|(&dt, &e)| (dt, e / paths.max(1) as f64))
        .collect();
    let order = log_log_slope(&rows);
    ConvergenceTable { rows, order }
}

fn log_log_slope(rows: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(dt, e)| *dt > 0.0 && *e > 0.0)
        .map(|(dt, e)| (dt.ln(), e.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
