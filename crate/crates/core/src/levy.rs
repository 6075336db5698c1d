//! Lévy intensity measures and Poisson random measure sampling.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::expr::EvalError;
use crate::models::{Coefficients, ModelSpec, State};

/// Quadrature nodes per measure piece for u-dependent integrands.
pub const QUADRATURE_NODES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LevyError {
    #[error("piece [{lo}, {hi}] must have lo < hi")]
    EmptyPiece { lo: f64, hi: f64 },
    #[error("density {0} must be finite and non-negative")]
    BadDensity(f64),
    #[error("pieces overlap near {0}")]
    Overlap(f64),
}

/// Small jumps `|u| < 1` enter compensated, large jumps `|u| ≥ 1` do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Small,
    Large,
}

impl Region {
    pub fn contains(self, u: f64) -> bool {
        match self {
            Region::Small => u.abs() < 1.0,
            Region::Large => u.abs() >= 1.0,
        }
    }
}

/// A constant-density interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub density: f64,
}

impl Piece {
    fn mass(&self) -> f64 {
        (self.hi - self.lo) * self.density
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct RegionTable {
    pieces: Vec<Piece>,
    mass: f64,
}

impl RegionTable {
    fn build(support: &[Piece], region: Region) -> Self {
        let windows: &[(f64, f64)] = match region {
            Region::Small => &[(-1.0, 1.0)],
            Region::Large => &[(f64::NEG_INFINITY, -1.0), (1.0, f64::INFINITY)],
        };
        let pieces: Vec<Piece> = support
            .iter()
            .flat_map(|p| {
                windows.iter().filter_map(move |&(a, b)| {
                    let lo = p.lo.max(a);
                    let hi = p.hi.min(b);
                    (hi > lo && p.density > 0.0).then_some(Piece {
                        lo,
                        hi,
                        density: p.density,
                    })
                })
            })
            .collect();
        let mass = pieces.iter().map(Piece::mass).sum();
        RegionTable { pieces, mass }
    }

    fn sample<R: Rng + ?Sized>(&self, region: Region, rng: &mut R) -> f64 {
        loop {
            let target = rng.random::<f64>() * self.mass;
            let mut acc = 0.0;
            let p = self
                .pieces
                .iter()
                .find(|p| {
                    acc += p.mass();
                    target < acc
                })
                .unwrap_or(&self.pieces[self.pieces.len() - 1]);
            let u = p.lo + rng.random::<f64>() * (p.hi - p.lo);
            // the lower endpoint -1 of the small window is excluded
            if region.contains(u) {
                return u;
            }
        }
    }
}

/// Intensity measure `ν` on `ℝ∖{0}` with piecewise-constant density on a
/// bounded support.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyMeasure {
    support: Vec<Piece>,
    small: RegionTable,
    large: RegionTable,
}

impl LevyMeasure {
    pub fn piecewise(mut pieces: Vec<Piece>) -> Result<Self, LevyError> {
        for p in &pieces {
            if !(p.lo < p.hi) || !p.lo.is_finite() || !p.hi.is_finite() {
                return Err(LevyError::EmptyPiece { lo: p.lo, hi: p.hi });
            }
            if !(p.density >= 0.0) || !p.density.is_finite() {
                return Err(LevyError::BadDensity(p.density));
            }
        }
        pieces.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        for w in pieces.windows(2) {
            if w[1].lo < w[0].hi {
                return Err(LevyError::Overlap(w[1].lo));
            }
        }
        Ok(LevyMeasure {
            small: RegionTable::build(&pieces, Region::Small),
            large: RegionTable::build(&pieces, Region::Large),
            support: pieces,
        })
    }

    /// Lebesgue measure restricted to `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64) -> Result<Self, LevyError> {
        Self::piecewise(vec![Piece {
            lo,
            hi,
            density: 1.0,
        }])
    }

    /// The zero measure; models without jump terms carry this.
    pub fn none() -> Self {
        LevyMeasure {
            support: Vec::new(),
            small: RegionTable::default(),
            large: RegionTable::default(),
        }
    }

    pub fn support(&self) -> &[Piece] {
        &self.support
    }

    pub fn region_mass(&self, region: Region) -> f64 {
        self.table(region).mass
    }

    /// `∫ (1 ∧ |u|²) ν(du)`; finite for every bounded support.
    pub fn truncated_second_moment(&self) -> f64 {
        let small: f64 = self
            .small
            .pieces
            .iter()
            .map(|p| p.density * (p.hi.powi(3) - p.lo.powi(3)) / 3.0)
            .sum();
        small + self.large.mass
    }

    fn table(&self, region: Region) -> &RegionTable {
        match region {
            Region::Small => &self.small,
            Region::Large => &self.large,
        }
    }

    /// Draws one mark from `ν` restricted to `region` and normalized.
    pub fn sample_mark<R: Rng + ?Sized>(&self, region: Region, rng: &mut R) -> Option<f64> {
        let table = self.table(region);
        (table.mass > 0.0).then(|| table.sample(region, rng))
    }

    /// Midpoint-rule nodes `(u, weight)` with `nodes_per_piece` nodes on each
    /// piece of `region`; weights sum to the region mass.
    pub fn quadrature(&self, region: Region, nodes_per_piece: usize) -> Vec<(f64, f64)> {
        let n = nodes_per_piece.max(1);
        self.table(region)
            .pieces
            .iter()
            .flat_map(|p| {
                let h = (p.hi - p.lo) / n as f64;
                (0..n).map(move |k| (p.lo + (k as f64 + 0.5) * h, h * p.density))
            })
            .collect()
    }

    /// Sampler for a fixed step size, reused across the steps of a path.
    pub fn sampler(&self, region: Region, dt: f64) -> JumpSampler<'_> {
        let table = self.table(region);
        let rate = table.mass * dt;
        JumpSampler {
            region,
            table,
            count: if rate > 0.0 {
                Some(Poisson::new(rate).expect("positive finite Poisson rate"))
            } else {
                None
            },
        }
    }
}

impl Default for LevyMeasure {
    /// Lebesgue measure on `[-2, 2]`.
    fn default() -> Self {
        Self::uniform(-2.0, 2.0).expect("valid interval")
    }
}

/// The marks of one region landing in one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpBatch {
    pub region: Region,
    pub marks: Vec<f64>,
}

impl JumpBatch {
    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct JumpSampler<'a> {
    region: Region,
    table: &'a RegionTable,
    count: Option<Poisson<f64>>,
}

impl JumpSampler<'_> {
    /// Number of jumps in one step, `Poisson(ν(region)·dt)`.
    pub fn sample_count<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.count {
            Some(d) => d.sample(rng) as u64,
            None => 0,
        }
    }

    pub fn sample_mark<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.table.sample(self.region, rng)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> JumpBatch {
        let n = self.sample_count(rng);
        JumpBatch {
            region: self.region,
            marks: (0..n).map(|_| self.sample_mark(rng)).collect(),
        }
    }
}

/// Jumps of `region` during a step of length `dt`: the count is
/// `Poisson(ν(region)·dt)` and marks are i.i.d. from the normalized
/// restriction of `ν`.
pub fn sample_jumps<R: Rng + ?Sized>(
    m: &LevyMeasure,
    region: Region,
    dt: f64,
    rng: &mut R,
) -> JumpBatch {
    m.sampler(region, dt).sample(rng)
}

/// `∫_{|u|<1} h_i(t, state, u) ν(du)` for `i = 1, 2, 3`.
pub fn compensator_integral(
    model: &ModelSpec,
    t: f64,
    state: &State,
) -> Result<[f64; 3], EvalError> {
    let c = model.at(t)?;
    let nodes = if c.jumps_depend_on_u() {
        model.measure().quadrature(Region::Small, QUADRATURE_NODES)
    } else {
        Vec::new()
    };
    Ok(compensator_with(&c, model.measure(), &nodes, state))
}

/// Compensator from frozen coefficients. `nodes` is only read when the jump
/// coefficients depend on the mark.
pub(crate) fn compensator_with(
    c: &Coefficients<'_>,
    measure: &LevyMeasure,
    nodes: &[(f64, f64)],
    state: &State,
) -> [f64; 3] {
    let mass = measure.region_mass(Region::Small);
    if mass == 0.0 {
        return [0.0; 3];
    }
    if !c.jumps_depend_on_u() {
        let h = c.small_jump(state, 0.0);
        return [h[0] * mass, h[1] * mass, h[2] * mass];
    }
    let mut acc = [0.0; 3];
    for &(u, w) in nodes {
        let h = c.small_jump(state, u);
        for i in 0..3 {
            acc[i] += h[i] * w;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn region_masses() {
        let m = LevyMeasure::default();
        assert_eq!(m.region_mass(Region::Small), 2.0);
        assert_eq!(m.region_mass(Region::Large), 2.0);
        let narrow = LevyMeasure::uniform(-0.5, 0.5).unwrap();
        assert_eq!(narrow.region_mass(Region::Large), 0.0);
        assert_eq!(narrow.region_mass(Region::Small), 1.0);
        // small + large = mass of the support
        let lopsided = LevyMeasure::uniform(-0.3, 3.5).unwrap();
        let total = lopsided.region_mass(Region::Small) + lopsided.region_mass(Region::Large);
        assert!((total - 3.8).abs() < 1e-15);
        assert!((m.truncated_second_moment() - (2.0 / 3.0 + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_pieces() {
        assert!(LevyMeasure::uniform(1.0, 1.0).is_err());
        let overlap = LevyMeasure::piecewise(vec![
            Piece {
                lo: -1.0,
                hi: 1.0,
                density: 1.0,
            },
            Piece {
                lo: 0.5,
                hi: 2.0,
                density: 1.0,
            },
        ]);
        assert!(matches!(overlap, Err(LevyError::Overlap(_))));
        let negative = LevyMeasure::piecewise(vec![Piece {
            lo: 0.0,
            hi: 1.0,
            density: -1.0,
        }]);
        assert!(matches!(negative, Err(LevyError::BadDensity(_))));
    }

    #[test]
    fn marks_lie_in_region() {
        let m = LevyMeasure::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let s = m.sample_mark(Region::Small, &mut rng).unwrap();
            assert!(Region::Small.contains(s) && s.abs() <= 2.0);
            let l = m.sample_mark(Region::Large, &mut rng).unwrap();
            assert!(Region::Large.contains(l) && l.abs() <= 2.0);
        }
    }

    #[test]
    fn large_marks_cover_both_sides_uniformly() {
        let m = LevyMeasure::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| m.sample_mark(Region::Large, &mut rng).unwrap())
            .collect();
        let negative = draws.iter().filter(|u| **u < 0.0).count() as f64 / n as f64;
        assert!((negative - 0.5).abs() < 0.01);
        let mean_abs = draws.iter().map(|u| u.abs()).sum::<f64>() / n as f64;
        assert!((mean_abs - 1.5).abs() < 0.01);
    }

    #[test]
    fn zero_mass_region_is_always_empty() {
        let narrow = LevyMeasure::uniform(-0.5, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(sample_jumps(&narrow, Region::Large, 1.0, &mut rng).is_empty());
        }
        assert!(sample_jumps(&LevyMeasure::none(), Region::Small, 1.0, &mut rng).is_empty());
    }

    #[test]
    fn fixed_seed_reproduces_batch() {
        let m = LevyMeasure::default();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            (0..50)
                .map(|_| sample_jumps(&m, Region::Small, 0.5, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn poisson_count_mean_matches_mass_times_dt() {
        let m = LevyMeasure::default();
        let sampler = m.sampler(Region::Small, 0.001);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let calls = 2_000_000u64;
        let total: u64 = (0..calls).map(|_| sampler.sample_count(&mut rng)).sum();
        let mean = total as f64 / calls as f64;
        assert!((mean / 0.002 - 1.0).abs() < 0.01, "mean count {mean}");
    }

    #[test]
    fn quadrature_weights_sum_to_mass() {
        let m = LevyMeasure::default();
        for region in [Region::Small, Region::Large] {
            let w: f64 = m.quadrature(region, 1000).iter().map(|(_, w)| w).sum();
            assert!((w - m.region_mass(region)).abs() < 1e-12);
        }
        // ∫_{1≤|u|≤2} u² du = 14/3
        let q: f64 = m
            .quadrature(Region::Large, 1000)
            .iter()
            .map(|(u, w)| u * u * w)
            .sum();
        assert!((q - 14.0 / 3.0).abs() < 1e-5);
    }
}
