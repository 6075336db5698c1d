//! Seeded path ensembles and their comparison with threshold predictions.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::criteria::{Classification, CriteriaReport};
use crate::integrator::{path_seed, simulate, SimConfig, SimError, Trajectory};
use crate::models::{Domain, ModelSpec, State};

/// Extinction threshold for proportions.
pub const Y_EXTINCT_SIMPLEX: f64 = 1e-6;
/// Extinction threshold for population numbers (in millions).
pub const Y_EXTINCT_OCTANT: f64 = 1e-3;
pub const DEFAULT_SLACK: f64 = 0.5;

pub fn y_extinct(domain: Domain) -> f64 {
    match domain {
        Domain::Simplex => Y_EXTINCT_SIMPLEX,
        Domain::Octant => Y_EXTINCT_OCTANT,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Full,
    /// `[T/2, T]`
    TailHalf,
}

/// `(ln Y_T − ln Y_0) / T`
pub fn lyapunov_estimate(traj: &Trajectory) -> f64 {
    let (t0, s0) = traj.first();
    let (t1, s1) = traj.last();
    (s1.y.ln() - s0.y.ln()) / (t1 - t0)
}

/// Trapezoidal time average of `Y` over the window.
pub fn time_average_infected(traj: &Trajectory, window: Window) -> f64 {
    let ys: Vec<f64> = traj.states.iter().map(|s| s.y).collect();
    let (t0, _) = traj.first();
    let (t1, _) = traj.last();
    if traj.len() == 1 || t1 <= t0 {
        return ys[0];
    }
    let start = match window {
        Window::Full => t0,
        Window::TailHalf => 0.5 * (t0 + t1),
    };
    trapezoid_from(&traj.times, &ys, start) / (t1 - start)
}

/// `∫_start^{t_end} f dt` for the piecewise-linear interpolant of `(ts, fs)`.
fn trapezoid_from(ts: &[f64], fs: &[f64], start: f64) -> f64 {
    let mut acc = 0.0;
    for k in 1..ts.len() {
        let (a, b) = (ts[k - 1], ts[k]);
        if b <= start {
            continue;
        }
        let (fa, fb) = (fs[k - 1], fs[k]);
        if a >= start {
            acc += 0.5 * (fa + fb) * (b - a);
        } else {
            let f_start = fa + (fb - fa) * (start - a) / (b - a);
            acc += 0.5 * (f_start + fb) * (b - start);
        }
    }
    acc
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (h - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Summary {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: quantile(&sorted, 0.5),
            q1: quantile(&sorted, 0.25),
            q3: quantile(&sorted, 0.75),
        }
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathStats {
    pub index: usize,
    pub seed: u64,
    pub lyapunov: f64,
    pub mean_infected: f64,
    pub tail_mean_infected: f64,
    pub y_final: f64,
    pub floor_hits: usize,
    pub simplex_drift: f64,
}

impl PathStats {
    pub fn from_trajectory(index: usize, seed: u64, traj: &Trajectory) -> Self {
        PathStats {
            index,
            seed,
            lyapunov: lyapunov_estimate(traj),
            mean_infected: time_average_infected(traj, Window::Full),
            tail_mean_infected: time_average_infected(traj, Window::TailHalf),
            y_final: traj.last().1.y,
            floor_hits: traj.floor_hits,
            simplex_drift: traj.simplex_drift,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub paths: usize,
    pub master_seed: u64,
    pub per_path: Vec<PathStats>,
    pub lyapunov: Summary,
    pub mean_infected: Summary,
    pub tail_mean_infected: Summary,
    pub y_extinct: f64,
    pub extinction_fraction: f64,
    pub floor_hits: usize,
}

impl EnsembleStats {
    pub fn from_paths(master_seed: u64, per_path: Vec<PathStats>, y_extinct: f64) -> Self {
        let col = |f: fn(&PathStats) -> f64| per_path.iter().map(f).collect::<Vec<f64>>();
        let n = per_path.len();
        EnsembleStats {
            paths: n,
            master_seed,
            lyapunov: Summary::of(&col(|p| p.lyapunov)),
            mean_infected: Summary::of(&col(|p| p.mean_infected)),
            tail_mean_infected: Summary::of(&col(|p| p.tail_mean_infected)),
            y_extinct,
            extinction_fraction: per_path.iter().filter(|p| p.y_final < y_extinct).count() as f64
                / n as f64,
            floor_hits: per_path.iter().map(|p| p.floor_hits).sum(),
            per_path,
        }
    }

    /// Header `path,seed,lyapunov,mean_infected,tail_mean_infected,Y_T`.
    pub fn write_paths_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "path,seed,lyapunov,mean_infected,tail_mean_infected,Y_T")?;
        for p in &self.per_path {
            writeln!(
                w,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                p.index, p.seed, p.lyapunov, p.mean_infected, p.tail_mean_infected, p.y_final
            )?;
        }
        Ok(())
    }

    /// Header `statistic,value`.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "statistic,value")?;
        writeln!(w, "paths,{}", self.paths)?;
        writeln!(w, "master_seed,{}", self.master_seed)?;
        for (name, s) in [
            ("lyapunov", &self.lyapunov),
            ("mean_infected", &self.mean_infected),
            ("tail_mean_infected", &self.tail_mean_infected),
        ] {
            writeln!(w, "{name}_mean,{:.16e}", s.mean)?;
            writeln!(w, "{name}_median,{:.16e}", s.median)?;
            writeln!(w, "{name}_q1,{:.16e}", s.q1)?;
            writeln!(w, "{name}_q3,{:.16e}", s.q3)?;
            writeln!(w, "{name}_iqr,{:.16e}", s.iqr())?;
        }
        writeln!(w, "y_extinct,{:.16e}", self.y_extinct)?;
        writeln!(w, "extinction_fraction,{:.16e}", self.extinction_fraction)?;
        writeln!(w, "floor_hits,{}", self.floor_hits)?;
        Ok(())
    }
}

/// Runs `paths` independent paths in parallel; path `i` is seeded with
/// `path_seed(cfg.seed, i)`. Results are collected in path order.
pub fn run_ensemble(
    model: &ModelSpec,
    s0: State,
    cfg: &SimConfig,
    paths: usize,
) -> Result<EnsembleStats, SimError> {
    if paths == 0 {
        return Err(SimError::Config("paths must be at least 1".into()));
    }
    let per_path = (0..paths)
        .into_par_iter()
        .map(|i| {
            let seed = path_seed(cfg.seed, i as u64);
            let traj = simulate(
                model,
                s0,
                &SimConfig {
                    seed,
                    ..cfg.clone()
                },
            )?;
            Ok(PathStats::from_trajectory(i, seed, &traj))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(EnsembleStats::from_paths(
        cfg.seed,
        per_path,
        y_extinct(model.domain()),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Consistent,
    Inconsistent,
    Inapplicable,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Consistent => "consistent",
            Verdict::Inconsistent => "inconsistent",
            Verdict::Inapplicable => "inapplicable",
        }
    }
}

/// Extinct reports need median Lyapunov `≤ −rate·(1−slack) + slack`;
/// persistent reports need median tail average `≥ bound·(1−slack)`.
pub fn verdict(stats: &EnsembleStats, report: &CriteriaReport, slack: f64) -> Verdict {
    let ok = match report.classification {
        Classification::Extinct => match report.extinction_rate_lb {
            Some(rate) => stats.lyapunov.median <= -rate * (1.0 - slack) + slack,
            None => return Verdict::Inapplicable,
        },
        Classification::Persistent => match report.mean_infected_lb {
            Some(lb) => stats.tail_mean_infected.median >= lb * (1.0 - slack),
            None => return Verdict::Inapplicable,
        },
        Classification::Indeterminate => return Verdict::Inapplicable,
    };
    if ok {
        Verdict::Consistent
    } else {
        Verdict::Inconsistent
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::{ex1_extinction, Ex1Inputs, SideCondition};
    use crate::expr::BoundsPair;
    use crate::levy::LevyMeasure;
    use crate::models::fixtures::*;
    use crate::models::{build_ex1, build_xc, Terms};

    fn traj(times: Vec<f64>, ys: Vec<f64>) -> Trajectory {
        Trajectory {
            states: ys.iter().map(|&y| State::new(1.0, y, 1.0)).collect(),
            times,
            floor_hits: 0,
            simplex_drift: 0.0,
        }
    }

    #[test]
    fn lyapunov_cases() {
        let flat = traj(vec![0.0, 1.0, 2.0], vec![0.3; 3]);
        assert_eq!(lyapunov_estimate(&flat), 0.0);
        let ts: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let decay = traj(ts.clone(), ts.iter().map(|t| (-0.2 * t).exp()).collect());
        assert!((lyapunov_estimate(&decay) + 0.2).abs() < 1e-14);
    }

    #[test]
    fn time_averages() {
        let flat = traj(vec![0.0, 0.5, 2.0], vec![0.7; 3]);
        assert!((time_average_infected(&flat, Window::Full) - 0.7).abs() < 1e-15);
        assert!((time_average_infected(&flat, Window::TailHalf) - 0.7).abs() < 1e-15);
        let ts: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let ramp = traj(ts.clone(), ts.clone());
        assert!((time_average_infected(&ramp, Window::Full) - 0.5).abs() < 1e-15);
        assert!((time_average_infected(&ramp, Window::TailHalf) - 0.75).abs() < 1e-15);
        // window start between grid points
        let coarse = traj(vec![0.0, 0.3, 1.0], vec![0.0, 0.3, 1.0]);
        assert!((time_average_infected(&coarse, Window::TailHalf) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn quantiles() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((s.median, s.q1, s.q3, s.mean), (3.0, 2.0, 4.0, 3.0));
        assert_eq!(s.iqr(), 2.0);
        let one = Summary::of(&[-0.25]);
        assert_eq!(
            (one.median, one.q1, one.q3, one.mean),
            (-0.25, -0.25, -0.25, -0.25)
        );
        assert_eq!(quantile(&[0.0, 1.0], 0.3), 0.3);
    }

    #[test]
    fn single_path_ensemble_matches_path() {
        let m = build_ex1(table1(), LevyMeasure::default()).unwrap();
        let s0 = State::new(0.8, 0.19, 0.01);
        let cfg = SimConfig::new(5.0, 17);
        let e = run_ensemble(&m, s0, &cfg, 1).unwrap();
        let seed = path_seed(17, 0);
        let tr = simulate(&m, s0, &SimConfig { seed, ..cfg }).unwrap();
        let p = PathStats::from_trajectory(0, seed, &tr);
        assert_eq!(e.per_path, vec![p.clone()]);
        assert_eq!(e.lyapunov.median, p.lyapunov);
        assert_eq!(e.tail_mean_infected.mean, p.tail_mean_infected);
    }

    #[test]
    fn ensembles_are_reproducible() {
        let m = build_xc(table3()).unwrap();
        let s0 = State::new(2.0, 0.8, 1.0);
        let cfg = SimConfig::new(5.0, 3);
        let a = run_ensemble(&m, s0, &cfg, 6).unwrap();
        let b = run_ensemble(&m, s0, &cfg, 6).unwrap();
        assert_eq!(a, b);
        let mut out_a = Vec::new();
        let mut out_b = Vec::new();
        a.write_paths_csv(&mut out_a).unwrap();
        b.write_paths_csv(&mut out_b).unwrap();
        assert_eq!(out_a, out_b);
        assert!(run_ensemble(&m, s0, &cfg, 0).is_err());
    }

    #[test]
    fn noise_free_ensemble_is_one_path() {
        let m = build_ex1(table1(), LevyMeasure::default())
            .unwrap()
            .with_terms(Terms::DETERMINISTIC);
        let e = run_ensemble(&m, State::new(0.8, 0.19, 0.01), &SimConfig::new(3.0, 1), 4).unwrap();
        assert!(e
            .per_path
            .iter()
            .all(|p| p.lyapunov == e.per_path[0].lyapunov && p.y_final == e.per_path[0].y_final));
        assert_eq!(e.lyapunov.iqr(), 0.0);
    }

    fn stats_with(lyap: f64, tail: f64) -> EnsembleStats {
        EnsembleStats::from_paths(
            0,
            vec![PathStats {
                index: 0,
                seed: 0,
                lyapunov: lyap,
                mean_infected: tail,
                tail_mean_infected: tail,
                y_final: 0.1,
                floor_hits: 0,
                simplex_drift: 0.0,
            }],
            1e-6,
        )
    }

    #[test]
    fn verdict_rules() {
        let extinct = ex1_extinction(&Ex1Inputs {
            beta: BoundsPair::constant(0.4),
            gamma: BoundsPair::constant(0.76),
            g1: 0.1,
        });
        assert_eq!(
            verdict(&stats_with(-0.2, 0.0), &extinct, 0.5),
            Verdict::Consistent
        );
        assert_eq!(
            verdict(&stats_with(0.5, 0.0), &extinct, 0.5),
            Verdict::Inconsistent
        );

        let mut persistent = extinct.clone();
        persistent.classification = Classification::Persistent;
        persistent.extinction_rate_lb = None;
        persistent.mean_infected_lb = Some(0.14);
        assert_eq!(
            verdict(&stats_with(0.0, 0.05), &persistent, 0.3),
            Verdict::Inconsistent
        );
        assert_eq!(
            verdict(&stats_with(0.0, 0.1), &persistent, 0.3),
            Verdict::Consistent
        );

        let mut unknown = extinct;
        unknown.classification = Classification::Indeterminate;
        unknown.side_conditions = vec![SideCondition {
            name: "x".into(),
            satisfied: false,
            margin: -1.0,
        }];
        assert_eq!(
            verdict(&stats_with(-9.0, 0.0), &unknown, 0.5),
            Verdict::Inapplicable
        );
    }

    #[test]
    fn summary_csv_has_all_statistics() {
        let mut out = Vec::new();
        stats_with(-0.3, 0.2).write_summary_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("statistic,value\n"));
        assert!(text.contains("lyapunov_median,"));
        assert!(text.contains("tail_mean_infected_iqr,"));
        assert!(text.contains("extinction_fraction,0.0000000000000000e0"));
    }
}
