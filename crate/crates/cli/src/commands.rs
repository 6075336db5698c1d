use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;
use ussir_core::criteria::{
    closed_form_report, generic_report, time_grid, Axis, CriteriaReport, StateGrid, CSV_HEADER,
};
use ussir_core::expr::EvalError;
use ussir_core::integrator::{rng_from_seed, simulate, SimError, Trajectory};
use ussir_core::models::{
    check_conservation, check_positivity_ratios, Domain, ModelError, ModelSpec, Terms,
};
use ussir_core::montecarlo::{run_ensemble, verdict, Verdict};

use crate::scenario::{ScenarioConfig, ScenarioError};

pub const DEFAULT_OUTPUT_DIR: &str = "out";
/// Random points per check in `validate`.
pub const VALIDATION_SAMPLES: usize = 1000;

const SIMPLEX_GRID_POINTS: usize = 200;
const OCTANT_GRID: Axis = Axis {
    lo: 1e-3,
    hi: 10.0,
    n: 40,
};
const TIME_GRID_POINTS: usize = 201;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Outcome of a successful command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Ensemble disagrees with the criteria.
    Inconsistent,
    /// A validation check failed.
    Failed,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: Status,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Command-line values that replace the scenario's.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub paths: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) -> Result<(), ScenarioError> {
        if let Some(v) = self.seed {
            cfg.sim.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.sim.output_dir = Some(v.clone());
        }
        if let Some(v) = self.dt {
            cfg.sim.dt = v;
        }
        if let Some(v) = self.horizon {
            cfg.sim.horizon = v;
        }
        if let Some(v) = self.paths {
            cfg.sim.paths = v;
        }
        cfg.validate()
    }
}

fn output_dir(cfg: &ScenarioConfig) -> Result<PathBuf, CommandError> {
    let dir = cfg
        .sim
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    fs::create_dir_all(&dir).map_err(|source| CommandError::Io {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

fn write_file(
    dir: &Path,
    name: &str,
    files: &mut Vec<PathBuf>,
    body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Result<(), CommandError> {
    let path = dir.join(name);
    let io_err = |source| CommandError::Io {
        path: path.clone(),
        source,
    };
    let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
    body(&mut w).map_err(io_err)?;
    w.flush().map_err(io_err)?;
    files.push(path);
    Ok(())
}

fn write_panel<W: Write>(
    w: &mut W,
    index: usize,
    stochastic: &Trajectory,
    deterministic: &Trajectory,
) -> io::Result<()> {
    const NAMES: [&str; 3] = ["X", "Y", "Z"];
    writeln!(w, "t,{0}_stochastic,{0}_deterministic", NAMES[index])?;
    for ((t, s), d) in stochastic
        .times
        .iter()
        .zip(&stochastic.states)
        .zip(&deterministic.states)
    {
        writeln!(
            w,
            "{t:.16e},{:.16e},{:.16e}",
            s.to_array()[index],
            d.to_array()[index]
        )?;
    }
    Ok(())
}

/// Noise-only companion run with the drift removed.
const NOISE_ONLY: Terms = Terms {
    drift: false,
    diffusion: true,
    jumps: true,
};

/// Writes `trajectory.csv`, `deterministic.csv`, `noise.csv`,
/// `panel_X.csv`, `panel_Y.csv`, `panel_Z.csv` and `simulation.txt`.
pub fn cmd_simulate(cfg: &ScenarioConfig) -> Result<Outcome, CommandError> {
    let model = cfg.build_model()?;
    let sim = cfg.sim.sim_config();
    let traj = simulate(&model, cfg.initial, &sim)?;
    let det = simulate(&model.with_terms(Terms::DETERMINISTIC), cfg.initial, &sim)?;
    let noise = simulate(&model.with_terms(NOISE_ONLY), cfg.initial, &sim)?;

    let dir = output_dir(cfg)?;
    let mut files = Vec::new();
    write_file(&dir, "trajectory.csv", &mut files, |w| traj.write_csv(w))?;
    write_file(&dir, "deterministic.csv", &mut files, |w| det.write_csv(w))?;
    write_file(&dir, "noise.csv", &mut files, |w| noise.write_csv(w))?;
    for (i, name) in ["panel_X.csv", "panel_Y.csv", "panel_Z.csv"]
        .into_iter()
        .enumerate()
    {
        write_file(&dir, name, &mut files, |w| write_panel(w, i, &traj, &det))?;
    }

    let (t_end, s_end) = traj.last();
    let (_, d_end) = det.last();
    let mut summary = String::new();
    let _ = writeln!(summary, "model: {}", model.name());
    let _ = writeln!(summary, "seed: {}", sim.seed);
    let _ = writeln!(summary, "dt: {}", sim.dt);
    let _ = writeln!(summary, "horizon: {}", sim.horizon);
    let _ = writeln!(summary, "steps: {}", sim.steps());
    let _ = writeln!(summary, "recorded: {}", traj.len());
    let _ = writeln!(summary, "t_final: {t_end}");
    let _ = writeln!(summary, "state_final: {} {} {}", s_end.x, s_end.y, s_end.z);
    let _ = writeln!(
        summary,
        "deterministic_final: {} {} {}",
        d_end.x, d_end.y, d_end.z
    );
    let _ = writeln!(summary, "floor_hits: {}", traj.floor_hits);
    let _ = writeln!(summary, "simplex_drift: {:e}", traj.simplex_drift);
    write_file(&dir, "simulation.txt", &mut files, |w| {
        w.write_all(summary.as_bytes())
    })?;
    Ok(Outcome {
        status: Status::Ok,
        files,
        summary,
    })
}

/// Closed-form report for built-in models, grid estimate for custom ones.
pub fn criteria_report(
    cfg: &ScenarioConfig,
    model: &ModelSpec,
) -> Result<CriteriaReport, CommandError> {
    if let Some(r) = closed_form_report(model)? {
        return Ok(r);
    }
    let grid = match model.domain() {
        Domain::Simplex => StateGrid::simplex(SIMPLEX_GRID_POINTS),
        Domain::Octant => StateGrid::Box {
            x: OCTANT_GRID,
            y: OCTANT_GRID,
            z: OCTANT_GRID,
        },
    };
    let t_grid = time_grid(0.0, cfg.sim.horizon, TIME_GRID_POINTS);
    Ok(generic_report(model, &t_grid, &grid)?)
}

/// Writes `criteria.txt` and `criteria.csv`.
pub fn cmd_criteria(cfg: &ScenarioConfig) -> Result<Outcome, CommandError> {
    let model = cfg.build_model()?;
    let report = criteria_report(cfg, &model)?;
    let dir = output_dir(cfg)?;
    let mut files = Vec::new();
    let text = report.to_text();
    write_file(&dir, "criteria.txt", &mut files, |w| {
        w.write_all(text.as_bytes())
    })?;
    write_file(&dir, "criteria.csv", &mut files, |w| {
        writeln!(w, "{CSV_HEADER}")?;
        writeln!(w, "{}", report.csv_row())
    })?;
    Ok(Outcome {
        status: Status::Ok,
        files,
        summary: text,
    })
}

/// Writes `ensemble_paths.csv`, `ensemble_summary.csv` and `verdict.txt`.
/// Inconsistent verdicts give [`Status::Inconsistent`].
pub fn cmd_ensemble(cfg: &ScenarioConfig) -> Result<Outcome, CommandError> {
    let model = cfg.build_model()?;
    let report = criteria_report(cfg, &model)?;
    let stats = run_ensemble(&model, cfg.initial, &cfg.sim.sim_config(), cfg.sim.paths)?;
    let v = verdict(&stats, &report, cfg.sim.slack);

    let dir = output_dir(cfg)?;
    let mut files = Vec::new();
    write_file(&dir, "ensemble_paths.csv", &mut files, |w| {
        stats.write_paths_csv(w)
    })?;
    write_file(&dir, "ensemble_summary.csv", &mut files, |w| {
        stats.write_summary_csv(w)
    })?;
    let mut summary = String::new();
    let _ = writeln!(summary, "model: {}", model.name());
    let _ = writeln!(
        summary,
        "classification: {}",
        report.classification.as_str()
    );
    let _ = writeln!(summary, "paths: {}", stats.paths);
    let _ = writeln!(summary, "lyapunov_median: {:e}", stats.lyapunov.median);
    let _ = writeln!(
        summary,
        "tail_mean_infected_median: {:e}",
        stats.tail_mean_infected.median
    );
    let _ = writeln!(
        summary,
        "extinction_fraction: {}",
        stats.extinction_fraction
    );
    let _ = writeln!(summary, "slack: {}", cfg.sim.slack);
    let _ = writeln!(summary, "verdict: {}", v.as_str());
    write_file(&dir, "verdict.txt", &mut files, |w| {
        w.write_all(summary.as_bytes())
    })?;
    Ok(Outcome {
        status: if v == Verdict::Inconsistent {
            Status::Inconsistent
        } else {
            Status::Ok
        },
        files,
        summary,
    })
}

/// Samples conservation (simplex models only) and positivity ratios;
/// writes `validation.txt`.
pub fn cmd_validate(cfg: &ScenarioConfig) -> Result<Outcome, CommandError> {
    let model = cfg.build_model()?;
    let mut rng = rng_from_seed(cfg.sim.seed);
    let mut summary = String::new();
    let mut ok = true;
    let _ = writeln!(summary, "model: {}", model.name());
    let _ = writeln!(summary, "samples: {VALIDATION_SAMPLES}");
    match model.domain() {
        Domain::Simplex => {
            let c = check_conservation(&model, VALIDATION_SAMPLES, &mut rng)?;
            ok &= c.passed();
            let _ = writeln!(summary, "conservation_max_deviation: {:e}", c.max_deviation);
            let _ = writeln!(summary, "conservation_worst: {}", c.worst);
            let _ = writeln!(
                summary,
                "conservation: {}",
                if c.passed() { "pass" } else { "fail" }
            );
        }
        Domain::Octant => {
            let _ = writeln!(summary, "conservation: not applicable");
        }
    }
    let p = check_positivity_ratios(&model, VALIDATION_SAMPLES, &mut rng)?;
    ok &= p.passed();
    let _ = writeln!(summary, "positivity_min_ratio: {}", p.min_ratio);
    let _ = writeln!(summary, "positivity_violations: {}", p.violations);
    if !p.passed() {
        let _ = writeln!(summary, "positivity_worst: {}", p.worst);
    }
    let _ = writeln!(
        summary,
        "positivity: {}",
        if p.passed() { "pass" } else { "fail" }
    );
    let _ = writeln!(summary, "result: {}", if ok { "pass" } else { "fail" });

    let dir = output_dir(cfg)?;
    let mut files = Vec::new();
    write_file(&dir, "validation.txt", &mut files, |w| {
        w.write_all(summary.as_bytes())
    })?;
    Ok(Outcome {
        status: if ok { Status::Ok } else { Status::Failed },
        files,
        summary,
    })
}
