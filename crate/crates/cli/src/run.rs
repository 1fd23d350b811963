//! Builds the configured problem, runs the closed loop and writes the run record.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use picontrol::lq::{LinearProblem, LqProblem};
use picontrol::tcl::{self, TclFleetConfig};
use picontrol::{
    closed_loop_simulate, solve_hjb_1d, AugmentedSystem, ClosedLoopRun, FeedbackPolicy, Grid1D,
    GridPolicy, HjbOptions, HjbProblem1D, Method, PathIntegralPolicy, TimeGrid, Trajectory,
};

use crate::config::{ConfigError, Custom, MethodKind, ProblemKind, RunConfig};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure after {steps} steps: {}: {error}", .error.kind())]
    Numerical { steps: usize, error: picontrol::Error },
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical { .. } => 3,
            RunError::Io { .. } => 1,
        }
    }
}

/// A configured problem ready to simulate.
pub struct Experiment {
    pub aug: AugmentedSystem,
    pub grid: TimeGrid,
    pub x0: DVector<f64>,
    hjb: Option<HjbProblem1D>,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(ConfigError::Invalid(format!("custom.{name}: need a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn linear_problem(c: &Custom, horizon: f64) -> Result<LinearProblem, ConfigError> {
    Ok(LinearProblem {
        a: matrix("a", &c.a)?,
        b: DVector::from_column_slice(&c.b),
        k: matrix("k", &c.k)?,
        sigma: matrix("sigma", &c.sigma)?,
        q: matrix("q", &c.q)?,
        c: DVector::from_column_slice(&c.c),
        r: matrix("r", &c.r)?,
        s_t: matrix("s_t", &c.s_t)?,
        horizon,
    })
}

impl Experiment {
    pub fn build(config: &RunConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let g = &config.grid;
        let grid = TimeGrid::new(g.t_start, g.t_end, g.time_nodes)?;
        let want_grid = config.method == MethodKind::Grid;
        let (aug, x0, hjb) = match config.problem {
            ProblemKind::TclSingle | ProblemKind::TclSix => {
                let f = config
                    .fleet
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("fleet: section missing".into()))?;
                let fleet = TclFleetConfig {
                    alpha: f.alpha.clone(),
                    kappa: f.kappa.clone(),
                    count: f.count.clone(),
                    sigma: f.sigma.clone(),
                    comfort_low: f.comfort_low,
                    comfort_high: f.comfort_high,
                    eta1: f.eta1,
                    eta2: f.eta2,
                    r_weight: DMatrix::identity(f.alpha.len(), f.alpha.len()) * f.r,
                    theta0: f.theta0.clone(),
                };
                let forecast = match &config.forecast {
                    Some(src) => tcl::load_forecast(&src.path)?,
                    None => tcl::default_forecast(),
                };
                let aug = tcl::build_tcl_system(&fleet, &forecast, g.t_end)?;
                let hjb = if want_grid { Some(tcl::hjb_problem(&fleet, &forecast)?) } else { None };
                (aug, fleet.initial_state(), hjb)
            }
            ProblemKind::Lq => {
                let l = config
                    .lq
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("lq: section missing".into()))?;
                let p = LqProblem {
                    a: l.a,
                    k: l.k,
                    sigma: l.sigma,
                    q: l.q,
                    r: l.r,
                    s_t: l.s_t,
                    horizon: g.t_end,
                };
                let hjb = if want_grid { Some(p.hjb_problem()?) } else { None };
                (p.system()?, DVector::from_element(1, l.x0), hjb)
            }
            ProblemKind::Custom => {
                let c = config
                    .custom
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("custom: section missing".into()))?;
                let p = linear_problem(c, g.t_end)?;
                let hjb = if want_grid { Some(p.hjb_problem()?) } else { None };
                (p.system()?, DVector::from_column_slice(&c.x0), hjb)
            }
        };
        if x0.len() != aug.state_dim() {
            return Err(ConfigError::Invalid(format!(
                "initial state has {} entries, expected {}",
                x0.len(),
                aug.state_dim()
            )));
        }
        Ok(Self { aug, grid, x0, hjb })
    }

    /// Solves the grid oracle if needed and runs the closed loop.
    pub fn simulate(&self, config: &RunConfig) -> ClosedLoopRun {
        let s = &config.sampling;
        let policy: Box<dyn FeedbackPolicy> = match (config.method, &self.hjb, &config.grid_solver) {
            (MethodKind::Grid, Some(problem), Some(gs)) => {
                let g = &config.grid;
                let solved = Grid1D::new(gs.x_min, gs.x_max, gs.nodes, g.time_nodes, g.t_start, g.t_end)
                    .and_then(|grid| solve_hjb_1d(problem, grid, &HjbOptions::default()));
                match solved {
                    Ok(solution) => Box::new(GridPolicy::new(problem.clone(), solution)),
                    Err(error) => {
                        return ClosedLoopRun {
                            trajectory: Trajectory::default(),
                            error: Some(error),
                        }
                    }
                }
            }
            (method, _, _) => {
                let method = if method == MethodKind::Standard { Method::Standard } else { Method::Implicit };
                Box::new(PathIntegralPolicy::new(method, s.samples, s.seed).with_step_scale(config.fd.step_scale))
            }
        };
        closed_loop_simulate(&self.aug, &self.grid, &self.x0, policy.as_ref(), s.realization_seed)
    }
}

/// Shortest decimal that round-trips.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, RunError> {
    let file = fs::File::create(path).map_err(|source| RunError::Io { path: path.to_path_buf(), source })?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_error(path: &Path, e: csv::Error) -> RunError {
    RunError::Io {
        path: path.to_path_buf(),
        source: io::Error::other(e),
    }
}

pub fn write_trajectory(path: &Path, traj: &Trajectory, n: usize, m: usize) -> Result<(), RunError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|i| format!("u_{i}")));
    header.extend(["y".to_string(), "stage_cost".to_string()]);
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (k, x) in traj.states.iter().enumerate() {
        let mut row = vec![num(traj.times[k])];
        row.extend(x.iter().map(|v| num(*v)));
        // The last state has no decision: its control and stage cost are left blank.
        match traj.controls.get(k) {
            Some(u) => row.extend(u.iter().map(|v| num(*v))),
            None => row.extend((0..m).map(|_| String::new())),
        }
        row.push(num(traj.y[k]));
        row.push(traj.stage_costs.get(k).map_or_else(String::new, |c| num(*c)));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|source| RunError::Io { path: path.to_path_buf(), source })
}

pub fn write_diagnostics(path: &Path, traj: &Trajectory) -> Result<(), RunError> {
    let mut w = csv_writer(path)?;
    w.write_record(["step", "t", "log_psi", "stderr", "iterations", "fallbacks"])
        .map_err(|e| csv_error(path, e))?;
    for (j, d) in traj.diagnostics.iter().enumerate() {
        w.write_record([
            j.to_string(),
            num(traj.times[j]),
            num(d.log_psi),
            num(d.stderr),
            d.iterations.to_string(),
            d.fallbacks.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|source| RunError::Io { path: path.to_path_buf(), source })
}

/// The resolved config plus a `[versions]` table; loading it reproduces the run.
pub fn manifest(config: &RunConfig) -> String {
    let mut table = toml::Table::try_from(config).expect("config serialises");
    let mut versions = toml::Table::new();
    versions.insert("picontrol".into(), picontrol::VERSION.into());
    versions.insert("picontrol-cli".into(), env!("CARGO_PKG_VERSION").into());
    table.insert("versions".into(), toml::Value::Table(versions));
    toml::to_string(&table).expect("manifest serialises")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub output: PathBuf,
}

/// Runs one experiment and writes its record. Outputs are kept when the run fails
/// part-way.
pub fn run_experiment(config: &RunConfig) -> Result<RunSummary, RunError> {
    let experiment = Experiment::build(config)?;
    let dir = &config.output.dir;
    fs::create_dir_all(dir).map_err(|source| RunError::Io { path: dir.clone(), source })?;
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest(config)).map_err(|source| RunError::Io { path: manifest_path, source })?;

    let run = experiment.simulate(config);
    let traj = &run.trajectory;
    let (n, m) = (experiment.aug.state_dim(), experiment.aug.control_dim());
    write_trajectory(&dir.join(TRAJECTORY_FILE), traj, n, m)?;
    write_diagnostics(&dir.join(DIAGNOSTICS_FILE), traj)?;
    match run.error {
        Some(error) => Err(RunError::Numerical { steps: traj.controls.len(), error }),
        None => Ok(RunSummary {
            steps: traj.controls.len(),
            output: dir.clone(),
        }),
    }
}
