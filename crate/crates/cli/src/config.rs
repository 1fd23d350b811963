//! Run configuration. The file is TOML; its tables give the dotted key namespaces
//! (`grid.time_nodes`, `sampling.seed`, ...). Anything left out is filled from
//! per-problem defaults, and the resolved form is what a manifest records.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{}: {}", .0.kind(), .0)]
    Model(#[from] picontrol::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    TclSingle,
    TclSix,
    Lq,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Standard,
    Implicit,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeWindow {
    /// Number of time steps `M`.
    pub time_nodes: usize,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    pub samples: usize,
    /// Seeds the controller's reference samples.
    pub seed: u64,
    /// Seeds the simulated world's noise.
    pub realization_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fd {
    pub step_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSolver {
    pub nodes: usize,
    pub x_min: f64,
    pub x_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Forecast {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fleet {
    pub alpha: Vec<f64>,
    pub kappa: Vec<f64>,
    pub count: Vec<f64>,
    pub sigma: Vec<f64>,
    pub comfort_low: f64,
    pub comfort_high: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// `R = r I`.
    pub r: f64,
    pub theta0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lq {
    pub a: f64,
    pub k: f64,
    pub sigma: f64,
    pub q: f64,
    pub r: f64,
    pub s_t: f64,
    pub x0: f64,
}

/// A linear problem `dx = (A x + b + K u) dt + sigma dW` with `V = 1/2 x'Q x`,
/// constant path row `c` and `Phi = 1/2 x'S x + y`. Matrices are lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Custom {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub k: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub r: Vec<Vec<f64>>,
    pub s_t: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
}

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<MethodKind>,
    pub samples: Option<usize>,
    pub output: Option<PathBuf>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub method: MethodKind,
    pub grid: TimeWindow,
    pub sampling: Sampling,
    pub fd: Fd,
    pub output: Output,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_solver: Option<GridSolver>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forecast: Option<Forecast>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fleet: Option<Fleet>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lq: Option<Lq>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub custom: Option<Custom>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    time_nodes: Option<usize>,
    t_start: Option<f64>,
    t_end: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplingFile {
    samples: Option<usize>,
    seed: Option<u64>,
    realization_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FdFile {
    step_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputFile {
    dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSolverFile {
    nodes: Option<usize>,
    x_min: Option<f64>,
    x_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FleetFile {
    alpha: Option<Vec<f64>>,
    kappa: Option<Vec<f64>>,
    count: Option<Vec<f64>>,
    sigma: Option<Vec<f64>>,
    comfort_low: Option<f64>,
    comfort_high: Option<f64>,
    eta1: Option<f64>,
    eta2: Option<f64>,
    r: Option<f64>,
    theta0: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LqFile {
    a: Option<f64>,
    k: Option<f64>,
    sigma: Option<f64>,
    q: Option<f64>,
    r: Option<f64>,
    s_t: Option<f64>,
    x0: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomFile {
    a: Vec<Vec<f64>>,
    b: Option<Vec<f64>>,
    k: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
    q: Option<Vec<Vec<f64>>>,
    c: Option<Vec<f64>>,
    r: Vec<Vec<f64>>,
    s_t: Option<Vec<Vec<f64>>>,
    x0: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    problem: ProblemKind,
    method: Option<MethodKind>,
    #[serde(default)]
    grid: GridFile,
    #[serde(default)]
    sampling: SamplingFile,
    #[serde(default)]
    fd: FdFile,
    #[serde(default)]
    output: OutputFile,
    #[serde(default)]
    grid_solver: GridSolverFile,
    forecast: Option<Forecast>,
    #[serde(default)]
    fleet: FleetFile,
    #[serde(default)]
    lq: LqFile,
    custom: Option<CustomFile>,
    /// Written into manifests for information; ignored on input.
    #[serde(default)]
    #[allow(dead_code)]
    versions: BTreeMap<String, String>,
}

impl RunConfig {
    /// Reads and resolves a config file. A relative forecast path is taken relative
    /// to the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::load_with(path, &Overrides::default())
    }

    pub fn load_with(path: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_with(&text, base, overrides).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            e => e,
        })
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        Self::parse_with(text, base, &Overrides::default())
    }

    pub fn parse_with(text: &str, base: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<config>"),
            message: e.message().to_string(),
        })?;
        file.method = overrides.method.or(file.method);
        file.sampling.seed = overrides.seed.or(file.sampling.seed);
        file.sampling.samples = overrides.samples.or(file.sampling.samples);
        file.output.dir = overrides.output.clone().or(file.output.dir);
        let mut config = resolve(file)?;
        if let Some(f) = &mut config.forecast {
            if f.path.is_relative() {
                f.path = base.join(&f.path);
            }
            if !f.path.is_file() {
                return Err(ConfigError::Invalid(format!(
                    "forecast.path: {} does not exist",
                    f.path.display()
                )));
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Checks ranges and cross-field rules; file existence is checked at load.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let g = &self.grid;
        if g.time_nodes == 0 {
            return bad("grid.time_nodes: must be positive".into());
        }
        if !(g.t_start.is_finite() && g.t_end.is_finite() && g.t_start < g.t_end) {
            return bad(format!("grid: need t_start < t_end, got [{}, {}]", g.t_start, g.t_end));
        }
        if self.sampling.samples == 0 {
            return bad("sampling.samples: must be positive".into());
        }
        if !(self.fd.step_scale > 0.0 && self.fd.step_scale.is_finite()) {
            return bad(format!("fd.step_scale: must be positive, got {}", self.fd.step_scale));
        }
        if self.method == MethodKind::Grid {
            let dim = self.state_dim();
            if dim != 1 {
                return Err(picontrol::Error::DimensionUnsupported(dim).into());
            }
            match &self.grid_solver {
                Some(s) if s.nodes < 3 => return bad("grid_solver.nodes: need at least 3".into()),
                Some(s) if !(s.x_min < s.x_max) => {
                    return bad(format!("grid_solver: need x_min < x_max, got [{}, {}]", s.x_min, s.x_max))
                }
                Some(_) => {}
                None => return bad("grid_solver: required for method = grid".into()),
            }
        }
        if matches!(self.problem, ProblemKind::Lq | ProblemKind::Custom) && g.t_start < 0.0 {
            return bad("grid.t_start: must be non-negative".into());
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        match self.problem {
            ProblemKind::TclSingle | ProblemKind::TclSix => {
                self.fleet.as_ref().map_or(0, |f| f.alpha.len())
            }
            ProblemKind::Lq => 1,
            ProblemKind::Custom => self.custom.as_ref().map_or(0, |c| c.a.len()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

fn fleet_preset(problem: ProblemKind) -> Fleet {
    let preset = if problem == ProblemKind::TclSix {
        picontrol::tcl::TclFleetConfig::six_types()
    } else {
        picontrol::tcl::TclFleetConfig::single_type()
    };
    Fleet {
        r: preset.r_weight[(0, 0)],
        alpha: preset.alpha,
        kappa: preset.kappa,
        count: preset.count,
        sigma: preset.sigma,
        comfort_low: preset.comfort_low,
        comfort_high: preset.comfort_high,
        eta1: preset.eta1,
        eta2: preset.eta2,
        theta0: preset.theta0,
    }
}

fn resolve(file: ConfigFile) -> Result<RunConfig, ConfigError> {
    let problem = file.problem;
    let tcl = matches!(problem, ProblemKind::TclSingle | ProblemKind::TclSix);
    let (nodes, t_start, t_end, samples, step, domain) = match problem {
        ProblemKind::TclSingle => (300, 11.0, 16.0, 5, 0.002, (18.0, 24.0)),
        ProblemKind::TclSix => (100, 11.0, 16.0, 15625, 0.002, (18.0, 24.0)),
        ProblemKind::Lq | ProblemKind::Custom => (50, 0.0, 1.0, 1000, picontrol::control::DEFAULT_STEP_SCALE, (-4.0, 4.0)),
    };
    let method = file.method.unwrap_or(MethodKind::Implicit);
    let grid_solver = (method == MethodKind::Grid).then(|| GridSolver {
        nodes: file.grid_solver.nodes.unwrap_or(401),
        x_min: file.grid_solver.x_min.unwrap_or(domain.0),
        x_max: file.grid_solver.x_max.unwrap_or(domain.1),
    });
    let fleet = tcl.then(|| {
        let p = fleet_preset(problem);
        let f = file.fleet;
        Fleet {
            alpha: f.alpha.unwrap_or(p.alpha),
            kappa: f.kappa.unwrap_or(p.kappa),
            count: f.count.unwrap_or(p.count),
            sigma: f.sigma.unwrap_or(p.sigma),
            comfort_low: f.comfort_low.unwrap_or(p.comfort_low),
            comfort_high: f.comfort_high.unwrap_or(p.comfort_high),
            eta1: f.eta1.unwrap_or(p.eta1),
            eta2: f.eta2.unwrap_or(p.eta2),
            r: f.r.unwrap_or(p.r),
            theta0: f.theta0.unwrap_or(p.theta0),
        }
    });
    let lq = (problem == ProblemKind::Lq).then(|| {
        let d = picontrol::lq::LqProblem::default();
        let f = file.lq;
        Lq {
            a: f.a.unwrap_or(d.a),
            k: f.k.unwrap_or(d.k),
            sigma: f.sigma.unwrap_or(d.sigma),
            q: f.q.unwrap_or(d.q),
            r: f.r.unwrap_or(d.r),
            s_t: f.s_t.unwrap_or(d.s_t),
            x0: f.x0.unwrap_or(1.0),
        }
    });
    let custom = match (problem, file.custom) {
        (ProblemKind::Custom, Some(c)) => {
            let n = c.a.len();
            Some(Custom {
                b: c.b.unwrap_or_else(|| vec![0.0; n]),
                q: c.q.unwrap_or_else(|| vec![vec![0.0; n]; n]),
                c: c.c.unwrap_or_else(|| vec![0.0; n]),
                s_t: c.s_t.unwrap_or_else(|| vec![vec![0.0; n]; n]),
                a: c.a,
                k: c.k,
                sigma: c.sigma,
                r: c.r,
                x0: c.x0,
            })
        }
        (ProblemKind::Custom, None) => {
            return Err(ConfigError::Invalid("custom: section required for problem = custom".into()))
        }
        _ => None,
    };
    Ok(RunConfig {
        problem,
        method,
        grid: TimeWindow {
            time_nodes: file.grid.time_nodes.unwrap_or(nodes),
            t_start: file.grid.t_start.unwrap_or(t_start),
            t_end: file.grid.t_end.unwrap_or(t_end),
        },
        sampling: Sampling {
            samples: file.sampling.samples.unwrap_or(samples),
            seed: file.sampling.seed.unwrap_or(1),
            realization_seed: file.sampling.realization_seed.unwrap_or(2),
        },
        fd: Fd {
            step_scale: file.fd.step_scale.unwrap_or(step),
        },
        output: Output {
            dir: file.output.dir.unwrap_or_else(|| PathBuf::from("output")),
        },
        grid_solver,
        forecast: if tcl { file.forecast } else { None },
        fleet,
        lq,
        custom,
    })
}
