//! Euler-Maruyama simulation of the uncontrolled augmented dynamics and the plain Monte
//! Carlo estimator of `psi = E[exp(-Phi(x_T, y_T) / lambda)]`.

use nalgebra::{DMatrix, DVector};

use crate::augment::AugmentedSystem;
use crate::error::{check_len, Error, Result};
use crate::model::GeneralizedCost;
use crate::rng;

/// Uniform grid `t_i = t0 + i dt`, `i = 0..=steps`, with the current index `first`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    steps: usize,
    first: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("time grid needs at least one step".into()));
        }
        if !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "time grid needs t_end > t0, got [{t0}, {t_end}]"
            )));
        }
        Ok(Self {
            t0,
            t_end,
            steps,
            first: 0,
        })
    }

    /// `[0, horizon]` split into `steps` intervals.
    pub fn from_horizon(horizon: f64, steps: usize) -> Result<Self> {
        Self::new(0.0, horizon, steps)
    }

    pub fn with_start_index(self, first: usize) -> Result<Self> {
        if first >= self.steps {
            return Err(Error::InvalidArgument(format!(
                "start index {first} must be below {}",
                self.steps
            )));
        }
        Ok(Self { first, ..self })
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn start_index(&self) -> usize {
        self.first
    }

    /// Number of steps from the current index to the end, `M - j`.
    pub fn remaining(&self) -> usize {
        self.steps - self.first
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.t_end
        } else {
            self.t0 + i as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }

    pub fn start_time(&self) -> f64 {
        self.t0
    }

    pub fn end_time(&self) -> f64 {
        self.t_end
    }
}

/// Augmented state `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugState {
    pub x: DVector<f64>,
    pub y: f64,
}

impl AugState {
    pub fn new(x: DVector<f64>, y: f64) -> Self {
        Self { x, y }
    }
}

/// Cost accumulated over one step ending at `t_i`: `V(t_i, x_i) dt + c(t_i) (x_i - x_{i-1})`.
pub(crate) fn y_increment(
    cost: &GeneralizedCost,
    t_i: f64,
    x_prev: &[f64],
    x_i: &[f64],
    dt: f64,
) -> Result<f64> {
    let xi = DVector::from_column_slice(x_i);
    let c = cost.c(t_i)?;
    let dx: f64 = c
        .iter()
        .zip(x_i.iter().zip(x_prev))
        .map(|(c, (a, b))| c * (a - b))
        .sum();
    Ok(cost.v(t_i, &xi)? * dt + dx)
}

/// `y_j + sum V(t_i, x_i) dt + sum c(t_i) (x_i - x_{i-1})` over the grid from its
/// current index to the end.
pub fn update_y(
    y_j: f64,
    x_path: &[DVector<f64>],
    cost: &GeneralizedCost,
    grid: &TimeGrid,
) -> Result<f64> {
    check_len("path points", grid.remaining() + 1, x_path.len())?;
    let dt = grid.dt();
    let mut y = y_j;
    for (k, w) in x_path.windows(2).enumerate() {
        let t = grid.time(grid.start_index() + k + 1);
        y += y_increment(cost, t, w[0].as_slice(), w[1].as_slice(), dt)?;
    }
    Ok(y)
}

/// Q discretised trajectories from the grid's current index to its end.
#[derive(Debug, Clone)]
pub struct PathBundle {
    grid: TimeGrid,
    n: usize,
    samples: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    increments: Vec<f64>,
}

impl PathBundle {
    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Points per path, `M - j + 1`.
    pub fn points(&self) -> usize {
        self.grid.remaining() + 1
    }

    pub fn state(&self, q: usize, k: usize) -> &[f64] {
        let off = (q * self.points() + k) * self.n;
        &self.x[off..off + self.n]
    }

    pub fn y(&self, q: usize, k: usize) -> f64 {
        self.y[q * self.points() + k]
    }

    pub fn x_path(&self, q: usize) -> Vec<DVector<f64>> {
        (0..self.points())
            .map(|k| DVector::from_column_slice(self.state(q, k)))
            .collect()
    }

    /// Standard normal draws of step `k` (`1 <= k <= M - j`) for sample `q`.
    pub fn increment(&self, q: usize, k: usize) -> &[f64] {
        let off = (q * self.grid.remaining() + (k - 1)) * self.n;
        &self.increments[off..off + self.n]
    }

    pub fn terminal(&self, q: usize) -> (DVector<f64>, f64) {
        let last = self.points() - 1;
        (DVector::from_column_slice(self.state(q, last)), self.y(q, last))
    }
}

struct Stepper<'a> {
    aug: &'a AugmentedSystem,
    grid: TimeGrid,
    noise: DMatrix<f64>,
}

impl<'a> Stepper<'a> {
    fn new(aug: &'a AugmentedSystem, grid: &TimeGrid) -> Self {
        Self {
            aug,
            grid: *grid,
            noise: &aug.base.sigma * grid.dt().sqrt(),
        }
    }

    /// Fills `xs` (points x n) and `ys` (points) from the start and the normals.
    fn run(&self, start: &AugState, normals: &[f64], xs: &mut [f64], ys: &mut [f64]) -> Result<()> {
        let n = start.x.len();
        let dt = self.grid.dt();
        xs[..n].copy_from_slice(start.x.as_slice());
        ys[0] = start.y;
        let mut x = start.x.clone();
        for k in 1..=self.grid.remaining() {
            let i = self.grid.start_index() + k;
            let f = self.aug.base.eval_f(self.grid.time(i - 1), &x)?;
            let z = DVector::from_column_slice(&normals[(k - 1) * n..k * n]);
            let next = &x + f * dt + &self.noise * z;
            let (prev_part, cur) = xs.split_at_mut(k * n);
            cur[..n].copy_from_slice(next.as_slice());
            let inc = y_increment(
                &self.aug.cost,
                self.grid.time(i),
                &prev_part[(k - 1) * n..],
                &cur[..n],
                dt,
            )?;
            ys[k] = ys[k - 1] + inc;
            x = next;
        }
        Ok(())
    }
}

fn check_start(aug: &AugmentedSystem, start: &AugState) -> Result<()> {
    check_len("start state", aug.state_dim(), start.x.len())?;
    if start.y.is_finite() && start.x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteValue("start state"))
    }
}

/// Q independent Euler-Maruyama paths of `dx = f dt + sigma dW` with the `y` recursion
/// driven by the same increments. Sample `q` uses random stream `(seed, q)`.
pub fn sample_paths(
    aug: &AugmentedSystem,
    grid: &TimeGrid,
    start: &AugState,
    samples: usize,
    seed: u64,
) -> Result<PathBundle> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    check_start(aug, start)?;
    let n = aug.state_dim();
    let steps = grid.remaining();
    let points = steps + 1;
    let stepper = Stepper::new(aug, grid);
    let per_sample = rng::map_indices(samples, |q| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut normals = vec![0.0; steps * n];
        rng::fill_standard_normal(&mut rng::stream(seed, q as u64), &mut normals);
        let mut xs = vec![0.0; points * n];
        let mut ys = vec![0.0; points];
        stepper.run(start, &normals, &mut xs, &mut ys)?;
        Ok((xs, ys, normals))
    });
    let mut x = Vec::with_capacity(samples * points * n);
    let mut y = Vec::with_capacity(samples * points);
    let mut increments = Vec::with_capacity(samples * steps * n);
    for r in per_sample {
        let (xs, ys, zs) = r?;
        x.extend_from_slice(&xs);
        y.extend_from_slice(&ys);
        increments.extend_from_slice(&zs);
    }
    Ok(PathBundle {
        grid: *grid,
        n,
        samples,
        x,
        y,
        increments,
    })
}

/// Monte Carlo estimate of `psi`, kept in log form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiEstimate {
    pub log_psi: f64,
    /// Standard error divided by the estimate.
    pub rel_stderr: f64,
    pub samples: usize,
}

impl PsiEstimate {
    pub fn psi(&self) -> f64 {
        self.log_psi.exp()
    }

    pub fn stderr(&self) -> f64 {
        self.psi() * self.rel_stderr
    }
}

/// Log of the sample mean of `exp(terms)` and the relative standard error.
pub(crate) fn log_mean_exp(terms: &[f64]) -> PsiEstimate {
    let q = terms.len();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return PsiEstimate {
            log_psi: if max == f64::INFINITY { f64::INFINITY } else { f64::NEG_INFINITY },
            rel_stderr: f64::NAN,
            samples: q,
        };
    }
    let w: Vec<f64> = terms.iter().map(|t| (t - max).exp()).collect();
    let mean = w.iter().sum::<f64>() / q as f64;
    let var = if q > 1 {
        w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (q - 1) as f64
    } else {
        0.0
    };
    PsiEstimate {
        log_psi: max + mean.ln(),
        rel_stderr: var.sqrt() / (q as f64).sqrt() / mean,
        samples: q,
    }
}

/// `psi ~ (1/Q) sum exp(-Phi(x_M, y_M) / lambda)` over the bundle.
pub fn estimate_psi_standard(
    bundle: &PathBundle,
    cost: &GeneralizedCost,
    lambda: f64,
) -> Result<PsiEstimate> {
    let terms = (0..bundle.samples())
        .map(|q| {
            let (x, y) = bundle.terminal(q);
            Ok(-cost.phi(&x, y)? / lambda)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(log_mean_exp(&terms))
}

/// Same estimate as `sample_paths` followed by `estimate_psi_standard`, without
/// storing the paths.
pub fn standard_psi(
    aug: &AugmentedSystem,
    grid: &TimeGrid,
    start: &AugState,
    samples: usize,
    seed: u64,
) -> Result<PsiEstimate> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    check_start(aug, start)?;
    let n = aug.state_dim();
    let steps = grid.remaining();
    let stepper = Stepper::new(aug, grid);
    let terms = rng::map_indices(samples, |q| -> Result<f64> {
        let mut normals = vec![0.0; steps * n];
        rng::fill_standard_normal(&mut rng::stream(seed, q as u64), &mut normals);
        let mut xs = vec![0.0; (steps + 1) * n];
        let mut ys = vec![0.0; steps + 1];
        stepper.run(start, &normals, &mut xs, &mut ys)?;
        let x = DVector::from_column_slice(&xs[steps * n..]);
        Ok(-aug.cost.phi(&x, ys[steps])? / aug.lambda)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(log_mean_exp(&terms))
}
