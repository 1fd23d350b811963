//! Validation oracles: an explicit finite-difference solver for the 1-D HJB equation
//! in the original coordinates, and a Riccati solver for scalar LQ problems.
//!
//! The grid solver treats `phi_t + min_u {1/2 sigma^2 phi_xx + (f + K u) phi_x + V + p u
//! + 1/2 R u^2} = 0` with the minimiser `u* = -(K phi_x + p) / R`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::augment::AugmentedSystem;
use crate::control::{ControlDecision, DecisionDiagnostics, FeedbackPolicy};
use crate::error::{Error, Result};
use crate::sampler::TimeGrid;

type ScalarFn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar control problem with running cost `V(t, x) + p(t) u + 1/2 R u^2` and
/// terminal cost `Phi(x)`.
#[derive(Clone)]
pub struct HjbProblem1D {
    pub drift: ScalarFn2,
    pub k: f64,
    pub sigma: f64,
    pub r: f64,
    pub running: ScalarFn2,
    pub price: ScalarFn,
    pub terminal: ScalarFn,
}

impl fmt::Debug for HjbProblem1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HjbProblem1D")
            .field("k", &self.k)
            .field("sigma", &self.sigma)
            .field("r", &self.r)
            .finish_non_exhaustive()
    }
}

impl HjbProblem1D {
    pub fn new(
        drift: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        k: f64,
        sigma: f64,
        r: f64,
        running: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        price: impl Fn(f64) -> f64 + Send + Sync + 'static,
        terminal: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        if !k.is_finite() || !sigma.is_finite() {
            return Err(Error::NonFiniteValue("problem coefficients"));
        }
        Ok(Self {
            drift: Arc::new(drift),
            k,
            sigma,
            r,
            running: Arc::new(running),
            price: Arc::new(price),
            terminal: Arc::new(terminal),
        })
    }

    /// `u* = -(K phi_x + p(t)) / R`.
    pub fn control(&self, t: f64, phi_x: f64) -> f64 {
        -(self.k * phi_x + (self.price)(t)) / self.r
    }
}

/// Space-time grid holding `phi` at `time_steps + 1` equally spaced times.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub nodes: usize,
    pub time_steps: usize,
    pub t0: f64,
    pub t_end: f64,
    values: Vec<f64>,
}

impl Grid1D {
    pub fn new(
        x_min: f64,
        x_max: f64,
        nodes: usize,
        time_steps: usize,
        t0: f64,
        t_end: f64,
    ) -> Result<Self> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidArgument(format!("bad state bounds [{x_min}, {x_max}]")));
        }
        if nodes < 3 {
            return Err(Error::InvalidArgument("need at least 3 nodes".into()));
        }
        if time_steps == 0 || !(t0 < t_end) {
            return Err(Error::InvalidArgument("need a non-empty time grid".into()));
        }
        Ok(Self {
            x_min,
            x_max,
            nodes,
            time_steps,
            t0,
            t_end,
            values: vec![0.0; (time_steps + 1) * nodes],
        })
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nodes - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.nodes - 1 {
            self.x_max
        } else {
            self.x_min + i as f64 * self.dx()
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.time_steps {
            self.t_end
        } else {
            self.t0 + k as f64 * (self.t_end - self.t0) / self.time_steps as f64
        }
    }

    /// `phi` at all nodes at time index `k`.
    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k * self.nodes..(k + 1) * self.nodes]
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let s = ((x - self.x_min) / self.dx()).clamp(0.0, (self.nodes - 1) as f64);
        let i = (s.floor() as usize).min(self.nodes - 2);
        (i, s - i as f64)
    }

    /// Linear interpolation of `phi` at time index `k`; `x` is clamped to the domain.
    pub fn value_at(&self, k: usize, x: f64) -> f64 {
        let v = self.slice(k);
        let (i, w) = self.locate(x);
        v[i] * (1.0 - w) + v[i + 1] * w
    }

    /// Linear interpolation of the nodal centred derivative of `phi`.
    pub fn derivative_at(&self, k: usize, x: f64) -> f64 {
        let v = self.slice(k);
        let (i, w) = self.locate(x);
        let d = |j: usize| nodal_derivative(v, j, self.dx());
        d(i) * (1.0 - w) + d(i + 1) * w
    }
}

fn nodal_derivative(v: &[f64], j: usize, dx: f64) -> f64 {
    let last = v.len() - 1;
    if j == 0 {
        (v[1] - v[0]) / dx
    } else if j == last {
        (v[last] - v[last - 1]) / dx
    } else {
        (v[j + 1] - v[j - 1]) / (2.0 * dx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbOptions {
    /// Fraction of the stability bound used for each substep.
    pub cfl_safety: f64,
    /// Take as many substeps per output interval as stability needs; otherwise take
    /// exactly one and fail if it is unstable.
    pub adaptive: bool,
    pub max_substeps: usize,
}

impl Default for HjbOptions {
    fn default() -> Self {
        Self {
            cfl_safety: 0.9,
            adaptive: true,
            max_substeps: 50_000_000,
        }
    }
}

/// Solves backward from `Phi` at `t_end`, filling every output time of `grid`.
pub fn solve_hjb_1d(problem: &HjbProblem1D, mut grid: Grid1D, opts: &HjbOptions) -> Result<Grid1D> {
    let n = grid.nodes;
    let dx = grid.dx();
    let xs: Vec<f64> = (0..n).map(|i| grid.x(i)).collect();
    let mut phi: Vec<f64> = xs.iter().map(|x| (problem.terminal)(*x)).collect();
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue("terminal cost"));
    }
    let steps = grid.time_steps;
    grid.values[steps * n..].copy_from_slice(&phi);
    let s2 = problem.sigma * problem.sigma;
    let mut next = vec![0.0; n];
    let mut drift = vec![0.0; n];
    let mut substeps = 0usize;
    for k in (0..steps).rev() {
        let t_lo = grid.time(k);
        let mut t = grid.time(k + 1);
        while t > t_lo {
            // Optimal drift from the centred derivative, then the stability bound.
            let p = (problem.price)(t);
            let mut bmax: f64 = 0.0;
            for i in 1..n - 1 {
                let px = (phi[i + 1] - phi[i - 1]) / (2.0 * dx);
                let u = -(problem.k * px + p) / problem.r;
                drift[i] = (problem.drift)(t, xs[i]) + problem.k * u;
                bmax = bmax.max(drift[i].abs());
            }
            let bound = dx * dx / (s2 + dx * bmax);
            let dt = if opts.adaptive {
                (t - t_lo).min(opts.cfl_safety * bound)
            } else {
                let dt = t - t_lo;
                if dt > bound {
                    return Err(Error::UnstableGrid { dt, bound });
                }
                dt
            };
            substeps += 1;
            if substeps > opts.max_substeps {
                return Err(Error::UnstableGrid { dt, bound });
            }
            for i in 1..n - 1 {
                let px = (phi[i + 1] - phi[i - 1]) / (2.0 * dx);
                let u = -(problem.k * px + p) / problem.r;
                let b = drift[i];
                let upwind = if b > 0.0 {
                    (phi[i + 1] - phi[i]) / dx
                } else {
                    (phi[i] - phi[i - 1]) / dx
                };
                let pxx = (phi[i + 1] - 2.0 * phi[i] + phi[i - 1]) / (dx * dx);
                let h = 0.5 * s2 * pxx
                    + b * upwind
                    + (problem.running)(t, xs[i])
                    + p * u
                    + 0.5 * problem.r * u * u;
                next[i] = phi[i] + dt * h;
            }
            next[0] = 2.0 * next[1] - next[2];
            next[n - 1] = 2.0 * next[n - 2] - next[n - 3];
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue("grid value function"));
            }
            std::mem::swap(&mut phi, &mut next);
            t = if t - dt <= t_lo { t_lo } else { t - dt };
        }
        grid.values[k * n..(k + 1) * n].copy_from_slice(&phi);
    }
    Ok(grid)
}

/// `p(t)` and the constant term `beta(t)` of the LQ value `1/2 p x^2 + beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub p: Vec<f64>,
    pub beta: Vec<f64>,
}

impl RiccatiSolution {
    pub fn value(&self, k: usize, x: f64) -> f64 {
        0.5 * self.p[k] * x * x + self.beta[k]
    }

    pub fn gradient(&self, k: usize, x: f64) -> f64 {
        self.p[k] * x
    }
}

/// Integrates `-p' = 2 a p - k^2 p^2 / r + q`, `p(T) = s_T` and `-beta' = 1/2 sigma^2 p`,
/// `beta(T) = 0`, backward from `T` to 0 with classical RK4.
#[allow(clippy::too_many_arguments)]
pub fn solve_lq_riccati(
    a: f64,
    k: f64,
    sigma: f64,
    q: f64,
    r: f64,
    s_t: f64,
    horizon: f64,
    steps: usize,
) -> Result<RiccatiSolution> {
    if !(r > 0.0) || q < 0.0 || s_t < 0.0 || !(horizon > 0.0) || steps == 0 {
        return Err(Error::InvalidArgument(
            "need r > 0, q >= 0, s_T >= 0, T > 0 and steps > 0".into(),
        ));
    }
    let rhs = |p: f64| [2.0 * a * p - k * k * p * p / r + q, 0.5 * sigma * sigma * p];
    let h = horizon / steps as f64;
    let mut p = vec![0.0; steps + 1];
    let mut beta = vec![0.0; steps + 1];
    p[steps] = s_t;
    for i in (0..steps).rev() {
        let (p0, b0) = (p[i + 1], beta[i + 1]);
        let k1 = rhs(p0);
        let k2 = rhs(p0 + 0.5 * h * k1[0]);
        let k3 = rhs(p0 + 0.5 * h * k2[0]);
        let k4 = rhs(p0 + h * k3[0]);
        p[i] = p0 + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        beta[i] = b0 + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
    }
    let times = (0..=steps)
        .map(|i| if i == steps { horizon } else { i as f64 * h })
        .collect();
    Ok(RiccatiSolution { times, p, beta })
}

/// How a grid policy turns the value function into a held control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridControl {
    /// `u = -(K phi_x + p) / R` at the current state.
    Feedback,
    /// Minimise the one-step cost of holding `u` over the interval plus the expected
    /// value at the next node.
    #[default]
    Lookahead,
}

/// Policy from a solved grid; node `j` of the control grid must be output time `j`.
#[derive(Debug, Clone)]
pub struct GridPolicy {
    pub problem: HjbProblem1D,
    pub solution: Grid1D,
    pub mode: GridControl,
}

impl GridPolicy {
    pub fn new(problem: HjbProblem1D, solution: Grid1D) -> Self {
        Self { problem, solution, mode: GridControl::default() }
    }

    pub fn with_mode(mut self, mode: GridControl) -> Self {
        self.mode = mode;
        self
    }

    fn lookahead(&self, j: usize, t: f64, t_next: f64, x: f64) -> f64 {
        let pr = &self.problem;
        let sol = &self.solution;
        let dt = t_next - t;
        let b = (pr.drift)(t, x);
        let p = (pr.price)(t);
        let sd = pr.sigma * dt.sqrt();
        // Three-point Gauss-Hermite rule for the realization noise.
        let nodes = [(-(3f64.sqrt()), 1.0 / 6.0), (0.0, 2.0 / 3.0), (3f64.sqrt(), 1.0 / 6.0)];
        let control = |z: f64| (z - x - b * dt) / (pr.k * dt);
        let cost = |z: f64| {
            let u = control(z);
            let ahead: f64 = nodes
                .iter()
                .map(|(xi, w)| {
                    let xn = z + sd * xi;
                    w * (sol.value_at(j + 1, xn) + (pr.running)(t_next, xn) * dt)
                })
                .sum();
            (0.5 * pr.r * u * u + p * u) * dt + ahead
        };
        // Search over the mean next state: coarse scan on the nodes, then golden section.
        let mut best = 0;
        let mut best_cost = f64::INFINITY;
        for i in 0..sol.nodes {
            let c = cost(sol.x(i));
            if c < best_cost {
                best = i;
                best_cost = c;
            }
        }
        let mut lo = sol.x(best.saturating_sub(1));
        let mut hi = sol.x((best + 1).min(sol.nodes - 1));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut a = hi - g * (hi - lo);
        let mut c = lo + g * (hi - lo);
        let (mut fa, mut fc) = (cost(a), cost(c));
        for _ in 0..80 {
            if fa < fc {
                hi = c;
                c = a;
                fc = fa;
                a = hi - g * (hi - lo);
                fa = cost(a);
            } else {
                lo = a;
                a = c;
                fa = fc;
                c = lo + g * (hi - lo);
                fc = cost(c);
            }
        }
        control(0.5 * (lo + hi))
    }
}

impl FeedbackPolicy for GridPolicy {
    fn decide(
        &self,
        _aug: &AugmentedSystem,
        grid: &TimeGrid,
        j: usize,
        x: &DVector<f64>,
        y: f64,
    ) -> Result<ControlDecision> {
        if x.len() != 1 {
            return Err(Error::DimensionUnsupported(x.len()));
        }
        if grid.steps() != self.solution.time_steps {
            return Err(Error::DimensionMismatch {
                what: "grid solution time steps",
                expected: grid.steps(),
                actual: self.solution.time_steps,
            });
        }
        let t = grid.time(j);
        let px = self.solution.derivative_at(j, x[0]);
        let u = match self.mode {
            GridControl::Feedback => self.problem.control(t, px),
            GridControl::Lookahead if j < grid.steps() && self.problem.k != 0.0 => {
                self.lookahead(j, t, grid.time(j + 1), x[0])
            }
            GridControl::Lookahead => self.problem.control(t, px),
        };
        Ok(ControlDecision {
            u: DVector::from_element(1, u),
            phi: self.solution.value_at(j, x[0]) + y,
            grad_phi: DVector::from_vec(vec![px, 1.0]),
            diagnostics: DecisionDiagnostics::none(),
        })
    }
}
