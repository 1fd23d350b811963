//! Value recovery `phi = -lambda log psi`, its finite-difference gradient, the feedback
//! law `u = -R^-1 K_hat' D phi`, and closed-loop simulation.

use std::sync::Mutex;

use nalgebra::DVector;

use crate::augment::AugmentedSystem;
use crate::error::{check_len, Error, Result};
use crate::implicit::{
    estimate_psi_implicit, euler_path, minimize_path_functional, MinimizeOptions, PathVector,
};
use crate::rng;
use crate::sampler::{standard_psi, AugState, PsiEstimate, TimeGrid};

/// Default finite-difference step scale: `h_k = scale * (1 + |z_k|)`.
pub const DEFAULT_STEP_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Standard,
    Implicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueQuery {
    pub x: DVector<f64>,
    pub y: f64,
    pub t_index: usize,
    pub method: Method,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueEstimate {
    pub phi: f64,
    pub stderr: f64,
    pub log_psi: f64,
    /// Newton iterations (zero for standard sampling).
    pub iterations: usize,
    /// Implicit sampling was requested but standard sampling was used.
    pub fallback: bool,
}

impl ValueEstimate {
    fn from_psi(est: PsiEstimate, lambda: f64, iterations: usize, fallback: bool) -> Result<Self> {
        if est.log_psi.is_nan() {
            return Err(Error::NonFiniteValue("psi estimate"));
        }
        if est.log_psi == f64::NEG_INFINITY {
            return Err(Error::DegeneratePsi);
        }
        Ok(Self {
            phi: -lambda * est.log_psi,
            stderr: lambda * est.rel_stderr,
            log_psi: est.log_psi,
            iterations,
            fallback,
        })
    }
}

/// Value estimator with tunable minimiser settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimator {
    pub method: Method,
    pub samples: usize,
    pub minimize: MinimizeOptions,
}

impl Estimator {
    pub fn new(method: Method, samples: usize) -> Self {
        Self {
            method,
            samples,
            minimize: MinimizeOptions::default(),
        }
    }

    /// Estimates `phi` at `start`; for implicit sampling also returns the minimiser,
    /// which warm-starts nearby queries.
    pub fn value(
        &self,
        aug: &AugmentedSystem,
        grid: &TimeGrid,
        start: &AugState,
        seed: u64,
        warm: Option<&DVector<f64>>,
    ) -> Result<(ValueEstimate, Option<DVector<f64>>)> {
        match self.method {
            Method::Standard => {
                let est = standard_psi(aug, grid, start, self.samples, seed)?;
                Ok((ValueEstimate::from_psi(est, aug.lambda, 0, false)?, None))
            }
            Method::Implicit => {
                let init = match warm {
                    Some(v) => PathVector::new(v.clone(), start.clone(), *grid)?,
                    None => euler_path(aug, grid, start)?,
                };
                let map = match minimize_path_functional(aug, grid, start, &init, &self.minimize) {
                    Ok(map) if map.converged => map,
                    Ok(map) => return self.fallback(aug, grid, start, seed, map.iterations),
                    Err(Error::IndefiniteHessian) => return self.fallback(aug, grid, start, seed, 0),
                    Err(e) => return Err(e),
                };
                let est = estimate_psi_implicit(aug, &map, self.samples, seed)?;
                let value = ValueEstimate::from_psi(est.estimate, aug.lambda, map.iterations, false)?;
                Ok((value, Some(map.mu.values)))
            }
        }
    }

    fn fallback(
        &self,
        aug: &AugmentedSystem,
        grid: &TimeGrid,
        start: &AugState,
        seed: u64,
        iterations: usize,
    ) -> Result<(ValueEstimate, Option<DVector<f64>>)> {
        let est = standard_psi(aug, grid, start, self.samples, seed)?;
        Ok((ValueEstimate::from_psi(est, aug.lambda, iterations, true)?, None))
    }
}

fn query_grid(query: &ValueQuery, grid: &TimeGrid) -> Result<(TimeGrid, AugState)> {
    let g = grid.with_start_index(query.t_index)?;
    Ok((g, AugState::new(query.x.clone(), query.y)))
}

/// `phi = -lambda log psi` at the query point.
pub fn value_phi(query: &ValueQuery, aug: &AugmentedSystem, grid: &TimeGrid) -> Result<ValueEstimate> {
    let (g, start) = query_grid(query, grid)?;
    let est = Estimator::new(query.method, query.samples);
    Ok(est.value(aug, &g, &start, query.seed, None)?.0)
}

/// Steps `h_k = scale * (1 + |z_k|)` for `z = (x, y)`.
pub fn fd_steps(x: &DVector<f64>, y: f64, scale: f64) -> DVector<f64> {
    DVector::from_iterator(
        x.len() + 1,
        x.iter().chain(std::iter::once(&y)).map(|v| scale * (1.0 + v.abs())),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// `(D_x phi, D_y phi)`.
    pub grad: DVector<f64>,
    pub center: ValueEstimate,
    /// Minimiser of `F` at the centre (implicit sampling only).
    pub center_path: Option<DVector<f64>>,
    /// Perturbed evaluations in the order `+h e_0, -h e_0, +h e_1, ...`.
    pub perturbed: Vec<ValueEstimate>,
}

impl GradientEstimate {
    pub fn iterations(&self) -> usize {
        self.perturbed
            .iter()
            .map(|v| v.iterations)
            .fold(self.center.iterations, usize::max)
    }

    pub fn fallbacks(&self) -> usize {
        self.perturbed
            .iter()
            .chain(std::iter::once(&self.center))
            .filter(|v| v.fallback)
            .count()
    }
}

/// Centred differences of `phi` in all `n + 1` augmented coordinates with common
/// random numbers: every evaluation uses the query seed. Perturbed minimisations
/// start from the centre's minimiser, and the centre from `warm` if given.
pub fn grad_phi_with(
    query: &ValueQuery,
    aug: &AugmentedSystem,
    grid: &TimeGrid,
    steps: &DVector<f64>,
    estimator: &Estimator,
    warm: Option<&DVector<f64>>,
) -> Result<GradientEstimate> {
    let n = aug.state_dim();
    check_len("query state", n, query.x.len())?;
    check_len("finite-difference steps", n + 1, steps.len())?;
    if steps.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
        return Err(Error::InvalidArgument("finite-difference steps must be positive".into()));
    }
    let (g, start) = query_grid(query, grid)?;
    let (center, mu) = estimator.value(aug, &g, &start, query.seed, warm)?;
    let mut grad = DVector::zeros(n + 1);
    let mut perturbed = Vec::with_capacity(2 * (n + 1));
    // With Phi = g(x) + s y, phi(x, y) = phi(x, 0) + s y, so the y slope is exact.
    let y_slope = aug.cost.terminal.y_slope();
    for k in 0..=n {
        if let (true, Some(s)) = (k == n, y_slope) {
            grad[k] = s;
            continue;
        }
        let h = steps[k];
        let mut pair = [0.0; 2];
        for (slot, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut s = start.clone();
            if k < n {
                s.x[k] += sign * h;
            } else {
                s.y += sign * h;
            }
            let (v, _) = estimator.value(aug, &g, &s, query.seed, mu.as_ref())?;
            pair[slot] = v.phi;
            perturbed.push(v);
        }
        grad[k] = (pair[0] - pair[1]) / (2.0 * h);
    }
    Ok(GradientEstimate {
        grad,
        center,
        center_path: mu,
        perturbed,
    })
}

/// `grad_phi_with` using the query's method and sample count.
pub fn grad_phi(
    query: &ValueQuery,
    aug: &AugmentedSystem,
    grid: &TimeGrid,
    steps: &DVector<f64>,
) -> Result<GradientEstimate> {
    grad_phi_with(query, aug, grid, steps, &Estimator::new(query.method, query.samples), None)
}

/// `u = -R^-1 K_hat(t)' D phi`.
pub fn optimal_control(grad: &DVector<f64>, aug: &AugmentedSystem, t: f64) -> Result<DVector<f64>> {
    check_len("value gradient", aug.state_dim() + 1, grad.len())?;
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue("value gradient"));
    }
    let k_hat = aug.k_hat(t)?;
    Ok(-(aug.cost.r_inverse() * (k_hat.transpose() * grad)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionDiagnostics {
    pub log_psi: f64,
    pub stderr: f64,
    pub iterations: usize,
    pub fallbacks: usize,
}

impl DecisionDiagnostics {
    /// Diagnostics for a policy that does not sample.
    pub fn none() -> Self {
        Self {
            log_psi: f64::NAN,
            stderr: f64::NAN,
            iterations: 0,
            fallbacks: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub u: DVector<f64>,
    pub phi: f64,
    pub grad_phi: DVector<f64>,
    pub diagnostics: DecisionDiagnostics,
}

pub trait FeedbackPolicy {
    /// Control at grid node `j` for the augmented state `(x, y)`.
    fn decide(
        &self,
        aug: &AugmentedSystem,
        grid: &TimeGrid,
        j: usize,
        x: &DVector<f64>,
        y: f64,
    ) -> Result<ControlDecision>;
}

/// Receding-horizon path-integral control, re-estimated at every node. With implicit
/// sampling the minimiser found at node `j` seeds the minimisation at node `j + 1`.
#[derive(Debug)]
pub struct PathIntegralPolicy {
    pub estimator: Estimator,
    pub seed: u64,
    pub step_scale: f64,
    warm: Mutex<Option<(usize, DVector<f64>)>>,
}

impl PathIntegralPolicy {
    pub fn new(method: Method, samples: usize, seed: u64) -> Self {
        Self {
            estimator: Estimator::new(method, samples),
            seed,
            step_scale: DEFAULT_STEP_SCALE,
            warm: Mutex::new(None),
        }
    }

    pub fn with_step_scale(mut self, scale: f64) -> Self {
        self.step_scale = scale;
        self
    }

    /// The previous minimiser without its first node, if it was found at node `j - 1`.
    fn warm_start(&self, j: usize, n: usize) -> Option<DVector<f64>> {
        let guard = self.warm.lock().unwrap_or_else(|e| e.into_inner());
        match guard.as_ref() {
            Some((k, mu)) if *k + 1 == j && mu.len() > n => Some(mu.rows(n, mu.len() - n).into_owned()),
            _ => None,
        }
    }
}

impl FeedbackPolicy for PathIntegralPolicy {
    fn decide(
        &self,
        aug: &AugmentedSystem,
        grid: &TimeGrid,
        j: usize,
        x: &DVector<f64>,
        y: f64,
    ) -> Result<ControlDecision> {
        let query = ValueQuery {
            x: x.clone(),
            y,
            t_index: j,
            method: self.estimator.method,
            samples: self.estimator.samples,
            seed: rng::derive_seed(self.seed, j as u64),
        };
        let steps = fd_steps(x, y, self.step_scale);
        let warm = self.warm_start(j, x.len());
        let g = grad_phi_with(&query, aug, grid, &steps, &self.estimator, warm.as_ref())?;
        *self.warm.lock().unwrap_or_else(|e| e.into_inner()) = g.center_path.clone().map(|mu| (j, mu));
        let u = optimal_control(&g.grad, aug, grid.time(j))?;
        Ok(ControlDecision {
            u,
            phi: g.center.phi,
            diagnostics: DecisionDiagnostics {
                log_psi: g.center.log_psi,
                stderr: g.center.stderr,
                iterations: g.iterations(),
                fallbacks: g.fallbacks(),
            },
            grad_phi: g.grad,
        })
    }
}

/// A realised closed-loop run. `controls`, `stage_costs` and `diagnostics` have one
/// entry per step; `times`, `states` and `y` one per node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub y: Vec<f64>,
    pub controls: Vec<DVector<f64>>,
    /// `Delta y + 1/2 u' R u dt` over each step.
    pub stage_costs: Vec<f64>,
    pub diagnostics: Vec<DecisionDiagnostics>,
}

impl Trajectory {
    /// Component `i` of the state along the run.
    pub fn state_component(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|x| x[i]).collect()
    }

    pub fn control_component(&self, i: usize) -> Vec<f64> {
        self.controls.iter().map(|u| u[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRun {
    pub trajectory: Trajectory,
    /// Set when the run stopped early; the trajectory holds the steps completed.
    pub error: Option<Error>,
}

impl ClosedLoopRun {
    pub fn into_result(self) -> Result<Trajectory> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.trajectory),
        }
    }
}

/// Simulates the controlled system from `x0` (with `y = 0`) over the grid, holding
/// each decision for one step. Realisation noise comes from its own stream.
pub fn closed_loop_simulate(
    aug: &AugmentedSystem,
    grid: &TimeGrid,
    x0: &DVector<f64>,
    policy: &dyn FeedbackPolicy,
    realization_seed: u64,
) -> ClosedLoopRun {
    let mut traj = Trajectory::default();
    let error = run_loop(aug, grid, x0, policy, realization_seed, &mut traj).err();
    ClosedLoopRun {
        trajectory: traj,
        error,
    }
}

fn run_loop(
    aug: &AugmentedSystem,
    grid: &TimeGrid,
    x0: &DVector<f64>,
    policy: &dyn FeedbackPolicy,
    realization_seed: u64,
    traj: &mut Trajectory,
) -> Result<()> {
    let n = aug.state_dim();
    check_len("initial state", n, x0.len())?;
    let dt = grid.dt();
    let noise = &aug.base.sigma * dt.sqrt();
    let mut world = rng::stream(realization_seed, 0);
    let mut x = x0.clone();
    let mut y = 0.0;
    let first = grid.start_index();
    traj.times.push(grid.time(first));
    traj.states.push(x.clone());
    traj.y.push(y);
    for j in first..grid.steps() {
        let t = grid.time(j);
        let decision = policy.decide(aug, grid, j, &x, y)?;
        if decision.u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("control"));
        }
        let mut z = DVector::zeros(n);
        rng::fill_standard_normal(&mut world, z.as_mut_slice());
        let next = &x + aug.base.drift(t, &x, &decision.u)? * dt + &noise * z;
        let dy = aug.cost.v(t, &x)? * dt + aug.cost.c(t)?.dot(&(&next - &x));
        let effort = 0.5 * decision.u.dot(&(&aug.cost.r * &decision.u)) * dt;
        x = next;
        y += dy;
        traj.times.push(grid.time(j + 1));
        traj.states.push(x.clone());
        traj.y.push(y);
        traj.controls.push(decision.u);
        traj.stage_costs.push(dy + effort);
        traj.diagnostics.push(decision.diagnostics);
    }
    Ok(())
}
