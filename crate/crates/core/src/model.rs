//! Controlled diffusions `dx = [f(t,x) + K u] dt + sigma dW` and the generalized cost
//! `E[ Phi(x_T, int V dt + int c dx) + 1/2 int u'Ru dt ]`.
//!
//! User-supplied callables must be pure: deterministic for fixed inputs and free of
//! observable side effects. They are shared across sampling workers.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::fd;

/// Default relative tolerance on the compatibility residual.
pub const DEFAULT_COMPATIBILITY_TOL: f64 = 1e-8;

/// Uncontrolled drift `f(t, x)`.
pub trait Drift: Send + Sync {
    fn eval(&self, t: f64, x: &DVector<f64>) -> DVector<f64>;

    fn eval_into(&self, t: f64, x: &DVector<f64>, out: &mut DVector<f64>) {
        *out = self.eval(t, x);
    }

    fn jacobian(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        fd::jacobian(|z| self.eval(t, z), x)
    }

    /// Hessian of `w . f(t, x)` with respect to `x`.
    fn weighted_hessian(&self, t: f64, x: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        fd::hessian(|z| w.dot(&self.eval(t, z)), x)
    }
}

impl<F> Drift for F
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn eval(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        self(t, x)
    }
}

/// `f(t, x) = A x + b(t)`, with exact derivatives.
#[derive(Clone)]
pub struct AffineDrift {
    pub matrix: DMatrix<f64>,
    pub offset: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
}

impl AffineDrift {
    pub fn new(
        matrix: DMatrix<f64>,
        offset: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            matrix,
            offset: Arc::new(offset),
        }
    }

    pub fn linear(matrix: DMatrix<f64>) -> Self {
        let n = matrix.nrows();
        Self::new(matrix, move |_| DVector::zeros(n))
    }
}

impl Drift for AffineDrift {
    fn eval(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + (self.offset)(t)
    }

    fn eval_into(&self, t: f64, x: &DVector<f64>, out: &mut DVector<f64>) {
        *out = (self.offset)(t);
        out.gemv(1.0, &self.matrix, x, 1.0);
    }

    fn jacobian(&self, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }

    fn weighted_hessian(&self, _t: f64, x: &DVector<f64>, _w: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
}

/// Running state cost `V(t, x)`.
pub trait RunningCost: Send + Sync {
    fn eval(&self, t: f64, x: &DVector<f64>) -> f64;

    fn gradient(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        fd::gradient(|z| self.eval(t, z), x)
    }

    fn hessian(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        fd::hessian(|z| self.eval(t, z), x)
    }
}

impl<F> RunningCost for F
where
    F: Fn(f64, &DVector<f64>) -> f64 + Send + Sync,
{
    fn eval(&self, t: f64, x: &DVector<f64>) -> f64 {
        self(t, x)
    }
}

/// Row `c(t)` multiplying `dx` in the stochastic-integral cost, stored as a column vector.
pub trait PathCostRow: Send + Sync {
    fn eval(&self, t: f64) -> DVector<f64>;
}

impl<F> PathCostRow for F
where
    F: Fn(f64) -> DVector<f64> + Send + Sync,
{
    fn eval(&self, t: f64) -> DVector<f64> {
        self(t)
    }
}

/// Terminal cost `Phi(x, y)` on the augmented state.
pub trait TerminalCost: Send + Sync {
    fn eval(&self, x: &DVector<f64>, y: f64) -> f64;

    /// Returns `(Phi_x, Phi_y)`.
    fn gradient(&self, x: &DVector<f64>, y: f64) -> (DVector<f64>, f64) {
        let z = stack(x, y);
        let g = fd::gradient(|z| self.eval(&head(z), z[z.len() - 1]), &z);
        let n = x.len();
        (g.rows(0, n).into_owned(), g[n])
    }

    /// Hessian over `(x, y)`, with `y` as the last coordinate.
    /// `Some(s)` when `Phi(x, y) = g(x) + s y` exactly.
    fn y_slope(&self) -> Option<f64> {
        None
    }

    fn hessian(&self, x: &DVector<f64>, y: f64) -> DMatrix<f64> {
        let z = stack(x, y);
        fd::hessian(|z| self.eval(&head(z), z[z.len() - 1]), &z)
    }
}

impl<F> TerminalCost for F
where
    F: Fn(&DVector<f64>, f64) -> f64 + Send + Sync,
{
    fn eval(&self, x: &DVector<f64>, y: f64) -> f64 {
        self(x, y)
    }
}

/// `Phi(x, y) = y`: the accumulated cost itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct AccumulatedCost;

impl TerminalCost for AccumulatedCost {
    fn y_slope(&self) -> Option<f64> {
        Some(1.0)
    }

    fn eval(&self, _x: &DVector<f64>, y: f64) -> f64 {
        y
    }

    fn gradient(&self, x: &DVector<f64>, _y: f64) -> (DVector<f64>, f64) {
        (DVector::zeros(x.len()), 1.0)
    }

    fn hessian(&self, x: &DVector<f64>, _y: f64) -> DMatrix<f64> {
        DMatrix::zeros(x.len() + 1, x.len() + 1)
    }
}

/// `Phi(x, y) = 1/2 x' S x + weight * y`.
#[derive(Debug, Clone)]
pub struct QuadraticTerminal {
    pub weight_matrix: DMatrix<f64>,
    pub y_weight: f64,
}

impl TerminalCost for QuadraticTerminal {
    fn y_slope(&self) -> Option<f64> {
        Some(self.y_weight)
    }

    fn eval(&self, x: &DVector<f64>, y: f64) -> f64 {
        0.5 * x.dot(&(&self.weight_matrix * x)) + self.y_weight * y
    }

    fn gradient(&self, x: &DVector<f64>, _y: f64) -> (DVector<f64>, f64) {
        (&self.weight_matrix * x, self.y_weight)
    }

    fn hessian(&self, x: &DVector<f64>, _y: f64) -> DMatrix<f64> {
        let n = x.len();
        let mut h = DMatrix::zeros(n + 1, n + 1);
        h.view_mut((0, 0), (n, n)).copy_from(&self.weight_matrix);
        h
    }
}

fn stack(x: &DVector<f64>, y: f64) -> DVector<f64> {
    DVector::from_iterator(x.len() + 1, x.iter().copied().chain(std::iter::once(y)))
}

fn head(z: &DVector<f64>) -> DVector<f64> {
    z.rows(0, z.len() - 1).into_owned()
}

/// `dx = [f(t,x) + K u] dt + sigma dW` on `[0, T]`.
#[derive(Clone)]
pub struct ControlledSde {
    pub drift: Arc<dyn Drift>,
    pub k: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub horizon: f64,
}

impl fmt::Debug for ControlledSde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlledSde")
            .field("k", &self.k)
            .field("sigma", &self.sigma)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl ControlledSde {
    pub fn new(
        drift: impl Drift + 'static,
        k: DMatrix<f64>,
        sigma: DMatrix<f64>,
        horizon: f64,
    ) -> Result<Self> {
        Self::from_arc(Arc::new(drift), k, sigma, horizon)
    }

    pub fn from_arc(
        drift: Arc<dyn Drift>,
        k: DMatrix<f64>,
        sigma: DMatrix<f64>,
        horizon: f64,
    ) -> Result<Self> {
        let n = k.nrows();
        if n == 0 || k.ncols() == 0 {
            return Err(Error::InvalidArgument("K must be non-empty".into()));
        }
        check_len("sigma rows", n, sigma.nrows())?;
        check_len("sigma columns", n, sigma.ncols())?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if k.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("K or sigma"));
        }
        Ok(Self {
            drift,
            k,
            sigma,
            horizon,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.k.ncols()
    }

    pub fn noise_covariance(&self) -> DMatrix<f64> {
        &self.sigma * self.sigma.transpose()
    }

    /// Uncontrolled drift with length and finiteness checks.
    pub fn eval_f(&self, s: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("state", self.state_dim(), x.len())?;
        let v = self.drift.eval(s, x);
        check_len("drift output", self.state_dim(), v.len())?;
        if v.iter().all(|v| v.is_finite()) {
            Ok(v)
        } else {
            Err(Error::NonFiniteValue("drift f"))
        }
    }

    /// As `eval_f`, writing into `out` (resized to the state dimension).
    pub fn eval_f_into(&self, s: f64, x: &DVector<f64>, out: &mut DVector<f64>) -> Result<()> {
        let n = self.state_dim();
        check_len("state", n, x.len())?;
        if out.len() != n {
            *out = DVector::zeros(n);
        }
        self.drift.eval_into(s, x, out);
        check_len("drift output", n, out.len())?;
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteValue("drift f"))
        }
    }

    /// `f(s, x) + K u`.
    pub fn drift(&self, s: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("control", self.control_dim(), u.len())?;
        Ok(self.eval_f(s, x)? + &self.k * u)
    }
}

#[derive(Clone)]
pub struct GeneralizedCost {
    pub terminal: Arc<dyn TerminalCost>,
    pub running: Arc<dyn RunningCost>,
    pub path_row: Arc<dyn PathCostRow>,
    pub r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
}

impl fmt::Debug for GeneralizedCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralizedCost")
            .field("r", &self.r)
            .finish_non_exhaustive()
    }
}

impl GeneralizedCost {
    pub fn new(
        terminal: impl TerminalCost + 'static,
        running: impl RunningCost + 'static,
        path_row: impl PathCostRow + 'static,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        Self::from_arcs(Arc::new(terminal), Arc::new(running), Arc::new(path_row), r)
    }

    pub fn from_arcs(
        terminal: Arc<dyn TerminalCost>,
        running: Arc<dyn RunningCost>,
        path_row: Arc<dyn PathCostRow>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        if !r.is_square() || r.nrows() == 0 {
            return Err(Error::NotPositiveDefinite);
        }
        let asym = (&r - r.transpose()).abs().max();
        if asym > 1e-12 * r.abs().max() {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = r.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let r_inv = chol.inverse();
        Ok(Self {
            terminal,
            running,
            path_row,
            r,
            r_inv,
        })
    }

    /// A cost with `Phi = V = 0` and `c = 0`.
    pub fn zero(n: usize, r: DMatrix<f64>) -> Result<Self> {
        Self::new(
            |_: &DVector<f64>, _: f64| 0.0,
            |_: f64, _: &DVector<f64>| 0.0,
            move |_: f64| DVector::zeros(n),
            r,
        )
    }

    pub fn r_inverse(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    pub fn phi(&self, x: &DVector<f64>, y: f64) -> Result<f64> {
        finite(self.terminal.eval(x, y), "terminal cost Phi")
    }

    pub fn v(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        finite(self.running.eval(t, x), "running cost V")
    }

    pub fn c(&self, t: f64) -> Result<DVector<f64>> {
        let c = self.path_row.eval(t);
        if c.iter().all(|v| v.is_finite()) {
            Ok(c)
        } else {
            Err(Error::NonFiniteValue("path cost row c"))
        }
    }
}

fn finite(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteValue(what))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompatibilityResult {
    pub lambda: f64,
    /// `||sigma sigma' - lambda K R^-1 K'||_F / ||sigma sigma'||_F`.
    pub residual: f64,
}

/// Least-squares `lambda` for `sigma sigma' = lambda K R^-1 K'` and its relative residual.
pub fn validate_lambda(
    sde: &ControlledSde,
    cost: &GeneralizedCost,
    tol: f64,
) -> Result<CompatibilityResult> {
    check_len("R", sde.control_dim(), cost.r.nrows())?;
    let g = &sde.k * cost.r_inverse() * sde.k.transpose();
    let s = sde.noise_covariance();
    let gg = g.dot(&g);
    if gg == 0.0 {
        return Err(Error::IncompatibleNoise {
            lambda: 0.0,
            residual: f64::INFINITY,
        });
    }
    let lambda = s.dot(&g) / gg;
    let s_norm = s.norm();
    let residual = if s_norm > 0.0 {
        (&s - &g * lambda).norm() / s_norm
    } else {
        f64::INFINITY
    };
    if lambda > 0.0 && residual <= tol {
        Ok(CompatibilityResult { lambda, residual })
    } else {
        Err(Error::IncompatibleNoise { lambda, residual })
    }
}
