//! Scalar linear-quadratic benchmark `dx = (a x + k u) dt + sigma dW` with cost
//! `int (1/2 q x^2 + 1/2 r u^2) dt + 1/2 s_T x_T^2`, posed as a generalised problem
//! with `V = 1/2 q x^2`, `c = 0` and `Phi = 1/2 s_T x^2 + y`.

use nalgebra::{DMatrix, DVector};

use crate::augment::AugmentedSystem;
use crate::error::{Error, Result};
use crate::gridhjb::{solve_lq_riccati, HjbProblem1D, RiccatiSolution};
use crate::model::{AffineDrift, ControlledSde, GeneralizedCost, QuadraticTerminal, RunningCost};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqProblem {
    pub a: f64,
    pub k: f64,
    pub sigma: f64,
    pub q: f64,
    pub r: f64,
    pub s_t: f64,
    pub horizon: f64,
}

impl Default for LqProblem {
    fn default() -> Self {
        Self {
            a: 0.0,
            k: 1.0,
            sigma: 1.0,
            q: 1.0,
            r: 1.0,
            s_t: 0.0,
            horizon: 1.0,
        }
    }
}

struct QuadraticRunning(f64);

impl RunningCost for QuadraticRunning {
    fn eval(&self, _t: f64, x: &DVector<f64>) -> f64 {
        0.5 * self.0 * x[0] * x[0]
    }

    fn gradient(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        x * self.0
    }

    fn hessian(&self, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.0)
    }
}

impl LqProblem {
    pub fn system(&self) -> Result<AugmentedSystem> {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let sde = ControlledSde::new(
            AffineDrift::linear(one(self.a)),
            one(self.k),
            one(self.sigma),
            self.horizon,
        )?;
        let cost = GeneralizedCost::new(
            QuadraticTerminal {
                weight_matrix: one(self.s_t),
                y_weight: 1.0,
            },
            QuadraticRunning(self.q),
            |_: f64| DVector::zeros(1),
            one(self.r),
        )?;
        AugmentedSystem::new(sde, cost)
    }

    pub fn riccati(&self, steps: usize) -> Result<RiccatiSolution> {
        solve_lq_riccati(
            self.a,
            self.k,
            self.sigma,
            self.q,
            self.r,
            self.s_t,
            self.horizon,
            steps,
        )
    }

    pub fn hjb_problem(&self) -> Result<HjbProblem1D> {
        let (a, q, s) = (self.a, self.q, self.s_t);
        HjbProblem1D::new(
            move |_, x| a * x,
            self.k,
            self.sigma,
            self.r,
            move |_, x| 0.5 * q * x * x,
            |_| 0.0,
            move |x| 0.5 * s * x * x,
        )
    }
}

/// `dx = (A x + b + K u) dt + sigma dW` with `V = 1/2 x'Q x`, a constant path row `c`
/// and `Phi = 1/2 x'S x + y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub k: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub r: DMatrix<f64>,
    pub s_t: DMatrix<f64>,
    pub horizon: f64,
}

struct MatrixRunning(DMatrix<f64>);

impl RunningCost for MatrixRunning {
    fn eval(&self, _t: f64, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.0 * x))
    }

    fn gradient(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        0.5 * (&self.0 + self.0.transpose()) * x
    }

    fn hessian(&self, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        0.5 * (&self.0 + self.0.transpose())
    }
}

impl LinearProblem {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn check(&self) -> Result<()> {
        let n = self.dim();
        let m = self.k.ncols();
        let shapes = [
            ("a", self.a.shape(), (n, n)),
            ("b", self.b.shape(), (n, 1)),
            ("k", self.k.shape(), (n, m)),
            ("sigma", self.sigma.shape(), (n, n)),
            ("q", self.q.shape(), (n, n)),
            ("c", self.c.shape(), (n, 1)),
            ("r", self.r.shape(), (m, m)),
            ("s_t", self.s_t.shape(), (n, n)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::ConfigInvalid(format!(
                    "custom.{name}: shape {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )));
            }
        }
        Ok(())
    }

    pub fn system(&self) -> Result<AugmentedSystem> {
        self.check()?;
        let b = self.b.clone();
        let sde = ControlledSde::new(
            AffineDrift::new(self.a.clone(), move |_| b.clone()),
            self.k.clone(),
            self.sigma.clone(),
            self.horizon,
        )?;
        let c = self.c.clone();
        let cost = GeneralizedCost::new(
            QuadraticTerminal {
                weight_matrix: self.s_t.clone(),
                y_weight: 1.0,
            },
            MatrixRunning(self.q.clone()),
            move |_: f64| c.clone(),
            self.r.clone(),
        )?;
        AugmentedSystem::new(sde, cost)
    }

    /// The scalar problem in original coordinates: `c dx` becomes the running term
    /// `c (a x + b)` and the price `c k` on `u`.
    pub fn hjb_problem(&self) -> Result<HjbProblem1D> {
        self.check()?;
        if self.dim() != 1 || self.k.ncols() != 1 {
            return Err(Error::DimensionUnsupported(self.dim()));
        }
        let (a, b, c, q, s) = (self.a[0], self.b[0], self.c[0], self.q[0], self.s_t[0]);
        let price = c * self.k[0];
        HjbProblem1D::new(
            move |_, x| a * x + b,
            self.k[0],
            self.sigma[0],
            self.r[0],
            move |_, x| 0.5 * q * x * x + c * (a * x + b),
            move |_| price,
            move |x| 0.5 * s * x * x,
        )
    }
}
