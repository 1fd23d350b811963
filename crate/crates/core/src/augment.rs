//! The augmented state `(x, y)` with `y_t = int V dt + int c dx`.
//!
//! With `Lambda(t) = [I_n; c(t)]` the augmented noise and control matrices are
//! `sigma_hat = Lambda sigma` and `K_hat = Lambda K`. Compatibility of the base problem
//! carries over: `Lambda sigma sigma' Lambda' = lambda K_hat R^-1 K_hat'`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_len, Error, Result};
use crate::model::{
    validate_lambda, CompatibilityResult, ControlledSde, GeneralizedCost,
    DEFAULT_COMPATIBILITY_TOL,
};

#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    pub base: ControlledSde,
    pub cost: GeneralizedCost,
    pub lambda: f64,
    noise_chol: Option<Cholesky<f64, Dyn>>,
}

impl AugmentedSystem {
    /// Validates the compatibility condition with the default tolerance.
    pub fn new(base: ControlledSde, cost: GeneralizedCost) -> Result<Self> {
        Self::with_tolerance(base, cost, DEFAULT_COMPATIBILITY_TOL).map(|(a, _)| a)
    }

    pub fn with_tolerance(
        base: ControlledSde,
        cost: GeneralizedCost,
        tol: f64,
    ) -> Result<(Self, CompatibilityResult)> {
        let compat = validate_lambda(&base, &cost, tol)?;
        Ok((Self::with_lambda(base, cost, compat.lambda)?, compat))
    }

    /// Uses `lambda` as given, without checking compatibility.
    pub fn with_lambda(base: ControlledSde, cost: GeneralizedCost, lambda: f64) -> Result<Self> {
        check_len("R", base.control_dim(), cost.r.nrows())?;
        check_len("c(t)", base.state_dim(), cost.c(0.0)?.len())?;
        let noise_chol = base.noise_covariance().cholesky();
        Ok(Self {
            base,
            cost,
            lambda,
            noise_chol,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.base.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.base.control_dim()
    }

    /// Factor of `sigma sigma'`, needed by the path functional.
    pub fn noise_factor(&self) -> Result<&Cholesky<f64, Dyn>> {
        self.noise_chol.as_ref().ok_or(Error::SingularNoise)
    }

    /// `Lambda(s) = [I_n; c(s)]`, an `(n+1) x n` matrix.
    pub fn lambda_matrix(&self, s: f64) -> Result<DMatrix<f64>> {
        let n = self.state_dim();
        let c = self.cost.c(s)?;
        check_len("c(t)", n, c.len())?;
        Ok(DMatrix::from_fn(n + 1, n, |i, j| {
            if i < n {
                if i == j {
                    1.0
                } else {
                    0.0
                }
            } else {
                c[j]
            }
        }))
    }

    pub fn augmented_diffusion(&self, s: f64) -> Result<DMatrix<f64>> {
        Ok(self.lambda_matrix(s)? * &self.base.sigma)
    }

    pub fn k_hat(&self, s: f64) -> Result<DMatrix<f64>> {
        Ok(self.lambda_matrix(s)? * &self.base.k)
    }

    /// Drift of the uncontrolled augmented process: `[f; V + c f]`.
    pub fn augmented_drift(&self, s: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.base.eval_f(s, x)?;
        let y = self.cost.v(s, x)? + self.cost.c(s)?.dot(&f);
        let n = self.state_dim();
        Ok(DVector::from_iterator(
            n + 1,
            f.iter().copied().chain(std::iter::once(y)),
        ))
    }

    /// Drift of `y` under control `u`: `V + c (f + K u)`.
    pub fn controlled_y_drift(&self, s: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        let d = self.base.drift(s, x, u)?;
        Ok(self.cost.v(s, x)? + self.cost.c(s)?.dot(&d))
    }

    /// Largest relative residual of `sigma_hat sigma_hat' = lambda K_hat R^-1 K_hat'`
    /// over the sample times.
    pub fn check_augmented_compatibility(&self, sample_times: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &s in sample_times {
            let sh = self.augmented_diffusion(s)?;
            let kh = self.k_hat(s)?;
            let lhs = &sh * sh.transpose();
            let rhs = &kh * self.cost.r_inverse() * kh.transpose() * self.lambda;
            let norm = lhs.norm();
            let r = if norm > 0.0 {
                (&lhs - rhs).norm() / norm
            } else {
                rhs.norm()
            };
            worst = worst.max(r);
        }
        Ok(worst)
    }
}
