//! Implicit sampling for `psi`.
//!
//! The discretised Feynman-Kac integral is written as
//! `det(sigma sigma' dt)^{-(M-j)/2} (2 pi)^{-n(M-j)/2} int exp(-F(x)) dx`, where
//! `F(x) = Phi(x_M, y_M) / lambda + 1/2 sum_i q_i' (sigma sigma' dt)^{-1} q_i` and
//! `q_i = x_i - x_{i-1} - f(t_{i-1}, x_{i-1}) dt`. Samples are `x = mu + A xi` with
//! `mu = argmin F`, `H = L L'` the Hessian at `mu`, `A = L'^{-1}` and `xi ~ N(0, I)`,
//! so that the quadratic model satisfies `F~(x) - zeta = xi' xi / 2`.

use nalgebra::{DMatrix, DVector};

use crate::augment::AugmentedSystem;
use crate::error::{check_len, Error, Result};
use crate::linalg::{BandMatrix, SpdFactor, SymMatrix};
use crate::rng;
use crate::sampler::{log_mean_exp, y_increment, AugState, PsiEstimate, TimeGrid};

/// Stacked path `(x_{j+1}, ..., x_M)` with its fixed start and grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathVector {
    pub values: DVector<f64>,
    pub start: AugState,
    pub grid: TimeGrid,
}

impl PathVector {
    pub fn new(values: DVector<f64>, start: AugState, grid: TimeGrid) -> Result<Self> {
        check_len("path vector", start.x.len() * grid.remaining(), values.len())?;
        Ok(Self {
            values,
            start,
            grid,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.start.x.len()
    }

    /// Node `k` of the path, `k = 0` being the fixed start.
    pub fn node(&self, k: usize) -> DVector<f64> {
        node(&self.values, &self.start.x, k)
    }
}

fn node(z: &DVector<f64>, start: &DVector<f64>, k: usize) -> DVector<f64> {
    let n = start.len();
    if k == 0 {
        start.clone()
    } else {
        z.rows((k - 1) * n, n).into_owned()
    }
}

/// Noise-free Euler path from `start`: the exact minimiser when `Phi` is flat.
pub fn euler_path(aug: &AugmentedSystem, grid: &TimeGrid, start: &AugState) -> Result<PathVector> {
    let n = aug.state_dim();
    check_len("start state", n, start.x.len())?;
    let steps = grid.remaining();
    let mut values = DVector::zeros(n * steps);
    let mut x = start.x.clone();
    for k in 1..=steps {
        let t = grid.time(grid.start_index() + k - 1);
        x = &x + aug.base.eval_f(t, &x)? * grid.dt();
        values.rows_mut((k - 1) * n, n).copy_from(&x);
    }
    PathVector::new(values, start.clone(), *grid)
}

/// The path functional `F` for a fixed start and grid.
pub struct PathFunctional<'a> {
    aug: &'a AugmentedSystem,
    grid: TimeGrid,
    start: AugState,
    /// `(sigma sigma' dt)^{-1}`
    precision: DMatrix<f64>,
    /// `log det(sigma sigma' dt)`
    log_det_cov: f64,
    /// `c(t_k)` for `k = 1..=steps`.
    rows: Vec<DVector<f64>>,
    diagonal: bool,
    precision_diagonal: Vec<f64>,
}

struct Evaluation {
    value: f64,
    gradient: DVector<f64>,
    hessian: SymMatrix,
}

impl<'a> PathFunctional<'a> {
    pub fn new(aug: &'a AugmentedSystem, grid: &TimeGrid, start: &AugState) -> Result<Self> {
        let n = aug.state_dim();
        check_len("start state", n, start.x.len())?;
        let chol = aug.noise_factor()?;
        let dt = grid.dt();
        let precision = chol.inverse() / dt;
        let l = chol.l();
        let log_det_cov =
            n as f64 * dt.ln() + 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
        let precision_diagonal = (0..n).map(|i| precision[(i, i)]).collect();
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || precision[(i, j)] == 0.0));
        let rows = (1..=grid.remaining())
            .map(|k| aug.cost.c(grid.time(grid.start_index() + k)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            aug,
            grid: *grid,
            start: start.clone(),
            precision,
            log_det_cov,
            rows,
            diagonal,
            precision_diagonal,
        })
    }

    pub fn dim(&self) -> usize {
        self.aug.state_dim() * self.grid.remaining()
    }

    fn time(&self, k: usize) -> f64 {
        self.grid.time(self.grid.start_index() + k)
    }

    pub fn value(&self, z: &DVector<f64>) -> Result<f64> {
        check_len("path vector", self.dim(), z.len())?;
        let n = self.aug.state_dim();
        let steps = self.grid.remaining();
        let dt = self.grid.dt();
        let cost = &self.aug.cost;
        let mut y = self.start.y;
        let mut quad = 0.0;
        let mut prev = self.start.x.clone();
        let mut x = DVector::zeros(n);
        let mut q = DVector::zeros(n);
        let mut f = DVector::zeros(n);
        for k in 1..=steps {
            x.copy_from_slice(&z.as_slice()[(k - 1) * n..k * n]);
            self.aug.base.eval_f_into(self.time(k - 1), &prev, &mut f)?;
            let c = self.rows[k - 1].as_slice();
            let mut dx = 0.0;
            for ((((qi, xi), pi), fi), ci) in q
                .as_mut_slice()
                .iter_mut()
                .zip(x.as_slice())
                .zip(prev.as_slice())
                .zip(f.as_slice())
                .zip(c)
            {
                let step = xi - pi;
                *qi = step - fi * dt;
                dx += ci * step;
            }
            quad += if self.diagonal {
                q.as_slice().iter().zip(&self.precision_diagonal).map(|(q, p)| q * q * p).sum::<f64>()
            } else {
                q.dot(&(&self.precision * &q))
            };
            y += cost.v(self.time(k), &x)? * dt + dx;
            std::mem::swap(&mut prev, &mut x);
        }
        let phi = cost.phi(&prev, y)?;
        Ok(phi / self.aug.lambda + 0.5 * quad)
    }

    fn evaluate(&self, z: &DVector<f64>) -> Result<Evaluation> {
        check_len("path vector", self.dim(), z.len())?;
        let n = self.aug.state_dim();
        let steps = self.grid.remaining();
        let dim = n * steps;
        let dt = self.grid.dt();
        let lambda = self.aug.lambda;
        let cost = &self.aug.cost;
        let drift = &self.aug.base.drift;
        let eye = DMatrix::<f64>::identity(n, n);

        let mut grad = DVector::zeros(dim);
        // Block-tridiagonal part, assembled densely per block then scattered.
        let mut diag_blocks = vec![DMatrix::<f64>::zeros(n, n); steps];
        let mut sub_blocks = vec![DMatrix::<f64>::zeros(n, n); steps];
        let mut gy = DVector::zeros(dim);

        let mut y = self.start.y;
        let mut quad = 0.0;
        let nodes: Vec<DVector<f64>> = (0..=steps).map(|k| node(z, &self.start.x, k)).collect();
        let mut v_hessians = Vec::with_capacity(steps);
        for k in 1..=steps {
            let (prev, x) = (&nodes[k - 1], &nodes[k]);
            let t_prev = self.time(k - 1);
            let t = self.time(k);
            let f = self.aug.base.eval_f(t_prev, prev)?;
            let q = x - prev - f * dt;
            let r = &self.precision * &q;
            quad += q.dot(&r);
            y += y_increment(cost, t, prev.as_slice(), x.as_slice(), dt)?;

            let b = k - 1;
            let mut g = grad.rows_mut(b * n, n);
            g += &r;
            diag_blocks[b] += &self.precision;
            if k >= 2 {
                let jac = drift.jacobian(t_prev, prev);
                let bmat = &eye + jac * dt;
                let mut gp = grad.rows_mut((b - 1) * n, n);
                gp -= bmat.transpose() * &r;
                let w = drift.weighted_hessian(t_prev, prev, &r);
                diag_blocks[b - 1] +=
                    bmat.transpose() * &self.precision * &bmat - w * dt;
                sub_blocks[b] -= &self.precision * &bmat;
            }

            // dy_M / dx_k
            let mut gyk = cost.running.gradient(t, x) * dt + cost.c(t)?;
            if k < steps {
                gyk -= cost.c(self.time(k + 1))?;
            }
            gy.rows_mut(b * n, n).copy_from(&gyk);
            v_hessians.push(cost.running.hessian(t, x) * dt);
        }

        let x_end = &nodes[steps];
        let phi = cost.phi(x_end, y)?;
        let (phi_x, phi_y) = cost.terminal.gradient(x_end, y);
        let phi_h = cost.terminal.hessian(x_end, y);
        if !phi_y.is_finite() || phi_x.iter().chain(phi_h.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("terminal cost derivatives"));
        }
        grad += &gy * (phi_y / lambda);
        {
            let mut g = grad.rows_mut((steps - 1) * n, n);
            g += &phi_x / lambda;
        }
        for (b, vh) in v_hessians.into_iter().enumerate() {
            diag_blocks[b] += vh * (phi_y / lambda);
        }
        diag_blocks[steps - 1] += phi_h.view((0, 0), (n, n)) / lambda;

        let phi_yy = phi_h[(n, n)];
        let phi_xy = phi_h.view((0, n), (n, 1)).into_owned();
        let coupled = phi_yy != 0.0 || phi_xy.iter().any(|v| *v != 0.0);

        let hessian = if coupled {
            let mut h = DMatrix::zeros(dim, dim);
            scatter(&diag_blocks, &sub_blocks, n, |i, j, v| {
                h[(i, j)] += v;
                if i != j {
                    h[(j, i)] += v;
                }
            });
            h += &gy * gy.transpose() * (phi_yy / lambda);
            let off = (steps - 1) * n;
            for a in 0..n {
                for bcol in 0..dim {
                    let v = phi_xy[a] * gy[bcol] / lambda;
                    h[(off + a, bcol)] += v;
                    h[(bcol, off + a)] += v;
                }
            }
            SymMatrix::Dense(h)
        } else {
            let mut h = BandMatrix::zeros(dim, 2 * n - 1);
            scatter(&diag_blocks, &sub_blocks, n, |i, j, v| h.add(i, j, v));
            SymMatrix::Banded(h)
        };

        Ok(Evaluation {
            value: phi / lambda + 0.5 * quad,
            gradient: grad,
            hessian,
        })
    }

    /// Gradient of `F`, assembled from pointwise derivatives of the callables.
    pub fn gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.evaluate(z)?.gradient)
    }

    pub fn hessian(&self, z: &DVector<f64>) -> Result<SymMatrix> {
        Ok(self.evaluate(z)?.hessian)
    }
}

/// Calls `put(i, j, v)` for the lower triangle (`i >= j`) of the block-tridiagonal matrix.
fn scatter(
    diag: &[DMatrix<f64>],
    sub: &[DMatrix<f64>],
    n: usize,
    mut put: impl FnMut(usize, usize, f64),
) {
    for (b, d) in diag.iter().enumerate() {
        for i in 0..n {
            for j in 0..=i {
                put(b * n + i, b * n + j, 0.5 * (d[(i, j)] + d[(j, i)]));
            }
        }
        if b > 0 {
            let s = &sub[b];
            for i in 0..n {
                for j in 0..n {
                    put(b * n + i, (b - 1) * n + j, s[(i, j)]);
                }
            }
        }
    }
}

/// `F` at a path (its start and grid are part of the path).
pub fn path_functional(path: &PathVector, aug: &AugmentedSystem) -> Result<f64> {
    PathFunctional::new(aug, &path.grid, &path.start)?.value(&path.values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iter: 200,
            armijo: 1e-4,
        }
    }
}

/// Minimiser, minimum and Hessian factor of `F`.
#[derive(Debug, Clone)]
pub struct ImplicitMap {
    pub mu: PathVector,
    pub zeta: f64,
    pub hessian: SymMatrix,
    pub factor: SpdFactor,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    log_det_cov: f64,
}

impl ImplicitMap {
    pub fn dim(&self) -> usize {
        self.mu.values.len()
    }

    /// `Err(NoConvergence)` unless the minimisation converged.
    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NoConvergence {
                iterations: self.iterations,
                grad_norm: self.grad_norm,
            })
        }
    }

    /// Quadratic model `zeta + 1/2 (x - mu)' H (x - mu)`.
    pub fn quadratic_model(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mu.values;
        self.zeta + 0.5 * d.dot(&self.hessian.mul_vec(&d))
    }
}

fn factor_with_shift(h: &SymMatrix) -> SpdFactor {
    if let Some(f) = h.cholesky() {
        return f;
    }
    let scale = h
        .to_dense()
        .diagonal()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let mut tau = 1e-8 * scale;
    loop {
        let mut shifted = h.clone();
        shifted.add_diagonal(tau);
        if let Some(f) = shifted.cholesky() {
            return f;
        }
        tau *= 10.0;
    }
}

/// Newton's method with Armijo backtracking on `F`, started from `init`.
pub fn minimize_path_functional(
    aug: &AugmentedSystem,
    grid: &TimeGrid,
    start: &AugState,
    init: &PathVector,
    opts: &MinimizeOptions,
) -> Result<ImplicitMap> {
    let pf = PathFunctional::new(aug, grid, start)?;
    check_len("initial path", pf.dim(), init.values.len())?;
    if init.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue("initial path"));
    }
    let mut z = init.values.clone();
    let mut eval = pf.evaluate(&z)?;
    let mut iterations = 0;
    loop {
        let grad_norm = eval.gradient.amax();
        if grad_norm <= opts.grad_tol {
            let factor = eval.hessian.cholesky().ok_or(Error::IndefiniteHessian)?;
            return Ok(ImplicitMap {
                mu: PathVector::new(z, start.clone(), *grid)?,
                zeta: eval.value,
                hessian: eval.hessian,
                factor,
                converged: true,
                iterations,
                grad_norm,
                log_det_cov: pf.log_det_cov,
            });
        }
        let stalled = iterations >= opts.max_iter;
        let factor = factor_with_shift(&eval.hessian);
        if stalled {
            return Ok(ImplicitMap {
                mu: PathVector::new(z, start.clone(), *grid)?,
                zeta: eval.value,
                hessian: eval.hessian,
                factor,
                converged: false,
                iterations,
                grad_norm,
                log_det_cov: pf.log_det_cov,
            });
        }
        iterations += 1;
        let step = -factor.solve(&eval.gradient);
        let slope = eval.gradient.dot(&step);
        let mut accepted = None;
        if -slope <= 1e3 * f64::EPSILON * (1.0 + eval.value.abs()) {
            // F cannot resolve the predicted decrease; judge the full step by the gradient.
            let trial = &z + &step;
            if let Ok(e) = pf.evaluate(&trial) {
                if e.value.is_finite() && e.gradient.amax() < grad_norm {
                    z = trial;
                    eval = e;
                    continue;
                }
            }
        }
        let mut alpha = 1.0;
        while alpha > 1e-12 {
            let trial = &z + &step * alpha;
            if let Ok(v) = pf.value(&trial) {
                if v.is_finite() && v <= eval.value + opts.armijo * alpha * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some(next) => {
                z = next;
                eval = pf.evaluate(&z)?;
            }
            None => {
                // No decrease possible at working precision.
                return Ok(ImplicitMap {
                    mu: PathVector::new(z, start.clone(), *grid)?,
                    zeta: eval.value,
                    hessian: eval.hessian,
                    factor,
                    converged: false,
                    iterations,
                    grad_norm,
                    log_det_cov: pf.log_det_cov,
                });
            }
        }
    }
}

/// `x = mu + L'^{-1} xi`.
pub fn map_sample(map: &ImplicitMap, xi: &DVector<f64>) -> Result<PathVector> {
    check_len("reference sample", map.dim(), xi.len())?;
    let values = &map.mu.values + map.factor.solve_upper(xi);
    Ok(PathVector {
        values,
        start: map.mu.start.clone(),
        grid: map.mu.grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImplicitEstimate {
    pub estimate: PsiEstimate,
    /// `(max w - min w) / mean w` over the sample weights.
    pub weight_spread: f64,
}

/// Weighted implicit-sampling estimate of `psi`; reference sample `q` uses stream `(seed, q)`.
pub fn estimate_psi_implicit(
    aug: &AugmentedSystem,
    map: &ImplicitMap,
    samples: usize,
    seed: u64,
) -> Result<ImplicitEstimate> {
    map.ensure_converged()?;
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let pf = PathFunctional::new(aug, &map.mu.grid, &map.mu.start)?;
    let dim = map.dim();
    let log_weights = rng::map_indices(samples, |q| -> Result<f64> {
        let mut xi = DVector::zeros(dim);
        rng::fill_standard_normal(&mut rng::stream(seed, q as u64), xi.as_mut_slice());
        let x = &map.mu.values + map.factor.solve_upper(&xi);
        Ok(0.5 * xi.norm_squared() - pf.value(&x)?)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let est = log_mean_exp(&log_weights);
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = log_weights.iter().copied().fold(f64::INFINITY, f64::min);
    let weight_spread = (1.0 - (min - max).exp()) * (max - est.log_psi).exp();
    let steps = map.mu.grid.remaining() as f64;
    let log_norm = -0.5 * steps * map.log_det_cov - map.factor.log_det_factor();
    Ok(ImplicitEstimate {
        estimate: PsiEstimate {
            log_psi: log_norm + est.log_psi,
            ..est
        },
        weight_spread,
    })
}
