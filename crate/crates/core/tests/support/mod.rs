//! Problem generators shared by the integration and acceptance suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use picontrol::{
    AugState, AugmentedSystem, ControlDecision, ControlledSde, DecisionDiagnostics, FeedbackPolicy,
    GeneralizedCost, Result, TimeGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub aug: AugmentedSystem,
    pub grid: TimeGrid,
    pub start: AugState,
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random_range(-scale..scale))
}

/// Drift `A x + b + eps sin(x)`, `V = 1/2 x'Q x + eps cos(x_1)`, constant `c`,
/// `Phi = 1/2 x'S x + y`; `R` chosen so that the noise is compatible.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=2);
    let steps = rng.random_range(4..=20);
    let horizon = rng.random_range(0.5..1.0);
    let a = random_matrix(&mut rng, n, 0.5);
    let b = DVector::from_fn(n, |_, _| rng.random_range(-0.3..0.3));
    let eps = rng.random_range(0.0..0.2);
    let drift = move |_t: f64, x: &DVector<f64>| &a * x + &b + x.map(f64::sin) * eps;

    let mut sigma = random_matrix(&mut rng, n, 0.3);
    for i in 0..n {
        sigma[(i, i)] = rng.random_range(0.6..1.0);
        for j in i + 1..n {
            sigma[(i, j)] = 0.0;
        }
    }
    let k = DMatrix::identity(n, n) + random_matrix(&mut rng, n, 0.2);
    let lambda = rng.random_range(0.5..1.5);
    let cov_inv = (&sigma * sigma.transpose()).try_inverse().unwrap();
    let r = k.transpose() * cov_inv * &k * lambda;
    let r = (&r + r.transpose()) * 0.5;

    let q = {
        let m = random_matrix(&mut rng, n, 0.6);
        &m * m.transpose()
    };
    let s = {
        let m = random_matrix(&mut rng, n, 0.6);
        &m * m.transpose()
    };
    let c = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    let v_eps = rng.random_range(0.0..0.2);
    let running = move |_t: f64, x: &DVector<f64>| 0.5 * x.dot(&(&q * x)) + v_eps * x[0].cos();
    let terminal = move |x: &DVector<f64>, y: f64| 0.5 * x.dot(&(&s * x)) + y;

    let sde = ControlledSde::new(drift, k, sigma, horizon).unwrap();
    let cost = GeneralizedCost::new(terminal, running, move |_t: f64| c.clone(), r).unwrap();
    let aug = AugmentedSystem::new(sde, cost).unwrap();
    assert!((aug.lambda - lambda).abs() < 1e-9 * lambda);
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    Case {
        aug,
        grid: TimeGrid::new(0.0, horizon, steps).unwrap(),
        start: AugState::new(x0, rng.random_range(-0.5..0.5)),
    }
}

/// Open-loop power schedule `u(t)`, identical for every type.
pub struct Schedule(pub fn(f64) -> f64);

impl FeedbackPolicy for Schedule {
    fn decide(&self, aug: &AugmentedSystem, grid: &TimeGrid, j: usize, _x: &DVector<f64>, _y: f64) -> Result<ControlDecision> {
        let m = aug.base.control_dim();
        Ok(ControlDecision {
            u: DVector::from_element(m, (self.0)(grid.time(j))),
            phi: f64::NAN,
            grad_phi: DVector::zeros(m + 1),
            diagnostics: DecisionDiagnostics::none(),
        })
    }
}

pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

