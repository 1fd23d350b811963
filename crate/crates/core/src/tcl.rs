//! Aggregate thermostatically controlled loads (air conditioners).
//!
//! The average indoor temperature of type `i` follows
//! `dx_i = [alpha_i (T_out(t) - x_i) - kappa_i u_i / N_i] dt + sigma_i dW_i`, where `u_i` is
//! the cooling power of the type. The cost is `int (b(x) + p(t) 1'u + 1/2 u' R u) dt`
//! with discomfort `b(x) = eta1 (sum_i b_i(x))^2`. The price term is moved into the
//! stochastic-integral channel with `V = b - p 1'K^-1 f` and `c = p 1'K^-1`, `Phi = y`.

use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::augment::AugmentedSystem;
use crate::error::{Error, Result};
use crate::gridhjb::HjbProblem1D;
use crate::model::{
    AccumulatedCost, ControlledSde, Drift, GeneralizedCost, PathCostRow, RunningCost,
};

const FORECAST_HEADER: [&str; 3] = ["t_hours", "outdoor_c", "price_per_kwh"];
const DEFAULT_FORECAST: &str = include_str!("../data/forecast.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct TclFleetConfig {
    /// `R_i / C_i` per type, 1/hour.
    pub alpha: Vec<f64>,
    /// Cooling gain per type.
    pub kappa: Vec<f64>,
    /// Number of loads per type.
    pub count: Vec<f64>,
    pub sigma: Vec<f64>,
    pub comfort_low: f64,
    pub comfort_high: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub r_weight: DMatrix<f64>,
    /// Initial average temperatures.
    pub theta0: Vec<f64>,
}

impl TclFleetConfig {
    /// One type of 100 loads.
    pub fn single_type() -> Self {
        Self {
            alpha: vec![0.4834],
            kappa: vec![2.5],
            count: vec![100.0],
            sigma: vec![0.1],
            comfort_low: 19.0,
            comfort_high: 22.0,
            eta1: 2.0,
            eta2: 5.0,
            r_weight: DMatrix::from_element(1, 1, 4.6875e-2),
            theta0: vec![23.0],
        }
    }

    /// Six types differing in `alpha`.
    pub fn six_types() -> Self {
        let n = 6;
        Self {
            alpha: vec![0.4834, 0.6043, 0.7251, 0.8460, 0.9669, 1.0877],
            kappa: vec![2.5; n],
            count: vec![100.0; n],
            sigma: vec![0.1; n],
            comfort_low: 18.0,
            comfort_high: 21.5,
            eta1: 0.1 / 36.0,
            eta2: 5.0,
            r_weight: DMatrix::identity(n, n) * 4.6875e-2,
            theta0: vec![23.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(Error::ConfigInvalid("fleet.alpha: need at least one type".into()));
        }
        let lists = [
            ("fleet.alpha", &self.alpha),
            ("fleet.kappa", &self.kappa),
            ("fleet.count", &self.count),
            ("fleet.sigma", &self.sigma),
            ("fleet.theta0", &self.theta0),
        ];
        for (name, v) in lists {
            if v.len() != n {
                return Err(Error::ConfigInvalid(format!(
                    "{name}: expected {n} entries, found {}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::ConfigInvalid(format!("{name}: entries must be finite")));
            }
        }
        for (name, v) in &lists[..4] {
            if let Some(i) = v.iter().position(|x| *x <= 0.0) {
                return Err(Error::ConfigInvalid(format!("{name}[{i}]: must be positive")));
            }
        }
        if !(self.comfort_low < self.comfort_high) {
            return Err(Error::ConfigInvalid(
                "fleet.comfort: lower bound must be below upper bound".into(),
            ));
        }
        for (name, v) in [("fleet.eta1", self.eta1), ("fleet.eta2", self.eta2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::ConfigInvalid(format!("{name}: must be positive")));
            }
        }
        if self.r_weight.nrows() != n || self.r_weight.ncols() != n {
            return Err(Error::ConfigInvalid(format!("fleet.r_weight: expected {n} x {n}")));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta0)
    }

    /// Diagonal of `K`: `-kappa_i / N_i`.
    pub fn k_diagonal(&self) -> Vec<f64> {
        self.kappa.iter().zip(&self.count).map(|(k, n)| -k / n).collect()
    }

    fn discomfort(&self) -> Discomfort {
        Discomfort {
            eta1: self.eta1,
            eta2: self.eta2,
            low: self.comfort_low,
            high: self.comfort_high,
            width: (self.eta2 * (self.comfort_low - self.comfort_high)).exp(),
        }
    }
}

/// Piecewise-linear outdoor temperature and price forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSeries {
    times: Vec<f64>,
    outdoor: Vec<f64>,
    price: Vec<f64>,
    /// Sample spacing when the times are equally spaced.
    spacing: Option<f64>,
}

impl ForecastSeries {
    /// Rows `(t, outdoor, price)` with strictly increasing `t`.
    pub fn new(rows: &[(f64, f64, f64)]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::ParseError {
                row: 0,
                column: 0,
                message: "forecast has no samples".into(),
            });
        }
        for (i, r) in rows.iter().enumerate() {
            for (col, v) in [r.0, r.1, r.2].into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::ParseError {
                        row: i + 1,
                        column: col + 1,
                        message: format!("non-finite value {v}"),
                    });
                }
            }
            if i > 0 && r.0 <= rows[i - 1].0 {
                return Err(Error::ParseError {
                    row: i + 1,
                    column: 1,
                    message: format!("time {} does not increase", r.0),
                });
            }
        }
        let times: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let n = times.len();
        let spacing = (n > 1)
            .then(|| (times[n - 1] - times[0]) / (n - 1) as f64)
            .filter(|h| times.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h));
        Ok(Self {
            times,
            outdoor: rows.iter().map(|r| r.1).collect(),
            price: rows.iter().map(|r| r.2).collect(),
            spacing,
        })
    }

    /// Parses `t_hours,outdoor_c,price_per_kwh` rows. Error rows count data rows from 1.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::ParseError {
            row: 0,
            column: 0,
            message: e.to_string(),
        })?;
        if headers.iter().collect::<Vec<_>>() != FORECAST_HEADER {
            return Err(Error::ParseError {
                row: 0,
                column: 0,
                message: format!("expected header {}", FORECAST_HEADER.join(",")),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::ParseError {
                row: i + 1,
                column: 0,
                message: e.to_string(),
            })?;
            if rec.len() != 3 {
                return Err(Error::ParseError {
                    row: i + 1,
                    column: rec.len().min(3) + 1,
                    message: format!("expected 3 fields, found {}", rec.len()),
                });
            }
            let mut v = [0.0; 3];
            for (col, field) in rec.iter().enumerate() {
                v[col] = field.parse().map_err(|_| Error::ParseError {
                    row: i + 1,
                    column: col + 1,
                    message: format!("not a number: {field:?}"),
                })?;
            }
            rows.push((v[0], v[1], v[2]));
        }
        Self::new(&rows)
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn check_coverage(&self, start: f64, end: f64) -> Result<()> {
        if start < self.start() || end > self.end() {
            let t = if start < self.start() { start } else { end };
            return Err(Error::CoverageError {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        Ok(())
    }

    /// `(outdoor temperature, price)` at `t`.
    pub fn at(&self, t: f64) -> Result<(f64, f64)> {
        self.check_coverage(t, t)?;
        Ok((self.outdoor(t), self.price(t)))
    }

    /// Outdoor temperature, held constant outside the covered range.
    pub fn outdoor(&self, t: f64) -> f64 {
        self.interpolate(&self.outdoor, t)
    }

    /// Price, held constant outside the covered range.
    pub fn price(&self, t: f64) -> f64 {
        self.interpolate(&self.price, t)
    }

    /// `(outdoor(t), price(t))` with one lookup.
    pub fn outdoor_price(&self, t: f64) -> (f64, f64) {
        match self.locate(t) {
            Ok((i, w)) => (
                lerp(&self.outdoor, i, w),
                lerp(&self.price, i, w),
            ),
            Err(i) => (self.outdoor[i], self.price[i]),
        }
    }

    fn interpolate(&self, values: &[f64], t: f64) -> f64 {
        match self.locate(t) {
            Ok((i, w)) => lerp(values, i, w),
            Err(i) => values[i],
        }
    }

    /// Interval and weight of `t`, or the clamped end index outside the range.
    fn locate(&self, t: f64) -> std::result::Result<(usize, f64), usize> {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return Err(0);
        }
        if t >= self.times[n - 1] {
            return Err(n - 1);
        }
        let i = match self.spacing {
            Some(h) => {
                let mut i = (((t - self.times[0]) / h) as usize).min(n - 2);
                while i + 1 < n - 1 && self.times[i + 1] <= t {
                    i += 1;
                }
                while i > 0 && self.times[i] > t {
                    i -= 1;
                }
                i
            }
            None => self.times.partition_point(|s| *s <= t) - 1,
        };
        Ok((i, (t - self.times[i]) / (self.times[i + 1] - self.times[i])))
    }
}

fn lerp(values: &[f64], i: usize, w: f64) -> f64 {
    values[i] + w * (values[i + 1] - values[i])
}

pub fn load_forecast(path: impl AsRef<Path>) -> Result<ForecastSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::ConfigInvalid(format!("cannot open {}: {e}", path.display())))?;
    ForecastSeries::from_reader(file)
}

/// The shipped synthetic summer-day forecast covering 0-24 h.
pub fn default_forecast() -> ForecastSeries {
    ForecastSeries::from_reader(DEFAULT_FORECAST.as_bytes()).expect("bundled forecast is valid")
}

#[derive(Debug, Clone, Copy)]
struct Discomfort {
    eta1: f64,
    eta2: f64,
    low: f64,
    high: f64,
    /// `exp(eta2 (low - high))`
    width: f64,
}

impl Discomfort {
    fn terms(&self, v: f64) -> (f64, f64) {
        (
            (self.eta2 * (v - self.high)).exp(),
            (self.eta2 * (self.low - v)).exp(),
        )
    }

    fn value(&self, x: &[f64]) -> f64 {
        // exp(eta2 (low - v)) = exp(eta2 (low - high)) / exp(eta2 (v - high)).
        let width = self.width;
        let mut fast = 0.0;
        for v in x {
            let a = self.eta2 * (v - self.high);
            if !(a.abs() < 300.0) {
                return self.value_saturating(x);
            }
            let e = a.exp();
            fast += e + width / e;
        }
        let s = self.eta1 * fast * fast;
        if s.is_finite() {
            s
        } else {
            self.value_saturating(x)
        }
    }

    fn value_saturating(&self, x: &[f64]) -> f64 {
        // eta1 * exp(2 logsumexp(...)), saturating instead of overflowing to inf.
        let args = || {
            x.iter()
                .flat_map(|v| [self.eta2 * (v - self.high), self.eta2 * (self.low - v)])
        };
        let m = args().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = args().map(|a| (a - m).exp()).sum();
        if m < 300.0 {
            let s = sum * m.exp();
            return self.eta1 * s * s;
        }
        (self.eta1.ln() + 2.0 * (m + sum.ln())).exp().min(f64::MAX)
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let s: f64 = x.iter().map(|v| self.terms(*v)).map(|(a, b)| a + b).sum();
        DVector::from_iterator(
            x.len(),
            x.iter().map(|v| {
                let (a, b) = self.terms(*v);
                2.0 * self.eta1 * s * self.eta2 * (a - b)
            }),
        )
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let t: Vec<(f64, f64)> = x.iter().map(|v| self.terms(*v)).collect();
        let s: f64 = t.iter().map(|(a, b)| a + b).sum();
        let d: Vec<f64> = t.iter().map(|(a, b)| self.eta2 * (a - b)).collect();
        DMatrix::from_fn(x.len(), x.len(), |i, j| {
            let mut h = d[i] * d[j];
            if i == j {
                h += s * self.eta2 * self.eta2 * (t[i].0 + t[i].1);
            }
            2.0 * self.eta1 * h
        })
    }
}

/// `eta1 (sum_i [exp(eta2 (x_i - high)) + exp(eta2 (low - x_i))])^2`.
pub fn discomfort(config: &TclFleetConfig, x: &DVector<f64>) -> f64 {
    config.discomfort().value(x.as_slice())
}

struct TclDrift {
    alpha: DVector<f64>,
    forecast: Arc<ForecastSeries>,
}

impl Drift for TclDrift {
    fn eval(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let out = self.forecast.outdoor(t);
        DVector::from_iterator(x.len(), self.alpha.iter().zip(x.iter()).map(|(a, v)| a * (out - v)))
    }

    fn eval_into(&self, t: f64, x: &DVector<f64>, out: &mut DVector<f64>) {
        let o = self.forecast.outdoor(t);
        for ((f, a), v) in out.as_mut_slice().iter_mut().zip(self.alpha.as_slice()).zip(x.as_slice()) {
            *f = a * (o - v);
        }
    }

    fn jacobian(&self, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&-&self.alpha)
    }

    fn weighted_hessian(&self, _t: f64, x: &DVector<f64>, _w: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
}

/// `V = b(x) - p(t) sum_i f_i(t, x) / K_ii`.
struct TclRunning {
    discomfort: Discomfort,
    /// `alpha_i / K_ii`
    ratio: DVector<f64>,
    forecast: Arc<ForecastSeries>,
}

impl RunningCost for TclRunning {
    fn eval(&self, t: f64, x: &DVector<f64>) -> f64 {
        let (out, p) = self.forecast.outdoor_price(t);
        let flow: f64 = self.ratio.as_slice().iter().zip(x.as_slice()).map(|(r, v)| r * (out - v)).sum();
        self.discomfort.value(x.as_slice()) - p * flow
    }

    fn gradient(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        self.discomfort.gradient(x.as_slice()) + &self.ratio * self.forecast.price(t)
    }

    fn hessian(&self, _t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        self.discomfort.hessian(x.as_slice())
    }
}

/// `c(t) = p(t) 1' K^-1`.
struct TclPathRow {
    k_inv: DVector<f64>,
    forecast: Arc<ForecastSeries>,
}

impl PathCostRow for TclPathRow {
    fn eval(&self, t: f64) -> DVector<f64> {
        &self.k_inv * self.forecast.price(t)
    }
}

/// The fleet SDE on `[0, horizon_end]` (absolute hours).
pub fn build_tcl_sde(
    config: &TclFleetConfig,
    forecast: &ForecastSeries,
    horizon_end: f64,
) -> Result<ControlledSde> {
    config.validate()?;
    forecast.check_coverage(0.0, horizon_end)?;
    let k = DMatrix::from_diagonal(&DVector::from_vec(config.k_diagonal()));
    let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&config.sigma));
    let drift = TclDrift {
        alpha: DVector::from_column_slice(&config.alpha),
        forecast: Arc::new(forecast.clone()),
    };
    ControlledSde::new(drift, k, sigma, horizon_end)
}

/// `V = b - p 1'K^-1 f`, `c = p 1'K^-1`, `Phi = y`, `R` from the config.
pub fn build_generalized_cost(
    config: &TclFleetConfig,
    forecast: &ForecastSeries,
    sde: &ControlledSde,
) -> Result<GeneralizedCost> {
    let n = config.dim();
    let k = &sde.k;
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "K",
            expected: n,
            actual: k.nrows(),
        });
    }
    let off_diagonal = (0..n).any(|i| (0..n).any(|j| i != j && k[(i, j)] != 0.0));
    if off_diagonal || (0..n).any(|i| k[(i, i)] == 0.0 || !k[(i, i)].is_finite()) {
        return Err(Error::SingularK);
    }
    let k_inv = DVector::from_fn(n, |i, _| 1.0 / k[(i, i)]);
    let forecast = Arc::new(forecast.clone());
    let running = TclRunning {
        discomfort: config.discomfort(),
        ratio: DVector::from_fn(n, |i, _| config.alpha[i] * k_inv[i]),
        forecast: forecast.clone(),
    };
    let row = TclPathRow { k_inv, forecast };
    GeneralizedCost::new(AccumulatedCost, running, row, config.r_weight.clone())
}

/// SDE plus cost, with `lambda` from the compatibility condition.
pub fn build_tcl_system(
    config: &TclFleetConfig,
    forecast: &ForecastSeries,
    horizon_end: f64,
) -> Result<AugmentedSystem> {
    let sde = build_tcl_sde(config, forecast, horizon_end)?;
    let cost = build_generalized_cost(config, forecast, &sde)?;
    AugmentedSystem::new(sde, cost)
}

/// The single-type problem in temperature coordinates for the grid solver.
pub fn hjb_problem(config: &TclFleetConfig, forecast: &ForecastSeries) -> Result<HjbProblem1D> {
    config.validate()?;
    if config.dim() != 1 {
        return Err(Error::DimensionUnsupported(config.dim()));
    }
    let alpha = config.alpha[0];
    let d = config.discomfort();
    let (f1, f2) = (Arc::new(forecast.clone()), Arc::new(forecast.clone()));
    HjbProblem1D::new(
        move |t, x| alpha * (f1.outdoor(t) - x),
        config.k_diagonal()[0],
        config.sigma[0],
        config.r_weight[(0, 0)],
        move |_, x| d.value(&[x]),
        move |t| f2.price(t),
        |_| 0.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_lambda;
    use proptest::prelude::*;

    fn flat_forecast(out: f64, price: f64) -> ForecastSeries {
        ForecastSeries::new(&[(0.0, out, price), (24.0, out, price)]).unwrap()
    }

    #[test]
    fn single_type_matrices() {
        let sde = build_tcl_sde(&TclFleetConfig::single_type(), &default_forecast(), 16.0).unwrap();
        assert!((sde.k[(0, 0)] + 0.025).abs() < 1e-15);
        assert_eq!(sde.sigma[(0, 0)], 0.1);
        let f = sde.eval_f(12.0, &DVector::from_element(1, default_forecast().outdoor(12.0))).unwrap();
        assert_eq!(f[0], 0.0);
    }

    #[test]
    fn six_type_drift_ordering() {
        let cfg = TclFleetConfig::six_types();
        let sde = build_tcl_sde(&cfg, &default_forecast(), 16.0).unwrap();
        let f = sde.eval_f(13.0, &DVector::from_element(6, 21.0)).unwrap();
        assert!(f[5] > f[0]);
        assert!(f.as_slice().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn compatibility_constant() {
        let cfg = TclFleetConfig::single_type();
        let fc = default_forecast();
        let sde = build_tcl_sde(&cfg, &fc, 16.0).unwrap();
        let cost = build_generalized_cost(&cfg, &fc, &sde).unwrap();
        let c = validate_lambda(&sde, &cost, 1e-12).unwrap();
        assert!((c.lambda - 0.75).abs() < 1e-12);
        assert!(c.residual <= 1e-12);
        let six = TclFleetConfig::six_types();
        let sde = build_tcl_sde(&six, &fc, 16.0).unwrap();
        let cost = build_generalized_cost(&six, &fc, &sde).unwrap();
        assert!((validate_lambda(&sde, &cost, 1e-12).unwrap().lambda - 0.75).abs() < 1e-12);
    }

    #[test]
    fn discomfort_examples() {
        let cfg = TclFleetConfig::single_type();
        let x = |v: f64| DVector::from_element(1, v);
        let b1 = 2.0 * (-7.5f64).exp();
        assert!((discomfort(&cfg, &x(20.5)) - 2.0 * b1 * b1).abs() < 1e-18);
        assert!((b1 - 1.10616e-3).abs() < 1e-8);
        assert!((2.0 * b1 * b1 - 2.4472e-6).abs() < 1e-10);
        let top = 1.0 + (-15.0f64).exp();
        assert!((discomfort(&cfg, &x(22.0)) - 2.0 * top * top).abs() < 1e-12);
        assert!(discomfort(&cfg, &x(1e6)).is_finite());
    }

    #[test]
    fn discomfort_derivatives_match_finite_differences() {
        let cfg = TclFleetConfig::six_types();
        let d = cfg.discomfort();
        let x = DVector::from_vec(vec![17.5, 18.3, 20.0, 21.4, 22.0, 19.0]);
        let g = crate::fd::gradient(|v| d.value(v.as_slice()), &x);
        assert!((d.gradient(x.as_slice()) - &g).amax() < 1e-6 * g.amax());
        let h = crate::fd::jacobian(|v| d.gradient(v.as_slice()), &x);
        assert!((d.hessian(x.as_slice()) - &h).amax() < 1e-6 * h.amax());
    }

    #[test]
    fn cost_construction() {
        let cfg = TclFleetConfig::single_type();
        let fc = flat_forecast(30.0, 0.05);
        let sde = build_tcl_sde(&cfg, &fc, 16.0).unwrap();
        let cost = build_generalized_cost(&cfg, &fc, &sde).unwrap();
        assert!((cost.c(12.0).unwrap()[0] + 2.0).abs() < 1e-12);
        let x = DVector::from_element(1, 21.0);
        let f = sde.eval_f(12.0, &x).unwrap()[0];
        let expect = discomfort(&cfg, &x) - 0.05 * f / -0.025;
        assert!((cost.v(12.0, &x).unwrap() - expect).abs() < 1e-12);

        let free = flat_forecast(30.0, 0.0);
        let sde = build_tcl_sde(&cfg, &free, 16.0).unwrap();
        let cost = build_generalized_cost(&cfg, &free, &sde).unwrap();
        assert_eq!(cost.c(3.0).unwrap()[0], 0.0);
        assert_eq!(cost.v(3.0, &x).unwrap(), discomfort(&cfg, &x));
    }

    #[test]
    fn running_cost_derivatives() {
        let cfg = TclFleetConfig::six_types();
        let fc = default_forecast();
        let sde = build_tcl_sde(&cfg, &fc, 16.0).unwrap();
        let cost = build_generalized_cost(&cfg, &fc, &sde).unwrap();
        let x = DVector::from_vec(vec![21.0, 22.0, 20.0, 21.4, 22.5, 19.0]);
        let g = crate::fd::gradient(|v| cost.running.eval(13.5, v), &x);
        let a = cost.running.gradient(13.5, &x);
        assert!((a - &g).amax() < 1e-6 * g.amax());
    }

    #[test]
    fn singular_k_is_rejected() {
        let cfg = TclFleetConfig::single_type();
        let fc = default_forecast();
        let sde = ControlledSde::new(
            |_: f64, x: &DVector<f64>| -x,
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 0.1),
            16.0,
        )
        .unwrap();
        assert!(matches!(build_generalized_cost(&cfg, &fc, &sde), Err(Error::SingularK)));
    }

    #[test]
    fn invalid_config_names_the_field() {
        let mut cfg = TclFleetConfig::single_type();
        cfg.kappa = vec![-1.0];
        match cfg.validate() {
            Err(Error::ConfigInvalid(m)) => assert!(m.contains("fleet.kappa"), "{m}"),
            other => panic!("{other:?}"),
        }
        let mut cfg = TclFleetConfig::single_type();
        cfg.comfort_low = 23.0;
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn forecast_examples() {
        let f = ForecastSeries::new(&[(0.0, 20.0, 0.1), (1.0, 30.0, 0.3)]).unwrap();
        let (o, p) = f.at(0.5).unwrap();
        assert!((o - 25.0).abs() < 1e-12 && (p - 0.2).abs() < 1e-12);
        assert!(matches!(f.at(1.5), Err(Error::CoverageError { .. })));
        let csv = "t_hours,outdoor_c,price_per_kwh\n0,20,0.1\n2,21,0.2\n1,22,0.3\n";
        match ForecastSeries::from_reader(csv.as_bytes()) {
            Err(Error::ParseError { row, column, .. }) => assert_eq!((row, column), (3, 1)),
            other => panic!("{other:?}"),
        }
        let bad = "t_hours,outdoor_c,price_per_kwh\n0,20,x\n";
        assert!(matches!(
            ForecastSeries::from_reader(bad.as_bytes()),
            Err(Error::ParseError { row: 1, column: 3, .. })
        ));
        assert!(ForecastSeries::from_reader("a,b,c\n0,1,2\n".as_bytes()).is_err());
        let fc = default_forecast();
        assert_eq!((fc.start(), fc.end()), (0.0, 24.0));
        assert!(matches!(
            build_tcl_sde(&TclFleetConfig::single_type(), &fc, 25.0),
            Err(Error::CoverageError { .. })
        ));
    }

    #[test]
    fn grid_problem_is_one_dimensional() {
        let fc = default_forecast();
        assert!(hjb_problem(&TclFleetConfig::single_type(), &fc).is_ok());
        assert!(matches!(
            hjb_problem(&TclFleetConfig::six_types(), &fc),
            Err(Error::DimensionUnsupported(6))
        ));
    }

    proptest! {
        #[test]
        fn discomfort_is_band_symmetric(delta in -5.0f64..5.0) {
            let cfg = TclFleetConfig::single_type();
            let a = discomfort(&cfg, &DVector::from_element(1, cfg.comfort_high + delta));
            let b = discomfort(&cfg, &DVector::from_element(1, cfg.comfort_low - delta));
            prop_assert!((a - b).abs() <= 1e-12 * a.max(b));
        }

        #[test]
        fn discomfort_convex_outside_band(v in prop_oneof![10.0f64..19.0, 22.0f64..30.0]) {
            let cfg = TclFleetConfig::single_type();
            let d = cfg.discomfort();
            prop_assert!(d.hessian(&[v])[(0, 0)] > 0.0);
            prop_assert!(d.value(&[v]) >= 0.0);
        }

        #[test]
        fn cost_terms_are_continuous_in_time(t in 0.0f64..23.0, dt in 1e-9f64..1e-6) {
            let cfg = TclFleetConfig::single_type();
            let fc = default_forecast();
            let sde = build_tcl_sde(&cfg, &fc, 24.0).unwrap();
            let cost = build_generalized_cost(&cfg, &fc, &sde).unwrap();
            let x = DVector::from_element(1, 21.0);
            let dv = (cost.v(t + dt, &x).unwrap() - cost.v(t, &x).unwrap()).abs();
            let dc = (cost.c(t + dt).unwrap()[0] - cost.c(t).unwrap()[0]).abs();
            // Forecast slopes are bounded; the offsets absorb rounding.
            prop_assert!(dv <= 1e4 * dt + 1e-10 && dc <= 1e3 * dt + 1e-12);
        }
    }
}
