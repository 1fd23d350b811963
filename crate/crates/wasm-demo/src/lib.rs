//! Browser bindings: an LQ value check, a single-TCL closed loop and the comfort penalty.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use nalgebra::DVector;
use picontrol::lq::LqProblem;
use picontrol::tcl::{build_tcl_system, default_forecast, discomfort, ForecastSeries, TclFleetConfig};
use picontrol::{closed_loop_simulate, value_phi, Method, PathIntegralPolicy, TimeGrid, ValueQuery};
use wasm_bindgen::prelude::*;

fn method(implicit: bool) -> Method {
    if implicit {
        Method::Implicit
    } else {
        Method::Standard
    }
}

/// Value of the unit LQ problem at `points` states in `[-2, 2]`, as rows
/// `x, phi, stderr, riccati` flattened.
#[wasm_bindgen]
pub fn lq_value_curve(points: usize, samples: usize, seed: u64, implicit: bool) -> Result<Vec<f64>, String> {
    if points < 2 || samples == 0 {
        return Err("need at least two points and one sample".into());
    }
    let lq = LqProblem::default();
    let aug = lq.system().map_err(|e| e.to_string())?;
    let ric = lq.riccati(10_000).map_err(|e| e.to_string())?;
    let grid = TimeGrid::from_horizon(lq.horizon, 50).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(4 * points);
    for i in 0..points {
        let x = -2.0 + 4.0 * i as f64 / (points - 1) as f64;
        let q = ValueQuery {
            x: DVector::from_element(1, x),
            y: 0.0,
            t_index: 0,
            method: method(implicit),
            samples,
            seed,
        };
        let v = value_phi(&q, &aug, &grid).map_err(|e| e.to_string())?;
        out.extend([x, v.phi, v.stderr, ric.value(0, x)]);
    }
    Ok(out)
}

/// Single-TCL closed loop on [11h, 16h] with the bundled forecast, prices scaled by
/// `price_scale`. Rows `t, temperature, power`; the last row has power NaN.
#[wasm_bindgen]
pub fn tcl_closed_loop(
    time_nodes: usize,
    samples: usize,
    seed: u64,
    price_scale: f64,
    implicit: bool,
) -> Result<Vec<f64>, String> {
    if !price_scale.is_finite() || price_scale < 0.0 {
        return Err("price scale must be non-negative".into());
    }
    let base = default_forecast();
    let rows: Vec<_> = (0..=24)
        .map(|h| {
            let t = h as f64;
            (t, base.outdoor(t), base.price(t) * price_scale)
        })
        .collect();
    let forecast = ForecastSeries::new(&rows).map_err(|e| e.to_string())?;
    let cfg = TclFleetConfig::single_type();
    let aug = build_tcl_system(&cfg, &forecast, 16.0).map_err(|e| e.to_string())?;
    let grid = TimeGrid::new(11.0, 16.0, time_nodes).map_err(|e| e.to_string())?;
    let policy = PathIntegralPolicy::new(method(implicit), samples, seed).with_step_scale(0.002);
    let tr = closed_loop_simulate(&aug, &grid, &cfg.initial_state(), &policy, seed.wrapping_add(1))
        .into_result()
        .map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(3 * tr.times.len());
    for (i, (t, x)) in tr.times.iter().zip(&tr.states).enumerate() {
        let u = tr.controls.get(i).map_or(f64::NAN, |u| u[0]);
        out.extend([*t, x[0], u]);
    }
    Ok(out)
}

/// Comfort penalty of the single-type fleet at `points` temperatures in `[lo, hi]`.
#[wasm_bindgen]
pub fn discomfort_curve(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, String> {
    if points < 2 || !(lo < hi) {
        return Err("need lo < hi and at least two points".into());
    }
    let cfg = TclFleetConfig::single_type();
    Ok((0..points)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            discomfort(&cfg, &DVector::from_element(1, x))
        })
        .collect())
}
