mod support;

use nalgebra::DVector;
use picontrol::implicit::euler_path;
use picontrol::tcl::{build_tcl_system, default_forecast, discomfort, ForecastSeries, TclFleetConfig};
use picontrol::{
    closed_loop_simulate, estimate_psi_implicit, minimize_path_functional, standard_psi, AugState,
    Method, MinimizeOptions, PathIntegralPolicy, TimeGrid,
};
use support::{mean_and_se, Schedule};

#[test]
fn rewritten_objective_matches_the_original() {
    let cfg = TclFleetConfig::single_type();
    let fc = default_forecast();
    let aug = build_tcl_system(&cfg, &fc, 16.0).unwrap();
    let grid = TimeGrid::new(11.0, 16.0, 60).unwrap();
    let dt = grid.dt();
    let schedule = Schedule(|t| 150.0 + 40.0 * (t - 13.0));
    let r = aug.cost.r[(0, 0)];
    let paths = 100_000;
    let mut original = Vec::with_capacity(paths);
    let mut augmented = Vec::with_capacity(paths);
    let mut martingale = Vec::with_capacity(paths);
    for seed in 0..paths as u64 {
        let tr = closed_loop_simulate(&aug, &grid, &cfg.initial_state(), &schedule, seed)
            .into_result()
            .unwrap();
        let (mut j_orig, mut j_aug, mut mart) = (0.0, *tr.y.last().unwrap(), 0.0);
        for i in 0..tr.controls.len() {
            let (t, x, u) = (tr.times[i], &tr.states[i], tr.controls[i][0]);
            let effort = 0.5 * r * u * u * dt;
            j_orig += (discomfort(&cfg, x) + fc.price(t) * u) * dt + effort;
            j_aug += effort;
            let drift = aug.base.drift(t, x, &tr.controls[i]).unwrap();
            let noise = &tr.states[i + 1] - x - drift * dt;
            mart += aug.cost.c(t).unwrap().dot(&noise);
        }
        // Pathwise, the two objectives differ by the stochastic integral of c sigma dW.
        assert!(
            (j_aug - j_orig - mart).abs() <= 1e-9 * (1.0 + j_orig.abs()),
            "seed {seed}: {j_aug} - {j_orig} != {mart}"
        );
        original.push(j_orig);
        augmented.push(j_aug);
        martingale.push(mart);
    }
    let (mo, _) = mean_and_se(&original);
    let (ma, _) = mean_and_se(&augmented);
    let (mm, se_m) = mean_and_se(&martingale);
    assert!(mm.abs() <= 4.0 * se_m, "martingale mean {mm} vs SE {se_m}");
    assert!((ma - mo).abs() <= 4.0 * se_m, "objectives {ma} vs {mo}, SE {se_m}");
}

#[test]
fn estimators_agree_near_the_end_of_the_day() {
    let cfg = TclFleetConfig::single_type();
    let aug = build_tcl_system(&cfg, &default_forecast(), 16.0).unwrap();
    // Last quarter hour at one-minute steps.
    let grid = TimeGrid::new(11.0, 16.0, 300).unwrap().with_start_index(285).unwrap();
    let start = AugState::new(DVector::from_element(1, 22.3), 0.0);
    let init = euler_path(&aug, &grid, &start).unwrap();
    let map = minimize_path_functional(&aug, &grid, &start, &init, &MinimizeOptions::default()).unwrap();
    assert!(map.converged);
    let imp = estimate_psi_implicit(&aug, &map, 20_000, 3).unwrap().estimate;
    let std = standard_psi(&aug, &grid, &start, 200_000, 4).unwrap();
    let se = (imp.psi() * imp.rel_stderr).hypot(std.psi() * std.rel_stderr);
    assert!(
        (imp.psi() - std.psi()).abs() <= 4.0 * se,
        "implicit {:e} vs standard {:e} (SE {se:e})",
        imp.psi(),
        std.psi()
    );
    assert!(imp.rel_stderr < std.rel_stderr);
}

#[test]
fn optimal_policy_precools_before_noon() {
    let cfg = TclFleetConfig::single_type();
    let aug = build_tcl_system(&cfg, &default_forecast(), 16.0).unwrap();
    let grid = TimeGrid::new(11.0, 16.0, 300).unwrap();
    let noon = 60;
    assert!((grid.time(noon) - 12.0).abs() < 1e-12);
    let mut at_11 = 0.0;
    let mut at_12 = 0.0;
    let runs = 20;
    for seed in 0..runs {
        let policy = PathIntegralPolicy::new(Method::Implicit, 5, 100 + seed).with_step_scale(0.002);
        let tr = closed_loop_simulate(&aug, &grid, &cfg.initial_state(), &policy, seed)
            .into_result()
            .unwrap();
        at_11 += tr.states[0][0];
        at_12 += tr.states[noon][0];
    }
    let (at_11, at_12) = (at_11 / runs as f64, at_12 / runs as f64);
    assert!(at_12 < at_11, "mean temperature at 12h {at_12} vs 11h {at_11}");
    // Below the comfort ceiling ahead of the price peak.
    assert!(at_12 < cfg.comfort_high + 0.5);
}

#[test]
fn prices_drive_the_precooling() {
    let cfg = TclFleetConfig::single_type();
    let fc = default_forecast();
    let free = ForecastSeries::new(&(0..=24).map(|h| (h as f64, fc.outdoor(h as f64), 0.0)).collect::<Vec<_>>()).unwrap();
    let grid = TimeGrid::new(11.0, 16.0, 300).unwrap();
    let noon = |forecast: &ForecastSeries| {
        let aug = build_tcl_system(&cfg, forecast, 16.0).unwrap();
        (0..5)
            .map(|seed| {
                let policy = PathIntegralPolicy::new(Method::Implicit, 5, 100 + seed).with_step_scale(0.002);
                let tr = closed_loop_simulate(&aug, &grid, &cfg.initial_state(), &policy, seed)
                    .into_result()
                    .unwrap();
                tr.states[60][0]
            })
            .sum::<f64>()
            / 5.0
    };
    let (priced, unpriced) = (noon(&fc), noon(&free));
    assert!(priced < unpriced, "12h temperature {priced} with prices vs {unpriced} without");
}
