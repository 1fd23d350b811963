use nalgebra::DVector;
use picontrol::lq::LqProblem;
use picontrol::{
    fd_steps, grad_phi, solve_hjb_1d, value_phi, Grid1D, HjbOptions, Method, TimeGrid, ValueQuery,
};

fn grid_errors(nodes: usize) -> Vec<f64> {
    let lq = LqProblem::default();
    let ric = lq.riccati(10_000).unwrap();
    let grid = Grid1D::new(-4.0, 4.0, nodes, 50, 0.0, 1.0).unwrap();
    let sol = solve_hjb_1d(&lq.hjb_problem().unwrap(), grid, &HjbOptions::default()).unwrap();
    [-1.0, 0.0, 1.0]
        .iter()
        .map(|x| (sol.value_at(0, *x) - ric.value(0, *x)).abs() / ric.value(0, *x))
        .collect()
}

#[test]
fn grid_solver_matches_riccati_at_401_nodes() {
    for e in grid_errors(401) {
        assert!(e < 5e-3, "relative error {e}");
    }
}

#[test]
fn grid_error_decreases_with_refinement() {
    let worst = |n| grid_errors(n).into_iter().fold(0.0f64, f64::max);
    let (e51, e101, e401) = (worst(51), worst(101), worst(401));
    assert!(e401 < e101 && e101 < e51, "{e51} {e101} {e401}");
}

#[test]
fn path_integral_value_and_gradient_match_riccati() {
    let lq = LqProblem::default();
    let ric = lq.riccati(10_000).unwrap();
    let aug = lq.system().unwrap();
    let grid = TimeGrid::from_horizon(1.0, 50).unwrap();
    for x in [-1.0, 0.0, 1.0] {
        let q = ValueQuery {
            x: DVector::from_element(1, x),
            y: 0.0,
            t_index: 0,
            method: Method::Implicit,
            samples: 1000,
            seed: 7,
        };
        let v = value_phi(&q, &aug, &grid).unwrap();
        let exact = ric.value(0, x);
        assert!((v.phi - exact).abs() / exact < 0.02, "phi({x}) = {} vs {exact}", v.phi);

        let g = grad_phi(&q, &aug, &grid, &fd_steps(&q.x, 0.0, 0.05)).unwrap();
        let scale = ric.gradient(0, 1.0);
        assert!((g.grad[0] - ric.gradient(0, x)).abs() < 0.03 * scale, "grad({x}) = {}", g.grad[0]);
        assert!((g.grad[1] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn standard_sampling_agrees_with_riccati_statistically() {
    let lq = LqProblem::default();
    let ric = lq.riccati(10_000).unwrap();
    let aug = lq.system().unwrap();
    let grid = TimeGrid::from_horizon(1.0, 50).unwrap();
    let q = ValueQuery {
        x: DVector::from_element(1, 1.0),
        y: 0.0,
        t_index: 0,
        method: Method::Standard,
        samples: 20_000,
        seed: 3,
    };
    let v = value_phi(&q, &aug, &grid).unwrap();
    // Time-discretisation bias is about 1%, sampling error well below that.
    assert!((v.phi - ric.value(0, 1.0)).abs() / ric.value(0, 1.0) < 0.02 + 4.0 * v.stderr);
}
