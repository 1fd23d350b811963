//! Path-integral stochastic optimal control with generalised (path-dependent) costs.
//!
//! The state `x` follows `dx = [f(t, x) + K u] dt + sigma dW` and the controller pays
//! `Phi(x_T, y_T) + int 1/2 u' R u dt`, where `y = int V dt + int c(t) dx`. Augmenting
//! the state with `y` makes the problem amenable to the path-integral representation
//! `phi = -lambda log psi`, with `psi` estimated by Monte Carlo, either from uncontrolled
//! paths or by implicit sampling around the most likely path.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod augment;
pub mod control;
pub mod error;
pub mod fd;
pub mod gridhjb;
pub mod implicit;
pub mod linalg;
pub mod lq;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod tcl;

pub use augment::AugmentedSystem;
pub use control::{
    closed_loop_simulate, fd_steps, grad_phi, optimal_control, value_phi, ClosedLoopRun,
    ControlDecision, DecisionDiagnostics, Estimator, FeedbackPolicy, Method, PathIntegralPolicy, Trajectory,
    ValueQuery,
};
pub use error::{Error, Result};
pub use gridhjb::{solve_hjb_1d, solve_lq_riccati, Grid1D, GridControl, GridPolicy, HjbOptions, HjbProblem1D};
pub use implicit::{
    estimate_psi_implicit, map_sample, minimize_path_functional, path_functional, ImplicitEstimate,
    ImplicitMap, MinimizeOptions, PathVector,
};
pub use model::{
    validate_lambda, AccumulatedCost, AffineDrift, CompatibilityResult, ControlledSde, Drift,
    GeneralizedCost, PathCostRow, QuadraticTerminal, RunningCost, TerminalCost,
};
pub use sampler::{
    estimate_psi_standard, sample_paths, standard_psi, update_y, AugState, PathBundle, PsiEstimate,
    TimeGrid,
};
