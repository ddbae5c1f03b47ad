//! Simulation and analysis of the renormalized MacArthur resource-competition
//! system: positivity-preserving time stepping, the evolutionary stable
//! distribution as a convex minimizer, and threshold analysis of steady states.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod esd;
pub mod integrator;
pub mod model;
pub mod scenarios;
pub mod steady;

pub use error::{Error, Result};
pub use esd::{brute_force_esd, check_k_nonsingular, kkt_residual, solve_esd, verify_esd, EsdResult};
pub use integrator::{
    entropy_trace, max_stable_dt, simulate, step_fully_implicit, step_semi_implicit, Scheme, StepConfig, Trajectory,
};
pub use model::{DerivedConstants, Diagnostics, ModelParams, State, StepBound};
pub use scenarios::{build_params, builtin_presets, load_scenario, preset, save_scenario, ScenarioSpec};
pub use steady::{
    dirac_steady_state, extinction_predicate, persistence_sum, positive_steady_state_excluded, two_peak_steady_state,
    Outcome,
};
