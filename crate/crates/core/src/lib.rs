//! Stochastic Lagrangian reachability.
//!
//! Builds reachtubes for ODEs `x' = f(x, x(0), t, θ)` as sequences of
//! ellipsoids `{y : ‖y − χ(x₀)‖_M ≤ δ}` whose radius holds with confidence
//! `1 − γ` up to a multiplicative tolerance `μ`. Each timestep is an
//! independent global minimization of the negated metric distance over the
//! surface of the initial ball, solved by uniform sampling plus local gradient
//! descent, with Lipschitz-certified safety caps that skip redundant descents.
//!
//! Module map:
//!
//! * [`field`]: vector fields with exact Jacobians (linear, Van der Pol, dense
//!   neural networks, user supplied).
//! * [`integrator`]: Dormand–Prince / RK4 solvers for the flow and the joint
//!   state–sensitivity system.
//! * [`geometry`]: polar coordinates, ellipsoids, spherical caps and coverage.
//! * [`interval`]: outward-rounded interval arithmetic, interval sensitivity
//!   enclosures and local Lipschitz bounds.
//! * [`engine`]: the sampling/descent/safety-radius loop and reachtube driver.
//! * [`oracle`]: brute-force checks (Monte Carlo reachsets, cap grids, finite
//!   differences).
//! * [`config`], [`report`], [`runner`]: run configuration, result files and
//!   the orchestration used by the `slr` binary.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod engine;
pub mod error;
pub mod field;
pub mod geometry;
pub mod integrator;
pub mod interval;
pub mod oracle;
pub mod report;
pub mod runner;
pub mod weights;

pub use config::{parse_config, parse_config_str, RunConfig};
pub use engine::{
    gradient_descent, plan_from_probability, plan_iterations, run_reachtube, run_timestep,
    safety_radius, DescentOutcome, LipschitzEstimator, LipschitzMode, LipschitzScope, MetricMode,
    PlanBound, PlanResult, ReachProblem, ReachtubeResult, SlrConfig, TimestepContext,
    TimestepFailure, TimestepResult, TimestepSolver,
};
pub use error::{Result, SlrError};
pub use field::{Activation, Dynamics, FieldKind, NeuralFieldSpec, VectorField};
pub use geometry::{CoverageSet, Ellipsoid, PolarPoint, SafetyCap};
pub use integrator::{IvpSettings, Method, SensitivitySolution, Trajectory};
pub use interval::{Interval, IntervalMatrix, RegionBox};
pub use oracle::McEstimate;
pub use report::ReachtubeReport;
