//! Per-timestep global optimization of the loss over the initial sphere, and
//! its assembly into a reachtube.

mod context;
mod descent;
mod lipschitz;
mod plan;
mod reachtube;
mod timestep;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlrError};
use crate::field::VectorField;
use crate::geometry::SafetyCap;
use crate::integrator::IvpSettings;

pub use context::TimestepContext;
pub use descent::{gradient_descent, DescentOutcome};
pub use lipschitz::{safety_radius, LipschitzEstimator};
pub use plan::{plan_from_probability, plan_iterations, PlanBound, PlanResult};
pub use reachtube::{run_reachtube, ReachtubeResult, TimestepFailure};
pub use timestep::{run_timestep, TimestepSolver};

/// The system and its initial ball `B(x₀, δ₀)` at time `t₀`.
#[derive(Clone, Debug)]
pub struct ReachProblem {
    pub field: VectorField,
    pub x0: Vec<f64>,
    pub delta0: f64,
    pub t0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    /// Volume-normalized metric from the center's sensitivity.
    Optimal,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LipschitzMode {
    /// Interval enclosure of the sensitivity; the only mode that backs the
    /// stochastic guarantee.
    Rigorous,
    /// Largest sampled sensitivity norm times an inflation factor.
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LipschitzScope {
    /// One bound over the whole initial ball per timestep.
    Global,
    /// A bound per cap from the shrinking-region fixpoint.
    PerCap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlrConfig {
    pub gamma: f64,
    pub mu: f64,
    /// Strictly decreasing tolerances; when non-empty the first entry replaces
    /// `mu` and the rest are applied in turn by refinement.
    pub mu_schedule: Vec<f64>,
    /// Stop refining once the guaranteed radius is at most this value.
    pub refine_until_radius: Option<f64>,
    pub eps_gd: f64,
    /// Step length in radians per unit of relative gradient `∇L/|L|`.
    pub alpha: f64,
    pub backtracking: bool,
    pub eps_fix: f64,
    pub max_gd_iters: usize,
    pub max_samples: usize,
    pub seed: u64,
    pub metric_mode: MetricMode,
    pub lipschitz_mode: LipschitzMode,
    pub lipschitz_scope: LipschitzScope,
    pub sampled_inflation: f64,
    pub sampled_points: usize,
    /// Initial interval steps per unit time; doubled until the bound settles.
    pub lipschitz_steps_per_unit: usize,
    pub lipschitz_max_steps_per_unit: usize,
    pub ivp: IvpSettings,
}

impl Default for SlrConfig {
    fn default() -> Self {
        Self {
            gamma: 0.05,
            mu: 1.05,
            mu_schedule: Vec::new(),
            refine_until_radius: None,
            eps_gd: 1e-6,
            alpha: 0.5,
            backtracking: true,
            eps_fix: 1e-3,
            max_gd_iters: 200,
            max_samples: 100_000,
            seed: 0,
            metric_mode: MetricMode::Optimal,
            lipschitz_mode: LipschitzMode::Rigorous,
            lipschitz_scope: LipschitzScope::Global,
            sampled_inflation: 1.5,
            sampled_points: 64,
            lipschitz_steps_per_unit: 64,
            lipschitz_max_steps_per_unit: 4096,
            ivp: IvpSettings::default(),
        }
    }
}

impl SlrConfig {
    /// Tolerance used for the first pass.
    pub fn initial_mu(&self) -> f64 {
        self.mu_schedule.first().copied().unwrap_or(self.mu)
    }

    /// All violated invariants, not just the first.
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            errs.push(format!("gamma must satisfy γ ∈ (0,1), got {}", self.gamma));
        }
        if !(self.mu >= 1.0 && self.mu.is_finite()) {
            errs.push(format!("mu must satisfy μ ≥ 1, got {}", self.mu));
        }
        if let Some(last) = self.mu_schedule.last() {
            if !(*last >= 1.0) {
                errs.push(format!("mu_schedule entries must be ≥ 1, got {last}"));
            }
            if self.mu_schedule.windows(2).any(|w| !(w[1] < w[0])) {
                errs.push("mu_schedule must be strictly decreasing".into());
            }
            if self.mu_schedule.iter().any(|m| !m.is_finite()) {
                errs.push("mu_schedule entries must be finite".into());
            }
        }
        if let Some(r) = self.refine_until_radius {
            if !(r >= 0.0) {
                errs.push(format!("refine_until_radius must be ≥ 0, got {r}"));
            }
        }
        for (name, v) in [
            ("eps_gd", self.eps_gd),
            ("alpha", self.alpha),
            ("eps_fix", self.eps_fix),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.sampled_inflation >= 1.0) {
            errs.push(format!(
                "sampled_inflation must be ≥ 1, got {}",
                self.sampled_inflation
            ));
        }
        if self.max_gd_iters == 0 {
            errs.push("max_gd_iters must be positive".into());
        }
        if self.max_samples == 0 {
            errs.push("max_samples must be positive".into());
        }
        if self.sampled_points == 0 {
            errs.push("sampled_points must be positive".into());
        }
        if self.lipschitz_steps_per_unit == 0
            || self.lipschitz_max_steps_per_unit < self.lipschitz_steps_per_unit
        {
            errs.push("lipschitz step counts must satisfy 0 < initial ≤ max".into());
        }
        if let Err(SlrError::Validation(e)) = self.ivp.validate() {
            errs.extend(e);
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.validation_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SlrError::Validation(errs))
        }
    }
}

/// Outcome of the optimization at one time point.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestepResult {
    pub index: usize,
    pub t: f64,
    pub center: Vec<f64>,
    pub metric: DMatrix<f64>,
    pub factor: DMatrix<f64>,
    /// Smallest loss found, `m̄ ≤ 0`.
    pub m_bar: f64,
    /// `−m̄`.
    pub delta_raw: f64,
    /// `−μ·m̄`, the radius the confidence statement applies to.
    pub delta_guaranteed: f64,
    pub mu: f64,
    pub confidence: f64,
    pub converged: bool,
    /// Uniform samples drawn.
    pub samples_used: usize,
    pub gd_runs: usize,
    pub caps_count: usize,
    /// Lipschitz bound over the whole initial ball.
    pub lipschitz: f64,
    pub lipschitz_mode: LipschitzMode,
    pub lipschitz_scope: LipschitzScope,
    pub metric_mode: MetricMode,
    /// True only for rigorous Lipschitz bounds.
    pub guarantee_claimed: bool,
    /// Loss of the first uniform sample.
    pub first_loss: f64,
    /// Descent runs that stopped because the loss kept increasing.
    pub descent_warnings: usize,
    /// Final caps of all visited points.
    pub caps: Vec<SafetyCap>,
}
