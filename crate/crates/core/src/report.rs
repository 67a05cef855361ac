//! Versioned JSON result files and CSV ellipse projections.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::{
    LipschitzMode, LipschitzScope, MetricMode, ReachtubeResult, SlrConfig, TimestepResult,
};
use crate::error::{Result, SlrError};
use crate::field::{FieldKind, VectorField};
use crate::geometry::Ellipsoid;

pub const SCHEMA: &str = "slr-reachtube";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemRecord {
    pub kind: FieldKind,
    pub n: usize,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialRecord {
    pub x0: Vec<f64>,
    pub delta0: f64,
    pub t0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimestepRecord {
    pub index: usize,
    pub t: f64,
    pub n: usize,
    pub center: Vec<f64>,
    /// `M`, row-major.
    pub metric: Vec<f64>,
    /// `A` with `AᵀA = M`, row-major.
    pub factor: Vec<f64>,
    pub m_bar: f64,
    pub delta_raw: f64,
    pub delta_guaranteed: f64,
    pub mu: f64,
    pub confidence: f64,
    pub converged: bool,
    pub samples_used: usize,
    pub gd_runs: usize,
    pub caps_count: usize,
    pub lipschitz: f64,
    pub lipschitz_mode: LipschitzMode,
    pub lipschitz_scope: LipschitzScope,
    pub metric_mode: MetricMode,
    pub guarantee_claimed: bool,
    pub first_loss: f64,
    pub descent_warnings: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureRecord {
    pub index: usize,
    pub t: f64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReachtubeReport {
    pub schema: String,
    pub version: u32,
    pub system: SystemRecord,
    pub initial: InitialRecord,
    pub config: SlrConfig,
    /// The configured time grid; `timesteps[i].index` points into it.
    pub times: Vec<f64>,
    pub timesteps: Vec<TimestepRecord>,
    pub failures: Vec<FailureRecord>,
    pub converged: bool,
    /// The only field that differs between identical runs.
    pub wall_time_seconds: f64,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl From<&TimestepResult> for TimestepRecord {
    fn from(r: &TimestepResult) -> Self {
        Self {
            index: r.index,
            t: r.t,
            n: r.center.len(),
            center: r.center.clone(),
            metric: row_major(&r.metric),
            factor: row_major(&r.factor),
            m_bar: r.m_bar,
            delta_raw: r.delta_raw,
            delta_guaranteed: r.delta_guaranteed,
            mu: r.mu,
            confidence: r.confidence,
            converged: r.converged,
            samples_used: r.samples_used,
            gd_runs: r.gd_runs,
            caps_count: r.caps_count,
            lipschitz: r.lipschitz,
            lipschitz_mode: r.lipschitz_mode,
            lipschitz_scope: r.lipschitz_scope,
            metric_mode: r.metric_mode,
            guarantee_claimed: r.guarantee_claimed,
            first_loss: r.first_loss,
            descent_warnings: r.descent_warnings,
        }
    }
}

impl TimestepRecord {
    pub fn metric_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.metric)
    }

    pub fn factor_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.factor)
    }

    /// The reachset `{y : ‖y − c‖_M ≤ δ_guaranteed}`.
    pub fn ellipsoid(&self) -> Ellipsoid {
        Ellipsoid::from_factor(
            DVector::from_column_slice(&self.center),
            self.factor_matrix(),
            self.delta_guaranteed,
        )
    }

    fn check(&self) -> Result<()> {
        let n = self.n;
        if self.center.len() != n || self.metric.len() != n * n || self.factor.len() != n * n {
            return Err(SlrError::Schema(format!(
                "timestep {}: vector and matrix sizes do not match n = {n}",
                self.index
            )));
        }
        let scalars = [
            self.t,
            self.m_bar,
            self.delta_raw,
            self.delta_guaranteed,
            self.mu,
            self.confidence,
            self.lipschitz,
            self.first_loss,
        ];
        let all = scalars
            .iter()
            .chain(&self.center)
            .chain(&self.metric)
            .chain(&self.factor);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(SlrError::Schema(format!(
                "timestep {} holds a non-finite number",
                self.index
            )));
        }
        Ok(())
    }
}

impl ReachtubeReport {
    pub fn new(
        field: &VectorField,
        x0: &[f64],
        delta0: f64,
        t0: f64,
        times: &[f64],
        result: &ReachtubeResult,
    ) -> Self {
        let mut failures: Vec<FailureRecord> = result
            .failures
            .iter()
            .map(|f| FailureRecord {
                index: f.index,
                t: f.t,
                error: f.error.clone(),
            })
            .collect();
        failures.sort_by_key(|f| f.index);
        Self {
            schema: SCHEMA.into(),
            version: SCHEMA_VERSION,
            system: SystemRecord {
                kind: field.kind(),
                n: field.dim(),
                params: field.params(),
            },
            initial: InitialRecord {
                x0: x0.to_vec(),
                delta0,
                t0,
            },
            config: result.config.clone(),
            times: times.to_vec(),
            timesteps: result.timesteps.iter().map(TimestepRecord::from).collect(),
            failures,
            converged: result.all_converged(),
            wall_time_seconds: result.wall_time_seconds,
        }
    }

    /// Structural checks: schema tag, version, sizes and finiteness.
    pub fn check(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(SlrError::Schema(format!(
                "expected schema {SCHEMA:?}, found {:?}",
                self.schema
            )));
        }
        if self.version != SCHEMA_VERSION {
            return Err(SlrError::Schema(format!(
                "unsupported schema version {} (this build reads {SCHEMA_VERSION})",
                self.version
            )));
        }
        let head = [self.initial.delta0, self.initial.t0, self.wall_time_seconds];
        if head
            .iter()
            .chain(&self.initial.x0)
            .chain(&self.system.params)
            .chain(&self.times)
            .any(|v| !v.is_finite())
        {
            return Err(SlrError::Schema("non-finite number in the header".into()));
        }
        for ts in &self.timesteps {
            ts.check()?;
            if ts.n != self.system.n {
                return Err(SlrError::Schema(format!(
                    "timestep {} has n = {}, system has {}",
                    ts.index, ts.n, self.system.n
                )));
            }
            if self.times.get(ts.index) != Some(&ts.t) {
                return Err(SlrError::Schema(format!(
                    "timestep {} at t = {} is not on the time grid",
                    ts.index, ts.t
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.check()?;
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(src: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(src).map_err(|e| SlrError::Schema(e.to_string()))?;
        r.check()?;
        Ok(r)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `points` vertices of the boundary of the projection of
/// `{y : ‖y − c‖_M ≤ δ}` onto coordinates `(i, j)`.
///
/// The projection is the ellipse with shape `δ²·(M⁻¹)_{ij}`; its boundary is
/// `c + L·(cos θ, sin θ)` with `LLᵀ` that shape.
pub fn projection_polyline(
    center: &[f64],
    metric: &DMatrix<f64>,
    radius: f64,
    axes: [usize; 2],
    points: usize,
) -> Result<Vec<[f64; 2]>> {
    let [i, j] = axes;
    let n = center.len();
    if i >= n || j >= n || i == j {
        return Err(SlrError::Config(format!(
            "projection axes ({i}, {j}) invalid for n = {n}"
        )));
    }
    let inv = metric
        .clone()
        .try_inverse()
        .ok_or_else(|| SlrError::Domain("metric is singular".into()))?;
    let (a, b, c) = (inv[(i, i)], inv[(i, j)], inv[(j, j)]);
    let l11 = a.max(0.0).sqrt();
    let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
    let l22 = (c - l21 * l21).max(0.0).sqrt();
    Ok((0..points)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / points as f64;
            let (u, v) = (th.cos(), th.sin());
            [
                center[i] + radius * l11 * u,
                center[j] + radius * (l21 * u + l22 * v),
            ]
        })
        .collect())
}

pub fn projection_csv(ts: &TimestepRecord, axes: [usize; 2], points: usize) -> Result<String> {
    let poly = projection_polyline(
        &ts.center,
        &ts.metric_matrix(),
        ts.delta_guaranteed,
        axes,
        points,
    )?;
    let mut s = format!("t,x{},x{}\n", axes[0], axes[1]);
    for p in poly {
        writeln!(s, "{},{},{}", ts.t, p[0], p[1]).expect("writing to a String");
    }
    Ok(s)
}
