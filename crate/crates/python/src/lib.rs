//! Python module `slr`.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use slr_core::geometry::{cap_probability_exact, cap_probability_lower_bound, Ellipsoid};
use slr_core::runner::{self, RunOptions};
use slr_core::{
    Activation, LipschitzMode, LipschitzScope, MetricMode, NeuralFieldSpec, PlanBound,
    ReachProblem, ReachtubeReport, SlrConfig, SlrError,
};

fn err(e: SlrError) -> PyErr {
    match e {
        SlrError::Config(_) | SlrError::Validation(_) | SlrError::DimensionMismatch { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

#[pyclass(name = "VectorField", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyField(slr_core::VectorField);

#[pymethods]
impl PyField {
    #[staticmethod]
    fn rotation() -> Self {
        Self(slr_core::VectorField::rotation())
    }

    #[staticmethod]
    #[pyo3(signature = (mu = 1.0))]
    fn van_der_pol(mu: f64) -> Self {
        Self(slr_core::VectorField::van_der_pol(mu))
    }

    #[staticmethod]
    fn linear(matrix: Vec<Vec<f64>>) -> PyResult<Self> {
        let n = matrix.len();
        if matrix.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err("matrix must be square"));
        }
        let flat: Vec<f64> = matrix.into_iter().flatten().collect();
        slr_core::VectorField::linear(DMatrix::from_row_slice(n, n, &flat))
            .map(Self)
            .map_err(err)
    }

    /// Dense tanh/sigmoid network with random weights from `seed`.
    #[staticmethod]
    #[pyo3(signature = (widths, activation = "tanh", scale = 1.0, seed = 0))]
    fn neural_seeded(
        widths: Vec<usize>,
        activation: &str,
        scale: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let act = match activation {
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown activation {other:?}"
                )))
            }
        };
        if widths.len() < 2 || widths[0] != widths[widths.len() - 1] {
            return Err(PyValueError::new_err(
                "widths must start and end with the state dimension",
            ));
        }
        slr_core::VectorField::neural(NeuralFieldSpec::seeded(&widths, act, scale, seed))
            .map(Self)
            .map_err(err)
    }

    /// Network from a text weights file.
    #[staticmethod]
    fn neural_from_file(path: PathBuf) -> PyResult<Self> {
        let spec = slr_core::weights::load_text(&path).map_err(err)?;
        slr_core::VectorField::neural(spec).map(Self).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[pyo3(signature = (x, t = 0.0))]
    fn eval(&self, x: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        Ok(self.0.eval(&x, &x, t).map_err(err)?.as_slice().to_vec())
    }

    #[pyo3(signature = (x, t = 0.0))]
    fn jacobian(&self, x: Vec<f64>, t: f64) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.0.jacobian(&x, &x, t).map_err(err)?))
    }

    fn __repr__(&self) -> String {
        format!(
            "VectorField(kind={:?}, dim={})",
            self.0.kind(),
            self.0.dim()
        )
    }
}

#[pyclass(name = "TimestepResult", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyTimestep {
    index: usize,
    t: f64,
    center: Vec<f64>,
    metric: Vec<Vec<f64>>,
    factor: Vec<Vec<f64>>,
    m_bar: f64,
    delta_raw: f64,
    delta_guaranteed: f64,
    mu: f64,
    confidence: f64,
    converged: bool,
    samples_used: usize,
    gd_runs: usize,
    caps_count: usize,
    lipschitz: f64,
    first_loss: f64,
}

#[pymethods]
impl PyTimestep {
    fn __repr__(&self) -> String {
        format!(
            "TimestepResult(t={}, delta_guaranteed={:e}, confidence={:.4}, samples={})",
            self.t, self.delta_guaranteed, self.confidence, self.samples_used
        )
    }
}

#[pyclass(name = "ReachtubeResult", frozen)]
struct PyReachtube {
    report: ReachtubeReport,
    timesteps: Vec<PyTimestep>,
}

#[pymethods]
impl PyReachtube {
    #[getter]
    fn timesteps(&self) -> Vec<PyTimestep> {
        self.timesteps.clone()
    }

    /// `(index, t, message)` for every timestep that failed.
    #[getter]
    fn failures(&self) -> Vec<(usize, f64, String)> {
        self.report
            .failures
            .iter()
            .map(|f| (f.index, f.t, f.error.clone()))
            .collect()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.report.converged
    }

    /// The versioned result document `slr run` writes.
    fn to_json(&self) -> PyResult<String> {
        self.report.to_json().map_err(err)
    }
}

fn parse_enum<T: serde_like::FromName>(name: &str, what: &str) -> PyResult<T> {
    T::from_name(name).ok_or_else(|| PyValueError::new_err(format!("unknown {what} {name:?}")))
}

mod serde_like {
    use super::*;

    pub trait FromName: Sized {
        fn from_name(s: &str) -> Option<Self>;
    }

    impl FromName for MetricMode {
        fn from_name(s: &str) -> Option<Self> {
            match s {
                "optimal" => Some(MetricMode::Optimal),
                "identity" => Some(MetricMode::Identity),
                _ => None,
            }
        }
    }

    impl FromName for LipschitzMode {
        fn from_name(s: &str) -> Option<Self> {
            match s {
                "rigorous" => Some(LipschitzMode::Rigorous),
                "sampled" => Some(LipschitzMode::Sampled),
                _ => None,
            }
        }
    }

    impl FromName for LipschitzScope {
        fn from_name(s: &str) -> Option<Self> {
            match s {
                "global" => Some(LipschitzScope::Global),
                "per-cap" => Some(LipschitzScope::PerCap),
                _ => None,
            }
        }
    }
}

/// Reachtube of the ball `B(x0, delta0)` over `times`.
#[pyfunction]
#[pyo3(signature = (
    field, x0, delta0, times, *, t0 = 0.0, gamma = 0.05, mu = 1.05, mu_schedule = None,
    seed = 0, metric_mode = "optimal", lipschitz_mode = "rigorous", lipschitz_scope = "global",
    max_samples = 100_000, workers = 1
))]
#[allow(clippy::too_many_arguments)]
fn run_reachtube(
    py: Python<'_>,
    field: &PyField,
    x0: Vec<f64>,
    delta0: f64,
    times: Vec<f64>,
    t0: f64,
    gamma: f64,
    mu: f64,
    mu_schedule: Option<Vec<f64>>,
    seed: u64,
    metric_mode: &str,
    lipschitz_mode: &str,
    lipschitz_scope: &str,
    max_samples: usize,
    workers: usize,
) -> PyResult<PyReachtube> {
    let cfg = SlrConfig {
        gamma,
        mu,
        mu_schedule: mu_schedule.unwrap_or_default(),
        seed,
        metric_mode: parse_enum(metric_mode, "metric mode")?,
        lipschitz_mode: parse_enum(lipschitz_mode, "Lipschitz mode")?,
        lipschitz_scope: parse_enum(lipschitz_scope, "Lipschitz scope")?,
        max_samples,
        ..SlrConfig::default()
    };
    let problem = ReachProblem {
        field: field.0.clone(),
        x0: x0.clone(),
        delta0,
        t0,
    };
    let result = py
        .detach(|| slr_core::run_reachtube(&problem, &times, &cfg, workers))
        .map_err(err)?;
    let report = ReachtubeReport::new(&field.0, &x0, delta0, t0, &times, &result);
    let timesteps = result
        .timesteps
        .iter()
        .map(|r| PyTimestep {
            index: r.index,
            t: r.t,
            center: r.center.clone(),
            metric: rows(&r.metric),
            factor: rows(&r.factor),
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
            first_loss: r.first_loss,
        })
        .collect();
    Ok(PyReachtube { report, timesteps })
}

/// Largest Monte Carlo distance `‖χ(x) − c‖_M` over `samples` uniform points
/// of the initial sphere, with `metric` given as rows.
#[pyfunction]
#[pyo3(signature = (field, x0, delta0, t, center, metric, samples = 100_000, seed = 0, t0 = 0.0))]
#[allow(clippy::too_many_arguments)]
fn mc_max_distance(
    py: Python<'_>,
    field: &PyField,
    x0: Vec<f64>,
    delta0: f64,
    t: f64,
    center: Vec<f64>,
    metric: Vec<Vec<f64>>,
    samples: usize,
    seed: u64,
    t0: f64,
) -> PyResult<f64> {
    let n = center.len();
    let flat: Vec<f64> = metric.into_iter().flatten().collect();
    if flat.len() != n * n {
        return Err(PyValueError::new_err("metric must be n × n"));
    }
    let ell = Ellipsoid::new(
        DVector::from_vec(center),
        DMatrix::from_row_slice(n, n, &flat),
        0.0,
    )
    .map_err(err)?;
    let est = py
        .detach(|| slr_core::oracle::mc_reachset(&field.0, &x0, delta0, t0, t, &ell, samples, seed))
        .map_err(err)?;
    Ok(est.max_dist)
}

/// Sample budget `N_max`, or `None` when no finite budget exists.
#[pyfunction]
fn plan_iterations(
    gamma: f64,
    mu: f64,
    lipschitz: f64,
    first_loss: f64,
    delta0: f64,
    n: usize,
) -> PyResult<Option<u64>> {
    let p = slr_core::plan_iterations(gamma, mu, lipschitz, first_loss, delta0, n).map_err(err)?;
    Ok(match p.n_max {
        PlanBound::Finite(k) => Some(k),
        PlanBound::Unbounded => None,
    })
}

/// Probability that a uniform point of the sphere lies in a cap of chord radius `r`.
#[pyfunction]
fn cap_probability(r: f64, delta0: f64, n: usize) -> PyResult<f64> {
    cap_probability_exact(r, delta0, n).map_err(err)
}

#[pyfunction]
fn cap_probability_bound(r: f64, delta0: f64, n: usize) -> PyResult<f64> {
    cap_probability_lower_bound(r, delta0, n).map_err(err)
}

/// Runs a config file like `slr run`; returns `(exit_code, result_path)`.
#[pyfunction]
#[pyo3(signature = (config, out_dir = None, seed = None, workers = None))]
fn run_config(
    py: Python<'_>,
    config: PathBuf,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
) -> PyResult<(i32, String)> {
    let cfg = slr_core::parse_config(&config).map_err(err)?;
    let out = py
        .detach(|| {
            runner::run(
                &cfg,
                &RunOptions {
                    out_dir,
                    seed,
                    workers,
                },
            )
        })
        .map_err(err)?;
    Ok((out.exit_code, out.result_path.display().to_string()))
}

/// Monte Carlo check of a result file; `(t, contained, margin)` per timestep.
#[pyfunction]
#[pyo3(signature = (config, result, mc_samples = 100_000, seed = 0))]
fn verify(
    py: Python<'_>,
    config: PathBuf,
    result: PathBuf,
    mc_samples: usize,
    seed: u64,
) -> PyResult<Vec<(f64, bool, f64)>> {
    let cfg = slr_core::parse_config(&config).map_err(err)?;
    let rep = py
        .detach(|| runner::verify(&cfg, &result, mc_samples, seed))
        .map_err(err)?;
    Ok(rep
        .verdicts
        .iter()
        .map(|v| (v.t, v.contained, v.margin))
        .collect())
}

#[pymodule]
fn slr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyField>()?;
    m.add_class::<PyTimestep>()?;
    m.add_class::<PyReachtube>()?;
    m.add_function(wrap_pyfunction!(run_reachtube, m)?)?;
    m.add_function(wrap_pyfunction!(mc_max_distance, m)?)?;
    m.add_function(wrap_pyfunction!(plan_iterations, m)?)?;
    m.add_function(wrap_pyfunction!(cap_probability, m)?)?;
    m.add_function(wrap_pyfunction!(cap_probability_bound, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
