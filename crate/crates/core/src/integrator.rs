//! Explicit Runge–Kutta solvers for the flow `χ_{t0}^{t}(x)` and for the
//! augmented state `[x, F]` of the variational equation `F' = (∂_x f) F`,
//! `F(t0) = I`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlrError};
use crate::field::VectorField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Rk4Fixed,
    DormandPrince45,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IvpSettings {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Largest step; for fixed-step RK4 this is the step length. Serialized
    /// as `null` when unbounded.
    #[serde(with = "unbounded_as_null")]
    pub max_step: f64,
    /// Record every accepted step instead of only the endpoints.
    pub dense_output: bool,
}

impl Default for IvpSettings {
    fn default() -> Self {
        Self {
            method: Method::DormandPrince45,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: f64::INFINITY,
            dense_output: false,
        }
    }
}

mod unbounded_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl IvpSettings {
    pub fn dp45(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol,
            ..Self::default()
        }
    }

    pub fn rk4(step: f64) -> Self {
        Self {
            method: Method::Rk4Fixed,
            max_step: step,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            errs.push(format!("rel_tol must be > 0, got {}", self.rel_tol));
        }
        if !(self.abs_tol > 0.0 && self.abs_tol.is_finite()) {
            errs.push(format!("abs_tol must be > 0, got {}", self.abs_tol));
        }
        if !(self.max_step > 0.0) {
            errs.push(format!("max_step must be > 0, got {}", self.max_step));
        }
        if self.method == Method::Rk4Fixed && !self.max_step.is_finite() {
            errs.push("rk4-fixed needs a finite max_step".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SlrError::Validation(errs))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states
            .last()
            .expect("trajectory has at least the initial state")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivitySolution {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub sensitivities: Vec<DMatrix<f64>>,
}

impl SensitivitySolution {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("non-empty solution")
    }

    pub fn final_sensitivity(&self) -> &DMatrix<f64> {
        self.sensitivities.last().expect("non-empty solution")
    }
}

// Dormand–Prince 5(4) tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const MAX_STEPS: usize = 1_000_000;

/// Integrates `y' = rhs(t, y)` from `t0` through each of the increasing `stops`,
/// calling `record(t, y)` at `t0`, at every stop and, with dense output, at
/// every accepted step.
pub(crate) fn integrate<R, O>(
    mut rhs: R,
    y0: &[f64],
    t0: f64,
    stops: &[f64],
    settings: &IvpSettings,
    mut record: O,
) -> Result<()>
where
    R: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &[f64]),
{
    settings.validate()?;
    if let Some(bad) = std::iter::once(&t0)
        .chain(stops)
        .collect::<Vec<_>>()
        .windows(2)
        .find(|w| w[1] < w[0])
    {
        return Err(SlrError::Domain(format!(
            "integration times must be nondecreasing ({} then {})",
            bad[0], bad[1]
        )));
    }
    let mut y = y0.to_vec();
    record(t0, &y);
    match settings.method {
        Method::Rk4Fixed => rk4_run(&mut rhs, &mut y, t0, stops, settings, &mut record),
        Method::DormandPrince45 => dp45_run(&mut rhs, &mut y, t0, stops, settings, &mut record),
    }
}

fn rk4_run<R, O>(
    rhs: &mut R,
    y: &mut [f64],
    t0: f64,
    stops: &[f64],
    settings: &IvpSettings,
    record: &mut O,
) -> Result<()>
where
    R: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &[f64]),
{
    let d = y.len();
    let mut k = vec![vec![0.0; d]; 4];
    let mut tmp = vec![0.0; d];
    let mut t = t0;
    for &stop in stops {
        let span = stop - t;
        if span > 0.0 {
            let steps = (span / settings.max_step).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for s in 0..steps {
                let ts = t + s as f64 * h;
                rhs(ts, y, &mut k[0]);
                for i in 0..d {
                    tmp[i] = y[i] + 0.5 * h * k[0][i];
                }
                rhs(ts + 0.5 * h, &tmp, &mut k[1]);
                for i in 0..d {
                    tmp[i] = y[i] + 0.5 * h * k[1][i];
                }
                rhs(ts + 0.5 * h, &tmp, &mut k[2]);
                for i in 0..d {
                    tmp[i] = y[i] + h * k[2][i];
                }
                rhs(ts + h, &tmp, &mut k[3]);
                for i in 0..d {
                    y[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
                }
                if !y.iter().all(|v| v.is_finite()) {
                    return Err(SlrError::IntegrationFailure {
                        t: ts,
                        reason: "non-finite state".into(),
                    });
                }
                if settings.dense_output && s + 1 < steps {
                    record(ts + h, y);
                }
            }
        }
        t = stop;
        record(t, y);
    }
    Ok(())
}

fn error_norm(y: &[f64], y_new: &[f64], err: &[f64], settings: &IvpSettings) -> f64 {
    let sum: f64 = y
        .iter()
        .zip(y_new)
        .zip(err)
        .map(|((a, b), e)| {
            let sc = settings.abs_tol + settings.rel_tol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / y.len() as f64).sqrt()
}

fn initial_step<R: FnMut(f64, &[f64], &mut [f64])>(
    rhs: &mut R,
    t: f64,
    y: &[f64],
    f0: &[f64],
    settings: &IvpSettings,
    span: f64,
) -> f64 {
    let d = y.len();
    let scale: Vec<f64> = y
        .iter()
        .map(|v| settings.abs_tol + settings.rel_tol * v.abs())
        .collect();
    let rms = |v: &[f64]| -> f64 {
        (v.iter()
            .zip(&scale)
            .map(|(a, s)| (a / s).powi(2))
            .sum::<f64>()
            / d as f64)
            .sqrt()
    };
    let d0 = rms(y);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; d];
    rhs(t + h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    (100.0 * h0).min(h1).min(span).min(settings.max_step)
}

fn dp45_run<R, O>(
    rhs: &mut R,
    y: &mut Vec<f64>,
    t0: f64,
    stops: &[f64],
    settings: &IvpSettings,
    record: &mut O,
) -> Result<()>
where
    R: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &[f64]),
{
    let d = y.len();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; d]; 7];
    let mut tmp = vec![0.0; d];
    let mut y_new = vec![0.0; d];
    let mut err = vec![0.0; d];
    let mut t = t0;
    let end = stops.last().copied().unwrap_or(t0);
    rhs(t, y, &mut k[0]);
    let mut h = if end > t0 {
        initial_step(rhs, t, y, &k[0].clone(), settings, end - t0)
    } else {
        0.0
    };
    let mut taken = 0usize;
    let mut last_rejected = false;

    for &stop in stops {
        while t < stop {
            taken += 1;
            if taken > MAX_STEPS {
                return Err(SlrError::IntegrationFailure {
                    t,
                    reason: format!("exceeded {MAX_STEPS} steps"),
                });
            }
            let min_step = 16.0 * f64::EPSILON * t.abs().max(1.0);
            let mut hs = h.min(settings.max_step);
            let hits_stop = t + hs >= stop || stop - (t + hs) < min_step;
            if hits_stop {
                hs = stop - t;
            }
            if hs < min_step && !hits_stop {
                return Err(SlrError::IntegrationFailure {
                    t,
                    reason: format!("step size underflow (h = {hs:e})"),
                });
            }

            let stage = |tmp: &mut [f64], coeffs: &[(usize, f64)], k: &[Vec<f64>], y: &[f64]| {
                for i in 0..d {
                    let mut acc = 0.0;
                    for &(j, a) in coeffs {
                        acc += a * k[j][i];
                    }
                    tmp[i] = y[i] + hs * acc;
                }
            };
            stage(&mut tmp, &[(0, A21)], &k, y);
            rhs(t + C2 * hs, &tmp, &mut k[1]);
            stage(&mut tmp, &[(0, A31), (1, A32)], &k, y);
            rhs(t + C3 * hs, &tmp, &mut k[2]);
            stage(&mut tmp, &[(0, A41), (1, A42), (2, A43)], &k, y);
            rhs(t + C4 * hs, &tmp, &mut k[3]);
            stage(&mut tmp, &[(0, A51), (1, A52), (2, A53), (3, A54)], &k, y);
            rhs(t + C5 * hs, &tmp, &mut k[4]);
            stage(
                &mut tmp,
                &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)],
                &k,
                y,
            );
            rhs(t + hs, &tmp, &mut k[5]);
            stage(
                &mut y_new,
                &[(0, A71), (2, A73), (3, A74), (4, A75), (5, A76)],
                &k,
                y,
            );
            rhs(t + hs, &y_new, &mut k[6]);
            for i in 0..d {
                err[i] = hs
                    * (E1 * k[0][i]
                        + E3 * k[2][i]
                        + E4 * k[3][i]
                        + E5 * k[4][i]
                        + E6 * k[5][i]
                        + E7 * k[6][i]);
            }
            let en = error_norm(y, &y_new, &err, settings);
            if !en.is_finite() {
                if hs <= min_step {
                    return Err(SlrError::IntegrationFailure {
                        t,
                        reason: "non-finite state".into(),
                    });
                }
                h = 0.25 * hs;
                last_rejected = true;
                continue;
            }
            if en <= 1.0 {
                t = if hits_stop { stop } else { t + hs };
                std::mem::swap(y, &mut y_new);
                k.swap(0, 6);
                let mut factor = if en == 0.0 { 10.0 } else { 0.9 * en.powf(-0.2) };
                factor = factor.clamp(0.2, 10.0);
                if last_rejected {
                    factor = factor.min(1.0);
                }
                // a step shortened to land on a stop says nothing about the next step size
                if !hits_stop || hs >= h {
                    h = hs * factor;
                }
                last_rejected = false;
                if settings.dense_output && t < stop {
                    record(t, y);
                }
            } else {
                if hs <= min_step {
                    return Err(SlrError::IntegrationFailure {
                        t,
                        reason: format!("step size underflow (h = {hs:e})"),
                    });
                }
                h = hs * (0.9 * en.powf(-0.2)).max(0.2);
                last_rejected = true;
            }
        }
        record(stop, y);
    }
    Ok(())
}

fn check_input(field: &VectorField, x_init: &[f64], t0: f64, t1: f64) -> Result<()> {
    if x_init.len() != field.dim() {
        return Err(SlrError::DimensionMismatch {
            what: "initial state",
            expected: field.dim(),
            got: x_init.len(),
        });
    }
    if !(t1 >= t0) {
        return Err(SlrError::Domain(format!("t1 = {t1} precedes t0 = {t0}")));
    }
    if !x_init.iter().all(|v| v.is_finite()) {
        return Err(SlrError::Domain("initial state is not finite".into()));
    }
    Ok(())
}

/// Samples of `χ_{t0}^{t}(x_init)` for `t ∈ [t0, t1]`; `t1 = t0` returns `x_init`.
pub fn solve_flow(
    field: &VectorField,
    x_init: &[f64],
    t0: f64,
    t1: f64,
    settings: &IvpSettings,
) -> Result<Trajectory> {
    check_input(field, x_init, t0, t1)?;
    let mut times = Vec::new();
    let mut states = Vec::new();
    let x0 = x_init.to_vec();
    integrate(
        |t, y, dy| field.eval_raw(y, &x0, t, dy),
        x_init,
        t0,
        &[t1],
        settings,
        |t, y| {
            // the stop at t1 = t0 would duplicate the initial record
            if times.last() != Some(&t) {
                times.push(t);
                states.push(DVector::from_column_slice(y));
            }
        },
    )?;
    Ok(Trajectory { times, states })
}

/// States at each of the nondecreasing `times` (all ≥ `t0`) from one integration.
pub fn solve_flow_at(
    field: &VectorField,
    x_init: &[f64],
    t0: f64,
    times: &[f64],
    settings: &IvpSettings,
) -> Result<Vec<DVector<f64>>> {
    check_input(field, x_init, t0, times.last().copied().unwrap_or(t0))?;
    let x0 = x_init.to_vec();
    let mut out = Vec::with_capacity(times.len());
    let mut first = true;
    integrate(
        |t, y, dy| field.eval_raw(y, &x0, t, dy),
        x_init,
        t0,
        times,
        &IvpSettings {
            dense_output: false,
            ..*settings
        },
        |_, y| {
            if first {
                first = false;
            } else {
                out.push(DVector::from_column_slice(y));
            }
        },
    )?;
    Ok(out)
}

/// Jointly integrates `x` and `F = ∂χ/∂x_init` as one `n + n²` system, so the
/// Jacobian in `F' = J(x(t)) F` always sees the current state.
pub fn solve_flow_with_sensitivity(
    field: &VectorField,
    x_init: &[f64],
    t0: f64,
    t1: f64,
    settings: &IvpSettings,
) -> Result<SensitivitySolution> {
    check_input(field, x_init, t0, t1)?;
    if field.depends_on_initial() {
        return Err(SlrError::Unsupported(
            "sensitivity of fields that read x(0) needs an extra ∂f/∂x(0) term".into(),
        ));
    }
    let n = field.dim();
    let mut y0 = x_init.to_vec();
    let eye = DMatrix::<f64>::identity(n, n);
    y0.extend(eye.iter());
    let x0 = x_init.to_vec();
    let mut jac = vec![0.0; n * n];
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let (x, f) = y.split_at(n);
        let (dx, df) = dy.split_at_mut(n);
        field.eval_raw(x, &x0, t, dx);
        field.jacobian_raw(x, &x0, t, &mut jac);
        for i in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += jac[i * n + k] * f[k * n + c];
                }
                df[i * n + c] = acc;
            }
        }
    };
    let mut sol = SensitivitySolution {
        times: Vec::new(),
        states: Vec::new(),
        sensitivities: Vec::new(),
    };
    integrate(rhs, &y0, t0, &[t1], settings, |t, y| {
        if sol.times.last() == Some(&t) {
            return;
        }
        sol.times.push(t);
        sol.states.push(DVector::from_column_slice(&y[..n]));
        sol.sensitivities
            .push(DMatrix::from_row_slice(n, n, &y[n..]));
    })?;
    // exact initial condition regardless of how the identity was flattened
    sol.sensitivities[0] = eye;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn scalar_decay() {
        let f = VectorField::linear(DMatrix::from_element(1, 1, -1.0)).unwrap();
        let s = IvpSettings::default();
        let tr = solve_flow(&f, &[1.0], 0.0, 1.0, &s).unwrap();
        let want = (-1.0f64).exp();
        assert!((tr.final_state()[0] - want).abs() <= 10.0 * s.rel_tol * want);
        assert_eq!(tr.times, vec![0.0, 1.0]);
    }

    #[test]
    fn rotation_quarter_turn() {
        let f = VectorField::rotation();
        let tr = solve_flow(&f, &[1.0, 0.0], 0.0, FRAC_PI_2, &IvpSettings::default()).unwrap();
        let x = tr.final_state();
        assert!(x[0].abs() < 1e-7 && (x[1] + 1.0).abs() < 1e-7, "{x}");
    }

    #[test]
    fn zero_span_returns_input() {
        let f = VectorField::van_der_pol(1.0);
        let tr = solve_flow(&f, &[2.0, 0.5], 1.0, 1.0, &IvpSettings::default()).unwrap();
        assert_eq!(tr.states.len(), 1);
        assert_eq!(tr.final_state().as_slice(), &[2.0, 0.5]);
        let s = solve_flow_with_sensitivity(&f, &[2.0, 0.5], 1.0, 1.0, &IvpSettings::default())
            .unwrap();
        assert_eq!(s.final_sensitivity(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn rotation_sensitivity_is_rotation_matrix() {
        let f = VectorField::rotation();
        let s =
            solve_flow_with_sensitivity(&f, &[0.3, -0.2], 0.0, FRAC_PI_2, &IvpSettings::default())
                .unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((s.final_sensitivity() - want).abs().max() < 1e-7);
        assert_eq!(s.sensitivities[0], DMatrix::identity(2, 2));
    }

    #[test]
    fn dense_output_records_increasing_times() {
        let f = VectorField::van_der_pol(1.0);
        let s = IvpSettings {
            dense_output: true,
            ..IvpSettings::default()
        };
        let tr = solve_flow(&f, &[2.0, 0.0], 0.0, 3.0, &s).unwrap();
        assert!(tr.times.len() > 3);
        assert!(tr.times.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*tr.times.last().unwrap(), 3.0);
    }

    #[test]
    fn checkpoints_match_separate_solves() {
        let f = VectorField::van_der_pol(1.0);
        let s = IvpSettings::dp45(1e-11, 1e-13);
        let pts = solve_flow_at(&f, &[2.0, 0.0], 0.0, &[0.5, 1.0, 2.0], &s).unwrap();
        for (t, p) in [0.5, 1.0, 2.0].iter().zip(&pts) {
            let single = solve_flow(&f, &[2.0, 0.0], 0.0, *t, &s).unwrap();
            assert!((single.final_state() - p).norm() < 1e-9);
        }
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let f = VectorField::rotation();
        let err = |h: f64| {
            let tr = solve_flow(&f, &[1.0, 0.0], 0.0, 1.0, &IvpSettings::rk4(h)).unwrap();
            let x = tr.final_state();
            ((x[0] - 1f64.cos()).powi(2) + (x[1] + 1f64.sin()).powi(2)).sqrt()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 2.0, "{ratio}");
    }

    #[test]
    fn blow_up_reports_last_time() {
        // x' = x² from x = 1 blows up at t = 1
        #[derive(Debug)]
        struct Riccati;
        impl crate::field::Dynamics for Riccati {
            fn dim(&self) -> usize {
                1
            }
            fn eval_into(&self, x: &[f64], _: &[f64], _: f64, out: &mut [f64]) {
                out[0] = x[0] * x[0];
            }
            fn jacobian_into(&self, x: &[f64], _: &[f64], _: f64, out: &mut [f64]) {
                out[0] = 2.0 * x[0];
            }
        }
        let f = VectorField::new(Riccati);
        match solve_flow(&f, &[1.0], 0.0, 2.0, &IvpSettings::default()) {
            Err(SlrError::IntegrationFailure { t, .. }) => {
                assert!(t > 0.9 && t < 1.0 + 1e-6, "{t}")
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn invalid_settings_rejected() {
        let f = VectorField::rotation();
        let bad = IvpSettings {
            rel_tol: 0.0,
            ..IvpSettings::default()
        };
        assert!(matches!(
            solve_flow(&f, &[1.0, 0.0], 0.0, 1.0, &bad),
            Err(SlrError::Validation(_))
        ));
    }
}
