//! Brute-force reference computations: Monte Carlo reachset estimates, dense
//! checks of safety caps and finite-difference Jacobians.
//!
//! Every integration here goes through a separate extrapolation integrator at
//! tighter tolerances, so the checks do not inherit the errors of the solver
//! they check.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::TimestepContext;
use crate::error::{Result, SlrError};
use crate::field::VectorField;
use crate::geometry::{Ellipsoid, SafetyCap};

const REF_RTOL: f64 = 1e-11;
const REF_ATOL: f64 = 1e-13;
/// Step-number sequence of the extrapolation tableau (order 12).
const SEQ: [usize; 6] = [2, 4, 6, 8, 10, 12];

/// Flow samples `χ_{t0}^{t}(x)` at each of the nondecreasing `times`, from an
/// adaptive Gragg–Bulirsch–Stoer extrapolation integrator that shares no code
/// with the solvers in [`crate::integrator`].
pub fn reference_flow_at(
    field: &VectorField,
    x: &[f64],
    t0: f64,
    times: &[f64],
) -> Result<Vec<DVector<f64>>> {
    let n = field.dim();
    if x.len() != n {
        return Err(SlrError::DimensionMismatch {
            what: "initial state",
            expected: n,
            got: x.len(),
        });
    }
    let x_init = x.to_vec();
    let mut y = x.to_vec();
    let mut t = t0;
    let mut h = 0.1_f64;
    let mut f0 = vec![0.0; n];
    let mut z_prev = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut fz = vec![0.0; n];
    let mut table: Vec<Vec<f64>> = vec![vec![0.0; n]; SEQ.len()];
    let mut below = vec![0.0; n];
    let mut out = Vec::with_capacity(times.len());
    for &stop in times {
        if !(stop >= t) {
            return Err(SlrError::Domain(format!(
                "times must be nondecreasing and ≥ t0, got {stop}"
            )));
        }
        while t < stop {
            let last = t + h >= stop;
            let big_h = if last { stop - t } else { h };
            field.eval_raw(&y, &x_init, t, &mut f0);
            for (j, &steps) in SEQ.iter().enumerate() {
                // modified midpoint rule with `steps` substeps
                let hs = big_h / steps as f64;
                for i in 0..n {
                    z_prev[i] = y[i];
                    z[i] = y[i] + hs * f0[i];
                }
                for m in 1..steps {
                    field.eval_raw(&z, &x_init, t + m as f64 * hs, &mut fz);
                    for i in 0..n {
                        let next = z_prev[i] + 2.0 * hs * fz[i];
                        z_prev[i] = z[i];
                        z[i] = next;
                    }
                }
                table[j].copy_from_slice(&z);
            }
            // Aitken–Neville in h², in place; `below` holds row j−1 of the previous column
            for k in 1..SEQ.len() {
                below.copy_from_slice(&table[k - 1]);
                for j in k..SEQ.len() {
                    let ratio = (SEQ[j] as f64 / SEQ[j - k] as f64).powi(2) - 1.0;
                    for i in 0..n {
                        let cur = table[j][i];
                        table[j][i] = cur + (cur - below[i]) / ratio;
                        below[i] = cur;
                    }
                }
            }
            // after the last column `below` is the previous-column value of the last row
            let best = &table[SEQ.len() - 1];
            let err = (best
                .iter()
                .zip(&below)
                .zip(&y)
                .map(|((a, b), c)| ((a - b) / (REF_ATOL + REF_RTOL * a.abs().max(c.abs()))).powi(2))
                .sum::<f64>()
                / n as f64)
                .sqrt();
            if err.is_finite() && err <= 1.0 && best.iter().all(|v| v.is_finite()) {
                y.copy_from_slice(best);
                t = if last { stop } else { t + big_h };
                let grow = if err == 0.0 {
                    4.0
                } else {
                    (0.94 * (0.65 / err).powf(1.0 / 11.0)).clamp(0.2, 4.0)
                };
                if !last || big_h >= h {
                    h = big_h * grow;
                }
            } else {
                h = big_h
                    * if err.is_finite() {
                        (0.94 * (0.65 / err).powf(1.0 / 11.0)).clamp(0.1, 0.9)
                    } else {
                        0.25
                    };
                if h < 1e-12 * t.abs().max(1.0) {
                    return Err(SlrError::IntegrationFailure {
                        t,
                        reason: "reference integrator step underflow".into(),
                    });
                }
            }
        }
        out.push(DVector::from_vec(y.clone()));
    }
    Ok(out)
}

/// Endpoint `χ_{t0}^{t}(x)` from [`reference_flow_at`].
pub fn reference_flow(field: &VectorField, x: &[f64], t0: f64, t: f64) -> Result<DVector<f64>> {
    Ok(reference_flow_at(field, x, t0, &[t])?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub samples: usize,
    pub failures: usize,
    /// Largest observed distance; a lower bound on the true maximum.
    pub max_dist: f64,
    /// Initial point attaining `max_dist`.
    pub argmax: Vec<f64>,
    /// `(q, value)` pairs of the distance distribution.
    pub quantiles: Vec<(f64, f64)>,
}

const QUANTILES: [f64; 5] = [0.5, 0.9, 0.99, 0.999, 1.0];

/// Uniform points on the sphere `‖x − x₀‖ = δ₀`, drawn in order from `seed` so
/// a larger count extends a smaller one.
pub fn uniform_sphere_points(x0: &[f64], delta0: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x0.len();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        out.push(
            g.iter()
                .zip(x0)
                .map(|(v, c)| c + delta0 * v / norm)
                .collect(),
        );
    }
    out
}

/// Monte Carlo estimate of `max ‖χ(x) − c_j‖_{M_j}` over the initial sphere at
/// each time of a grid, integrating every sample once through all times.
#[allow(clippy::too_many_arguments)]
pub fn mc_reachtube(
    field: &VectorField,
    x0: &[f64],
    delta0: f64,
    t0: f64,
    times: &[f64],
    ellipsoids: &[Ellipsoid],
    samples: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    if samples == 0 {
        return Err(SlrError::Oracle(
            "Monte Carlo needs at least one sample".into(),
        ));
    }
    if times.len() != ellipsoids.len() {
        return Err(SlrError::DimensionMismatch {
            what: "ellipsoids per time",
            expected: times.len(),
            got: ellipsoids.len(),
        });
    }
    if times.is_empty() {
        return Ok(Vec::new());
    }
    let points = uniform_sphere_points(x0, delta0, samples, seed);
    let dists: Vec<Option<Vec<f64>>> = points
        .par_iter()
        .map(|x| {
            reference_flow_at(field, x, t0, times).ok().map(|states| {
                states
                    .iter()
                    .zip(ellipsoids)
                    .map(|(y, e)| e.dist(y.as_slice()))
                    .collect()
            })
        })
        .collect();
    let failures = dists.iter().filter(|d| d.is_none()).count();
    if failures * 100 > samples {
        return Err(SlrError::Oracle(format!(
            "{failures} of {samples} Monte Carlo integrations failed"
        )));
    }
    let mut out = Vec::with_capacity(times.len());
    for j in 0..times.len() {
        let mut col: Vec<(usize, f64)> = dists
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.as_ref().map(|v| (i, v[j])))
            .collect();
        // index-ordered reduction: first sample wins ties
        let (arg, max) = col
            .iter()
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, &(i, d)| {
                if d > acc.1 {
                    (i, d)
                } else {
                    acc
                }
            });
        col.sort_by(|a, b| a.1.total_cmp(&b.1));
        let quantiles = QUANTILES
            .iter()
            .map(|&q| {
                let k = ((q * col.len() as f64).ceil() as usize).clamp(1, col.len()) - 1;
                (q, col[k].1)
            })
            .collect();
        out.push(McEstimate {
            samples,
            failures,
            max_dist: max,
            argmax: points.get(arg).cloned().unwrap_or_default(),
            quantiles,
        });
    }
    Ok(out)
}

/// Single-time version of [`mc_reachtube`].
#[allow(clippy::too_many_arguments)]
pub fn mc_reachset(
    field: &VectorField,
    x0: &[f64],
    delta0: f64,
    t0: f64,
    t: f64,
    ellipsoid: &Ellipsoid,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let mut v = mc_reachtube(
        field,
        x0,
        delta0,
        t0,
        &[t],
        std::slice::from_ref(ellipsoid),
        samples,
        seed,
    )?;
    Ok(v.remove(0))
}

/// Points of the cap of chord radius `r` around `anchor` on the sphere
/// `‖x − x₀‖ = δ₀`: the anchor, an even grid on the boundary and interior
/// points spread by geodesic distance.
pub fn cap_grid(anchor: &[f64], r: f64, x0: &[f64], delta0: f64, size: usize) -> Vec<Vec<f64>> {
    let n = x0.len();
    let u: Vec<f64> = anchor
        .iter()
        .zip(x0)
        .map(|(a, c)| (a - c) / delta0)
        .collect();
    let theta = 2.0 * (r / (2.0 * delta0)).min(1.0).asin();
    let at = |alpha: f64, v: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| x0[i] + delta0 * (alpha.cos() * u[i] + alpha.sin() * v[i]))
            .collect()
    };
    let mut out = vec![anchor.to_vec()];
    if size <= 1 || theta == 0.0 {
        return out;
    }
    if n == 2 {
        let v = [-u[1], u[0]];
        let m = size - 1;
        for k in 0..m {
            let alpha = -theta + 2.0 * theta * k as f64 / (m - 1).max(1) as f64;
            out.push(at(alpha, &v));
        }
        return out;
    }
    // tangent directions from a fixed stream, projected off the anchor direction
    let mut rng = ChaCha8Rng::seed_from_u64(0x00c0_ffee);
    let mut tangent = || -> Vec<f64> {
        loop {
            let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let dot: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
            let t: Vec<f64> = g.iter().zip(&u).map(|(a, b)| a - dot * b).collect();
            let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return t.iter().map(|v| v / norm).collect();
            }
        }
    };
    let boundary = (size - 1) / 2;
    for _ in 0..boundary {
        let v = tangent();
        out.push(at(theta, &v));
    }
    let interior = size - 1 - boundary;
    for k in 0..interior {
        let frac = (k as f64 + 0.5) / interior as f64;
        let v = tangent();
        out.push(at(theta * frac.powf(1.0 / (n as f64 - 1.0)), &v));
    }
    out
}

/// Smallest loss over a grid of the cap, and whether it stays above `μ·m̄ − 1e-9`.
pub fn grid_verify_cap(
    cap: &SafetyCap,
    mu: f64,
    m_bar: f64,
    ctx: &TimestepContext,
    grid_size: usize,
) -> Result<(f64, bool)> {
    let grid = cap_grid(
        &cap.anchor_cartesian,
        cap.radius,
        &ctx.x0,
        ctx.delta0,
        grid_size.max(1),
    );
    let mut min_loss = f64::INFINITY;
    for x in &grid {
        let y = reference_flow(&ctx.field, x, ctx.t0, ctx.t)?;
        min_loss = min_loss.min(-ctx.ellipsoid.dist(y.as_slice()));
    }
    Ok((min_loss, min_loss >= mu * m_bar - 1e-9))
}

/// Central-difference Jacobian; column `j` is `(f(x + h e_j) − f(x − h e_j))/2h`.
pub fn fd_jacobian<F>(mut f: F, x: &[f64], h: f64) -> DMatrix<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Finite-difference flow Jacobian `∂χ_{t0}^{t}/∂x` of the reference flow.
pub fn fd_flow_jacobian(
    field: &VectorField,
    x: &[f64],
    t0: f64,
    t: f64,
    h: f64,
) -> Result<DMatrix<f64>> {
    let mut err = None;
    let jac = fd_jacobian(
        |p| match reference_flow(field, p, t0, t) {
            Ok(y) => y.as_slice().to_vec(),
            Err(e) => {
                err = Some(e);
                vec![f64::NAN; x.len()]
            }
        },
        x,
        h,
    );
    match err {
        Some(e) => Err(e),
        None => Ok(jac),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::MetricMode;
    use crate::geometry::PolarPoint;
    use crate::integrator::{solve_flow, IvpSettings};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn reference_flow_closed_forms() {
        let decay = VectorField::linear(DMatrix::from_element(2, 2, 0.0) - DMatrix::identity(2, 2))
            .unwrap();
        let y = reference_flow(&decay, &[1.0, 2.0], 0.0, 1.0).unwrap();
        assert!(
            (y[0] - (-1.0f64).exp()).abs() < 1e-12 && (y[1] - 2.0 * (-1.0f64).exp()).abs() < 1e-12
        );
        let ys = reference_flow_at(
            &VectorField::rotation(),
            &[1.0, 0.0],
            0.0,
            &[FRAC_PI_2, 10.0],
        )
        .unwrap();
        assert!((ys[0][0]).abs() < 1e-11 && (ys[0][1] + 1.0).abs() < 1e-11);
        assert!((ys[1][0] - 10f64.cos()).abs() < 1e-10 && (ys[1][1] + 10f64.sin()).abs() < 1e-10);
        // repeated and initial times return the state itself
        let ys =
            reference_flow_at(&VectorField::rotation(), &[1.0, 0.0], 0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(ys[0].as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn reference_flow_agrees_with_tight_runge_kutta() {
        let f = VectorField::van_der_pol(1.0);
        let a = reference_flow(&f, &[2.0, 0.0], 0.0, 5.0).unwrap();
        let b = solve_flow(&f, &[2.0, 0.0], 0.0, 5.0, &IvpSettings::dp45(1e-12, 1e-14)).unwrap();
        assert!((a - b.final_state()).amax() < 1e-9);
    }

    #[test]
    fn fd_of_linear_map() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let j = fd_jacobian(
            |x| (&a * DVector::from_column_slice(x)).as_slice().to_vec(),
            &[0.3, 0.1, -2.0],
            1e-4,
        );
        assert!((j - a).abs().max() < 1e-10);
    }

    #[test]
    fn fd_of_rotation_flow() {
        let j =
            fd_flow_jacobian(&VectorField::rotation(), &[0.2, 0.4], 0.0, FRAC_PI_2, 1e-5).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((j - want).abs().max() < 1e-6);
    }

    #[test]
    fn zero_field_mc_is_radius() {
        let f = VectorField::zero(3).unwrap();
        let e = Ellipsoid::identity(DVector::from_vec(vec![1.0, 2.0, 3.0]), 0.0);
        let est = mc_reachset(&f, &[1.0, 2.0, 3.0], 0.2, 0.0, 1.0, &e, 500, 1).unwrap();
        assert!((est.max_dist - 0.2).abs() < 1e-15);
        assert_eq!(est.failures, 0);
    }

    #[test]
    fn rotation_mc_is_radius() {
        let f = VectorField::rotation();
        let c = reference_flow(&f, &[1.0, 1.0], 0.0, 2.3).unwrap();
        let e = Ellipsoid::identity(c, 0.0);
        let est = mc_reachset(&f, &[1.0, 1.0], 0.1, 0.0, 2.3, &e, 1000, 2).unwrap();
        assert!((est.max_dist - 0.1).abs() < 1e-9);
    }

    #[test]
    fn more_samples_never_lower_the_maximum() {
        let f = VectorField::van_der_pol(1.0);
        let c = reference_flow(&f, &[2.0, 0.0], 0.0, 1.0).unwrap();
        let e = Ellipsoid::identity(c, 0.0);
        let mut prev = 0.0;
        for n in [10, 100, 1000] {
            let est = mc_reachset(&f, &[2.0, 0.0], 0.05, 0.0, 1.0, &e, n, 3).unwrap();
            assert!(est.max_dist >= prev);
            prev = est.max_dist;
        }
    }

    #[test]
    fn zero_samples_rejected() {
        let f = VectorField::rotation();
        let e = Ellipsoid::identity(DVector::zeros(2), 0.0);
        assert!(mc_reachset(&f, &[0.0, 0.0], 0.1, 0.0, 1.0, &e, 0, 0).is_err());
    }

    #[test]
    fn cap_grid_points_lie_in_cap() {
        for n in 2..=4 {
            let x0 = vec![0.5; n];
            let mut anchor = x0.clone();
            anchor[n - 1] += 0.3;
            let grid = cap_grid(&anchor, 0.1, &x0, 0.3, 200);
            assert_eq!(grid.len(), 200);
            for p in &grid {
                let d: f64 = p
                    .iter()
                    .zip(&anchor)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let on: f64 = p
                    .iter()
                    .zip(&x0)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d <= 0.1 + 1e-12 && (on - 0.3).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_radius_cap_checks_anchor_only() {
        let ctx = TimestepContext::new(
            &VectorField::zero(2).unwrap(),
            &[0.0, 0.0],
            0.1,
            0.0,
            1.0,
            MetricMode::Identity,
            &IvpSettings::default(),
        )
        .unwrap();
        let cap = SafetyCap {
            anchor: PolarPoint::new(vec![0.0]),
            anchor_cartesian: vec![0.1, 0.0],
            radius: 0.0,
            loss_at_anchor: -0.1,
        };
        let (min, pass) = grid_verify_cap(&cap, 1.0, -0.1, &ctx, 1000).unwrap();
        assert!((min + 0.1).abs() < 1e-15 && pass);
        // constant loss −δ₀ passes exactly when μ·m̄ ≤ −δ₀
        let (_, pass) = grid_verify_cap(&cap, 1.0, -0.09, &ctx, 10).unwrap();
        assert!(!pass);
    }
}
