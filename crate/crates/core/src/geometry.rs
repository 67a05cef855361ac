//! Hyperspherical coordinates on the initial sphere, metric ellipsoids,
//! spherical-cap probabilities and the coverage set of safety caps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, SlrError};

/// Angles `φ ∈ ℝⁿ⁻¹` of a point on the sphere `‖x − x₀‖ = δ₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarPoint {
    pub angles: Vec<f64>,
}

impl PolarPoint {
    pub fn new(angles: Vec<f64>) -> Self {
        Self { angles }
    }

    /// State dimension `n = len(φ) + 1`.
    pub fn dim(&self) -> usize {
        self.angles.len() + 1
    }

    /// Same point with `φ₁..φₙ₋₂ ∈ [0, π]` and `φₙ₋₁ ∈ [0, 2π)`.
    pub fn canonical(&self) -> PolarPoint {
        let n = self.dim();
        let unit = unit_direction(&self.angles);
        direction_to_angles(&unit, n)
    }
}

fn check_dim(n: usize) -> Result<()> {
    if n < 2 {
        Err(SlrError::UnsupportedDimension(n))
    } else {
        Ok(())
    }
}

/// Point on the unit sphere for the given angles.
fn unit_direction(phi: &[f64]) -> Vec<f64> {
    let n = phi.len() + 1;
    let mut out = vec![0.0; n];
    let mut sin_prod = 1.0;
    for k in 0..n {
        out[k] = if k + 1 < n {
            sin_prod * phi[k].cos()
        } else {
            sin_prod
        };
        if k + 1 < n {
            sin_prod *= phi[k].sin();
        }
    }
    out
}

fn direction_to_angles(u: &[f64], n: usize) -> PolarPoint {
    let mut angles = vec![0.0; n - 1];
    // tail norms ‖u_{k..n}‖, accumulated from the end to avoid cancellation
    let mut tail = vec![0.0_f64; n + 1];
    for k in (0..n).rev() {
        tail[k] = tail[k + 1].hypot(u[k]);
    }
    for k in 0..n.saturating_sub(2) {
        angles[k] = tail[k + 1].atan2(u[k]);
    }
    let last = u[n - 1].atan2(u[n - 2]);
    angles[n - 2] = if last < 0.0 {
        let wrapped = last + std::f64::consts::TAU;
        // a tiny negative angle can round up to exactly 2π
        if wrapped >= std::f64::consts::TAU {
            0.0
        } else {
            wrapped
        }
    } else {
        last
    };
    PolarPoint { angles }
}

pub fn polar_to_cartesian(phi: &PolarPoint, x0: &[f64], delta0: f64) -> Result<DVector<f64>> {
    let n = phi.dim();
    check_dim(n)?;
    if x0.len() != n {
        return Err(SlrError::DimensionMismatch {
            what: "sphere center",
            expected: n,
            got: x0.len(),
        });
    }
    let u = unit_direction(&phi.angles);
    Ok(DVector::from_iterator(
        n,
        x0.iter().zip(&u).map(|(c, d)| c + delta0 * d),
    ))
}

pub fn cartesian_to_polar(x: &[f64], x0: &[f64], delta0: f64) -> Result<PolarPoint> {
    let n = x.len();
    check_dim(n)?;
    if x0.len() != n {
        return Err(SlrError::DimensionMismatch {
            what: "sphere center",
            expected: n,
            got: x0.len(),
        });
    }
    let d: Vec<f64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
    let norm = d.iter().fold(0.0f64, |acc, v| acc.hypot(*v));
    if (norm - delta0).abs() > 1e-8 * delta0 || delta0 <= 0.0 {
        return Err(SlrError::Domain(format!(
            "point at distance {norm} is not on the sphere of radius {delta0}"
        )));
    }
    Ok(direction_to_angles(&d, n))
}

/// `∂x/∂φ` as an `n × (n−1)` matrix.
pub fn polar_jacobian(phi: &PolarPoint, delta0: f64) -> Result<DMatrix<f64>> {
    let n = phi.dim();
    check_dim(n)?;
    let (s, c): (Vec<f64>, Vec<f64>) = phi.angles.iter().map(|a| a.sin_cos()).unzip();
    let mut jac = DMatrix::zeros(n, n - 1);
    for k in 0..n {
        let tail = if k + 1 < n { c[k] } else { 1.0 };
        for j in 0..(n - 1).min(k + 1) {
            let v = if j == k {
                -s[..k].iter().product::<f64>() * s[k]
            } else {
                let others: f64 = (0..k).filter(|&i| i != j).map(|i| s[i]).product();
                others * c[j] * tail
            };
            jac[(k, j)] = delta0 * v;
        }
    }
    Ok(jac)
}

/// Ellipsoid `{y : ‖y − c‖_M ≤ δ}` with `M = AᵀA`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipsoid {
    pub center: DVector<f64>,
    pub metric: DMatrix<f64>,
    pub factor: DMatrix<f64>,
    pub radius: f64,
}

impl Ellipsoid {
    /// Builds the ellipsoid from a symmetric positive-definite metric, taking
    /// its symmetric square root as the factor.
    pub fn new(center: DVector<f64>, metric: DMatrix<f64>, radius: f64) -> Result<Self> {
        let n = center.len();
        if metric.shape() != (n, n) {
            return Err(SlrError::DimensionMismatch {
                what: "metric",
                expected: n,
                got: metric.nrows(),
            });
        }
        let scale = metric.abs().max().max(f64::MIN_POSITIVE);
        if (&metric - metric.transpose()).abs().max() > 1e-12 * scale {
            return Err(SlrError::Domain("metric is not symmetric".into()));
        }
        let eig = metric.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(SlrError::Domain("metric is not positive definite".into()));
        }
        let roots = eig.eigenvalues.map(f64::sqrt);
        let q = &eig.eigenvectors;
        let factor = q * DMatrix::from_diagonal(&roots) * q.transpose();
        let factor = 0.5 * (&factor + factor.transpose());
        Ok(Self {
            center,
            metric,
            factor,
            radius,
        })
    }

    /// Uses a caller-supplied factor `A`; the metric is `AᵀA`.
    pub fn from_factor(center: DVector<f64>, factor: DMatrix<f64>, radius: f64) -> Self {
        let metric = factor.transpose() * &factor;
        let metric = 0.5 * (&metric + metric.transpose());
        Self {
            center,
            metric,
            factor,
            radius,
        }
    }

    pub fn identity(center: DVector<f64>, radius: f64) -> Self {
        let n = center.len();
        Self {
            center,
            metric: DMatrix::identity(n, n),
            factor: DMatrix::identity(n, n),
            radius,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn dist(&self, y: &[f64]) -> f64 {
        let d = DVector::from_iterator(
            y.len(),
            y.iter().zip(self.center.iter()).map(|(a, b)| a - b),
        );
        (&self.factor * d).norm()
    }

    /// `∇_y ‖y − c‖_M = M(y − c)/‖y − c‖_M`.
    pub fn dist_gradient(&self, y: &[f64]) -> Result<DVector<f64>> {
        let d = DVector::from_iterator(
            y.len(),
            y.iter().zip(self.center.iter()).map(|(a, b)| a - b),
        );
        let ad = &self.factor * &d;
        let dist = ad.norm();
        if !(dist > 0.0) {
            return Err(SlrError::SingularGradient);
        }
        Ok(self.factor.transpose() * ad / dist)
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        self.dist(y) <= self.radius
    }
}

pub fn dist_in_metric(y: &[f64], ell: &Ellipsoid) -> f64 {
    ell.dist(y)
}

pub fn dist_gradient(y: &[f64], ell: &Ellipsoid) -> Result<DVector<f64>> {
    ell.dist_gradient(y)
}

/// Volume-normalized metric `M = det(C)^{1/n} C⁻¹`, `C = F Fᵀ`, and its
/// symmetric square root `A`.
pub fn optimal_metric(f_center: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = f_center.nrows();
    if f_center.ncols() != n {
        return Err(SlrError::DimensionMismatch {
            what: "sensitivity columns",
            expected: n,
            got: f_center.ncols(),
        });
    }
    let det = f_center.determinant();
    if !(det.abs() >= 1e-12) {
        return Err(SlrError::DegenerateFlow { det });
    }
    let c = f_center * f_center.transpose();
    let c = 0.5 * (&c + c.transpose());
    let eig = c.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(SlrError::DegenerateFlow { det });
    }
    let log_scale = eig.eigenvalues.iter().map(|l| l.ln()).sum::<f64>() / n as f64;
    let q = &eig.eigenvectors;
    let m_diag = eig.eigenvalues.map(|l| (log_scale - l.ln()).exp());
    let a_diag = m_diag.map(f64::sqrt);
    let m = q * DMatrix::from_diagonal(&m_diag) * q.transpose();
    let a = q * DMatrix::from_diagonal(&a_diag) * q.transpose();
    Ok((0.5 * (&m + m.transpose()), 0.5 * (&a + a.transpose())))
}

fn check_cap_args(r: f64, delta0: f64, n: usize) -> Result<()> {
    check_dim(n)?;
    if !(delta0 > 0.0) {
        return Err(SlrError::Domain(format!(
            "sphere radius must be positive, got {delta0}"
        )));
    }
    if !(0.0..=2.0 * delta0).contains(&r) {
        return Err(SlrError::Domain(format!(
            "chord radius {r} outside [0, {}]",
            2.0 * delta0
        )));
    }
    Ok(())
}

/// Uniform-measure probability of the cap of chord radius `r` on the sphere of
/// radius `δ₀` in `ℝⁿ`.
pub fn cap_probability_exact(r: f64, delta0: f64, n: usize) -> Result<f64> {
    check_cap_args(r, delta0, n)?;
    // colatitude θ = 2 asin(s), so sin²θ = 4s²(1 − s²)
    let s = (r / (2.0 * delta0)).min(1.0);
    let sin2 = (4.0 * s * s * (1.0 - s * s)).clamp(0.0, 1.0);
    let half = 0.5 * beta_reg((n as f64 - 1.0) / 2.0, 0.5, sin2);
    Ok(if s * s <= 0.5 { half } else { 1.0 - half })
}

/// Lower bound on [`cap_probability_exact`] from the volume of the cap's base
/// disk of radius `ρ = r·√(1 − r²/4δ₀²)`.
pub fn cap_probability_lower_bound(r: f64, delta0: f64, n: usize) -> Result<f64> {
    check_cap_args(r, delta0, n)?;
    let rho = base_radius(r, delta0);
    Ok(base_disk_probability(rho / delta0, n))
}

/// `ρ(r) = r·sin(π/2 − asin(r/2δ₀))`.
pub fn base_radius(r: f64, delta0: f64) -> f64 {
    let s = (r / (2.0 * delta0)).min(1.0);
    r * (1.0 - s * s).max(0.0).sqrt()
}

/// `(1/2√π)·Γ(n/2)/Γ((n+1)/2)·q^{n−1}`.
pub(crate) fn base_disk_probability(q: f64, n: usize) -> f64 {
    let nf = n as f64;
    let log_c =
        ln_gamma(nf / 2.0) - ln_gamma((nf + 1.0) / 2.0) - (2.0 * std::f64::consts::PI.sqrt()).ln();
    if q <= 0.0 {
        return 0.0;
    }
    (log_c + (nf - 1.0) * q.ln()).exp()
}

/// A visited point together with the chord radius of the cap around it on
/// which the loss is certified to stay above the current threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyCap {
    pub anchor: PolarPoint,
    pub anchor_cartesian: Vec<f64>,
    pub radius: f64,
    pub loss_at_anchor: f64,
}

#[derive(Clone, Debug, Default)]
pub struct CoverageSet {
    pub caps: Vec<SafetyCap>,
    pub sphere_radius: f64,
    pub sphere_center: Vec<f64>,
}

impl CoverageSet {
    pub fn new(sphere_center: Vec<f64>, sphere_radius: f64) -> Self {
        Self {
            caps: Vec::new(),
            sphere_radius,
            sphere_center,
        }
    }

    pub fn push(&mut self, cap: SafetyCap) {
        debug_assert!({
            let d: f64 = cap
                .anchor_cartesian
                .iter()
                .zip(&self.sphere_center)
                .map(|(a, c)| (a - c).powi(2))
                .sum::<f64>()
                .sqrt();
            (d - self.sphere_radius).abs() <= 1e-10 * self.sphere_radius.max(f64::MIN_POSITIVE)
        });
        self.caps.push(cap);
    }

    pub fn clear(&mut self) {
        self.caps.clear();
    }

    pub fn len(&self) -> usize {
        self.caps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.caps.is_empty()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.caps.iter().any(|cap| {
            let d2: f64 = cap
                .anchor_cartesian
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            d2.sqrt() <= cap.radius
        })
    }
}

pub fn coverage_contains(cov: &CoverageSet, x: &[f64]) -> bool {
    cov.contains(x)
}

/// `1 − ∏(1 − p_i)` over the caps of uniformly sampled points, in log space.
pub fn coverage_confidence(sampled: &[SafetyCap], delta0: f64, n: usize) -> Result<f64> {
    let mut log_miss = 0.0;
    for cap in sampled {
        let p = cap_probability_exact(cap.radius.min(2.0 * delta0), delta0, n)?;
        if p >= 1.0 {
            return Ok(1.0);
        }
        log_miss += (-p).ln_1p();
    }
    Ok(-log_miss.exp_m1())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fd_jacobian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

    fn random_sphere_point(rng: &mut ChaCha8Rng, x0: &[f64], delta0: f64) -> Vec<f64> {
        let g: Vec<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        g.iter()
            .zip(x0)
            .map(|(v, c)| c + delta0 * v / norm)
            .collect()
    }

    #[test]
    fn polar_examples() {
        let e1 = polar_to_cartesian(&PolarPoint::new(vec![0.0]), &[0.0, 0.0], 2.0).unwrap();
        assert_eq!(e1.as_slice(), &[2.0, 0.0]);
        let pole = polar_to_cartesian(&PolarPoint::new(vec![FRAC_PI_2, FRAC_PI_2]), &[0.0; 3], 1.0)
            .unwrap();
        assert!((pole - DVector::from_vec(vec![0.0, 0.0, 1.0])).norm() < 1e-15);
        let p = polar_to_cartesian(&PolarPoint::new(vec![2.4]), &[1.0, 1.0], 0.5).unwrap();
        assert_eq!(
            p.as_slice(),
            &[1.0 + 0.5 * 2.4f64.cos(), 1.0 + 0.5 * 2.4f64.sin()]
        );
        assert!(matches!(
            polar_to_cartesian(&PolarPoint::new(vec![]), &[0.0], 1.0),
            Err(SlrError::UnsupportedDimension(1))
        ));
    }

    #[test]
    fn inverse_examples() {
        let phi = cartesian_to_polar(&[1.5, 1.0, 1.0], &[1.0, 1.0, 1.0], 0.5).unwrap();
        assert_eq!(phi.angles, vec![0.0, 0.0]);
        let pole = cartesian_to_polar(&[0.0, 0.0, 1.0], &[0.0; 3], 1.0).unwrap();
        assert!((pole.angles[0] - FRAC_PI_2).abs() < 1e-15);
        assert!((pole.angles[1] - FRAC_PI_2).abs() < 1e-15);
        assert!(matches!(
            cartesian_to_polar(&[1.1, 0.0], &[0.0, 0.0], 1.0),
            Err(SlrError::Domain(_))
        ));
    }

    #[test]
    fn round_trip_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 2..=6 {
            let x0: Vec<f64> = (0..n).map(|i| i as f64 - 1.5).collect();
            let delta0 = 0.7;
            for _ in 0..1000 {
                let x = random_sphere_point(&mut rng, &x0, delta0);
                let phi = cartesian_to_polar(&x, &x0, delta0).unwrap();
                for (k, a) in phi.angles.iter().enumerate() {
                    let upper = if k + 1 < n - 1 { PI } else { 2.0 * PI };
                    assert!(*a >= 0.0 && *a <= upper);
                }
                let back = polar_to_cartesian(&phi, &x0, delta0).unwrap();
                let err = back
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err <= 1e-10, "n={n} err={err}");
            }
        }
    }

    #[test]
    fn canonical_preserves_point() {
        let phi = PolarPoint::new(vec![-0.4, 7.0, -2.0]);
        let c = phi.canonical();
        let a = polar_to_cartesian(&phi, &[0.0; 4], 1.0).unwrap();
        let b = polar_to_cartesian(&c, &[0.0; 4], 1.0).unwrap();
        assert!((a - b).norm() < 1e-12);
        assert!(c.angles[..2].iter().all(|v| (0.0..=PI).contains(v)));
        assert!((0.0..2.0 * PI).contains(&c.angles[2]));
    }

    #[test]
    fn jacobian_examples() {
        let j = polar_jacobian(&PolarPoint::new(vec![0.0]), 1.0).unwrap();
        assert_eq!(j.as_slice(), &[-0.0, 1.0]);
        // n = 3, φ = (π/2, 0): x = (cos φ1, sin φ1 cos φ2, sin φ1 sin φ2)
        let d = 0.5;
        let j = polar_jacobian(&PolarPoint::new(vec![FRAC_PI_2, 0.0]), d).unwrap();
        let (s1, c1) = FRAC_PI_2.sin_cos();
        let (s2, c2) = 0.0f64.sin_cos();
        let want = DMatrix::from_row_slice(
            3,
            2,
            &[
                -d * s1,
                0.0,
                d * c1 * c2,
                -d * s1 * s2,
                d * c1 * s2,
                d * s1 * c2,
            ],
        );
        assert!((j - want).abs().max() < 1e-15);
    }

    #[test]
    fn jacobian_matches_fd_and_is_tangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 2..=6 {
            let x0 = vec![0.3; n];
            let delta0 = 1.3;
            for _ in 0..50 {
                let phi: Vec<f64> = (0..n - 1).map(|_| rng.random_range(0.0..6.0)).collect();
                let jac = polar_jacobian(&PolarPoint::new(phi.clone()), delta0).unwrap();
                let fd = fd_jacobian(
                    |p| {
                        polar_to_cartesian(&PolarPoint::new(p.to_vec()), &x0, delta0)
                            .unwrap()
                            .as_slice()
                            .to_vec()
                    },
                    &phi,
                    1e-6,
                );
                assert!((&jac - &fd).abs().max() <= 1e-6);
                let x = polar_to_cartesian(&PolarPoint::new(phi), &x0, delta0).unwrap();
                let radial = DVector::from_iterator(n, x.iter().zip(&x0).map(|(a, b)| a - b));
                for col in jac.column_iter() {
                    assert!(col.dot(&radial).abs() <= 1e-10 * delta0 * delta0);
                }
            }
        }
    }

    #[test]
    fn distance_examples() {
        let c = DVector::from_vec(vec![1.0, -1.0]);
        let id = Ellipsoid::identity(c.clone(), 1.0);
        assert_eq!(id.dist(&[1.0, -1.0]), 0.0);
        assert_eq!(id.dist(&[4.0, 3.0]), 5.0);
        let g = id.dist_gradient(&[4.0, 3.0]).unwrap();
        assert!((g - DVector::from_vec(vec![0.6, 0.8])).norm() < 1e-15);
        let w = Ellipsoid::new(
            c,
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])),
            1.0,
        )
        .unwrap();
        assert!((w.dist(&[2.0, 0.0]) - 5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            w.dist_gradient(&[1.0, -1.0]),
            Err(SlrError::SingularGradient)
        ));
    }

    #[test]
    fn gradient_matches_fd_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.random_range(2..5);
            let b: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let m = &b * b.transpose() + DMatrix::identity(n, n) * 0.1;
            let m = 0.5 * (&m + m.transpose());
            let ell = Ellipsoid::new(DVector::zeros(n), m.clone(), 1.0).unwrap();
            assert!(
                (ell.factor.transpose() * &ell.factor - &m).abs().max() <= 1e-10 * m.abs().max()
            );
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = ell.dist_gradient(&y).unwrap();
            let fd = fd_jacobian(|p| vec![ell.dist(p)], &y, 1e-6);
            for i in 0..n {
                assert!((g[i] - fd[(0, i)]).abs() <= 1e-7 * (1.0 + g.norm()));
            }
        }
    }

    #[test]
    fn optimal_metric_examples() {
        let (m, a) = optimal_metric(&DMatrix::identity(2, 2)).unwrap();
        assert!((m - DMatrix::identity(2, 2)).abs().max() < 1e-15);
        assert!((a - DMatrix::identity(2, 2)).abs().max() < 1e-15);
        let th: f64 = 0.7;
        let rot = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let (m, _) = optimal_metric(&rot).unwrap();
        assert!((m - DMatrix::identity(2, 2)).abs().max() < 1e-14);
        let f = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        let (m, a) = optimal_metric(&f).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 4.0]));
        assert!((m - &want).abs().max() < 1e-14);
        assert!((a.transpose() * &a - want).abs().max() < 1e-14);
        assert!(matches!(
            optimal_metric(&DMatrix::zeros(2, 2)),
            Err(SlrError::DegenerateFlow { .. })
        ));
    }

    #[test]
    fn optimal_metric_has_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let n = rng.random_range(2..6);
            let f: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
            if f.determinant().abs() < 1e-3 {
                continue;
            }
            let (m, a) = optimal_metric(&f).unwrap();
            assert!((m.determinant() - 1.0).abs() <= 1e-10);
            assert!((a.transpose() * &a - &m).abs().max() <= 1e-10 * m.abs().max());
        }
    }

    #[test]
    fn cap_probability_examples() {
        for n in [2, 3, 4, 6, 9] {
            assert_eq!(cap_probability_exact(0.0, 1.0, n).unwrap(), 0.0);
            assert!((cap_probability_exact(2.0, 1.0, n).unwrap() - 1.0).abs() < 1e-15);
            assert!((cap_probability_exact(SQRT_2 * 0.3, 0.3, n).unwrap() - 0.5).abs() < 1e-14);
        }
        // n = 2: arc fraction θ/π
        let r: f64 = 0.2;
        let theta = 2.0 * (r / 2.0).asin();
        assert!((cap_probability_exact(r, 1.0, 2).unwrap() - theta / PI).abs() < 1e-14);
        assert!(cap_probability_exact(2.1, 1.0, 3).is_err());
        assert!(cap_probability_exact(-0.1, 1.0, 3).is_err());
    }

    #[test]
    fn cap_probability_three_dimensional_closed_form() {
        // in ℝ³ the cap fraction is (1 − cos θ)/2 = r²/(4δ₀²)
        for r in [0.1, 0.5, 1.0, 1.7] {
            let p = cap_probability_exact(r, 1.0, 3).unwrap();
            assert!((p - r * r / 4.0).abs() < 1e-14, "{r}: {p}");
        }
    }

    #[test]
    fn lower_bound_closed_form_in_plane() {
        // Γ(1) = 1, Γ(3/2) = √π/2, so the bound is ρ/(π δ₀)
        let r: f64 = 0.2;
        let rho = r * (1.0 - r * r / 4.0).sqrt();
        let b = cap_probability_lower_bound(r, 1.0, 2).unwrap();
        assert!((b - rho / PI).abs() < 1e-15);
    }

    #[test]
    fn lower_bound_below_exact_and_monotone_exact() {
        for n in 2..=12 {
            let mut prev = 0.0;
            for i in 0..=400 {
                let r = 2.0 * i as f64 / 400.0;
                let e = cap_probability_exact(r, 1.0, n).unwrap();
                let b = cap_probability_lower_bound(r, 1.0, n).unwrap();
                assert!(b <= e + 1e-15, "n={n} r={r}: {b} > {e}");
                assert!(e >= prev);
                prev = e;
            }
        }
        let small = cap_probability_lower_bound(1e-6, 1.0, 3).unwrap();
        let exact = cap_probability_exact(1e-6, 1.0, 3).unwrap();
        assert!(small > 0.0 && (small / exact - 1.0).abs() < 1e-3);
    }

    #[test]
    fn coverage_membership() {
        let mut cov = CoverageSet::new(vec![0.0, 0.0], 1.0);
        assert!(!cov.contains(&[1.0, 0.0]));
        cov.push(SafetyCap {
            anchor: PolarPoint::new(vec![0.0]),
            anchor_cartesian: vec![1.0, 0.0],
            radius: 0.0,
            loss_at_anchor: -1.0,
        });
        assert!(cov.contains(&[1.0, 0.0]));
        assert!(!cov.contains(&[0.0, 1.0]));
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(coverage_confidence(&[], 1.0, 3).unwrap(), 0.0);
        let whole = SafetyCap {
            anchor: PolarPoint::new(vec![0.0, 0.0]),
            anchor_cartesian: vec![1.0, 0.0, 0.0],
            radius: 2.0,
            loss_at_anchor: -1.0,
        };
        assert_eq!(
            coverage_confidence(std::slice::from_ref(&whole), 1.0, 3).unwrap(),
            1.0
        );
        let cap = SafetyCap {
            radius: 0.5,
            ..whole
        };
        // p = r²/4 in three dimensions
        let p: f64 = 0.0625;
        for count in [1, 7, 40] {
            let caps = vec![cap.clone(); count];
            let got = coverage_confidence(&caps, 1.0, 3).unwrap();
            assert!((got - (1.0 - (1.0 - p).powi(count as i32))).abs() < 1e-14);
        }
    }
}
