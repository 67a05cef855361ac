use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SlrError};
use crate::field::VectorField;
use crate::geometry::{optimal_metric, polar_jacobian, polar_to_cartesian, Ellipsoid, PolarPoint};
use crate::integrator::{solve_flow, solve_flow_with_sensitivity, IvpSettings};

use super::MetricMode;

/// Everything the loss at one time point depends on: the initial sphere, the
/// propagated center and the metric.
#[derive(Clone, Debug)]
pub struct TimestepContext {
    pub field: VectorField,
    pub x0: Vec<f64>,
    pub delta0: f64,
    pub t0: f64,
    pub t: f64,
    pub ellipsoid: Ellipsoid,
    /// Sensitivity of the flow at the center `x₀`.
    pub center_sensitivity: DMatrix<f64>,
    pub ivp: IvpSettings,
}

impl TimestepContext {
    pub fn new(
        field: &VectorField,
        x0: &[f64],
        delta0: f64,
        t0: f64,
        t: f64,
        metric_mode: MetricMode,
        ivp: &IvpSettings,
    ) -> Result<Self> {
        let n = field.dim();
        if n < 2 {
            return Err(SlrError::UnsupportedDimension(n));
        }
        if x0.len() != n {
            return Err(SlrError::DimensionMismatch {
                what: "initial center",
                expected: n,
                got: x0.len(),
            });
        }
        if !(delta0 >= 0.0 && delta0.is_finite()) {
            return Err(SlrError::Domain(format!(
                "initial radius must be ≥ 0, got {delta0}"
            )));
        }
        // the center comes from the same state-only solve as every loss, so
        // the loss vanishes exactly at x₀
        let center = solve_flow(field, x0, t0, t, ivp)?.final_state().clone();
        let f_c = solve_flow_with_sensitivity(field, x0, t0, t, ivp)?
            .final_sensitivity()
            .clone();
        let ellipsoid = match metric_mode {
            MetricMode::Identity => Ellipsoid::identity(center, 0.0),
            MetricMode::Optimal => {
                let (_, a) = optimal_metric(&f_c)?;
                Ellipsoid::from_factor(center, a, 0.0)
            }
        };
        Ok(Self {
            field: field.clone(),
            x0: x0.to_vec(),
            delta0,
            t0,
            t,
            ellipsoid,
            center_sensitivity: f_c,
            ivp: *ivp,
        })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn point(&self, phi: &PolarPoint) -> Result<DVector<f64>> {
        polar_to_cartesian(phi, &self.x0, self.delta0)
    }

    /// Loss of a Cartesian start point: `−‖χ(x) − χ(x₀)‖_M`.
    pub fn loss_at(&self, x: &[f64]) -> Result<f64> {
        let tr = solve_flow(&self.field, x, self.t0, self.t, &self.ivp)?;
        Ok(-self.ellipsoid.dist(tr.final_state().as_slice()))
    }

    pub fn loss(&self, phi: &PolarPoint) -> Result<f64> {
        self.loss_at(self.point(phi)?.as_slice())
    }

    /// Loss and `∇_φ L = −(∂dist/∂y)·F·(∂x/∂φ)` from one joint state and
    /// sensitivity integration. At a point mapping onto the center the
    /// distance is not differentiable; the angles are then nudged by 1e-9
    /// (up to three times) and the nudged point is returned.
    pub fn loss_and_gradient(&self, phi: &PolarPoint) -> Result<(PolarPoint, f64, DVector<f64>)> {
        let mut phi = phi.clone();
        for attempt in 0..=3 {
            let x = self.point(&phi)?;
            let sol =
                solve_flow_with_sensitivity(&self.field, x.as_slice(), self.t0, self.t, &self.ivp)?;
            let y = sol.final_state();
            let loss = -self.ellipsoid.dist(y.as_slice());
            match self.ellipsoid.dist_gradient(y.as_slice()) {
                Ok(g) => {
                    let jp = polar_jacobian(&phi, self.delta0)?;
                    let grad = -(g.transpose() * sol.final_sensitivity() * jp).transpose();
                    return Ok((phi, loss, grad));
                }
                Err(SlrError::SingularGradient) if attempt < 3 => {
                    for a in phi.angles.iter_mut() {
                        *a += 1e-9;
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Err(SlrError::SingularGradient)
    }

    pub fn loss_gradient(&self, phi: &PolarPoint) -> Result<DVector<f64>> {
        Ok(self.loss_and_gradient(phi)?.2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn ctx(field: VectorField, t: f64) -> TimestepContext {
        TimestepContext::new(
            &field,
            &[0.5, -0.2],
            0.1,
            0.0,
            t,
            MetricMode::Identity,
            &IvpSettings::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_field_loss_is_minus_radius() {
        let c = ctx(VectorField::zero(2).unwrap(), 1.0);
        for a in [0.0, 1.0, 4.0] {
            let phi = PolarPoint::new(vec![a]);
            assert!((c.loss(&phi).unwrap() + 0.1).abs() < 1e-15);
            let (_, _, g) = c.loss_and_gradient(&phi).unwrap();
            assert!(g.norm() < 1e-15);
        }
    }

    #[test]
    fn rotation_loss_is_constant() {
        let c = ctx(VectorField::rotation(), FRAC_PI_2);
        for a in [0.0, 0.7, 3.0, 5.5] {
            let l = c.loss(&PolarPoint::new(vec![a])).unwrap();
            assert!((l + 0.1).abs() < 1e-8, "{l}");
        }
    }

    #[test]
    fn degenerate_ball_has_zero_loss() {
        let c = TimestepContext::new(
            &VectorField::van_der_pol(1.0),
            &[2.0, 0.0],
            0.0,
            0.0,
            1.0,
            MetricMode::Optimal,
            &IvpSettings::default(),
        )
        .unwrap();
        assert_eq!(c.loss(&PolarPoint::new(vec![1.0])).unwrap(), 0.0);
    }

    #[test]
    fn saddle_gradient_points_toward_expanding_axis() {
        let f = VectorField::linear(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).unwrap();
        let c = ctx(f, 0.1);
        // L = −δ₀·√(e^{0.2}cos²φ + e^{−0.2}sin²φ) decreases toward φ ∈ {0, π}
        for (a, sign) in [(FRAC_PI_4, 1.0), (3.0 * FRAC_PI_4, -1.0), (PI + 0.3, 1.0)] {
            let g = c.loss_gradient(&PolarPoint::new(vec![a])).unwrap();
            assert_eq!(g[0].signum(), sign, "φ = {a}: {g}");
        }
    }
}
