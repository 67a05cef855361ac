use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SlrError};
use crate::integrator::solve_flow_with_sensitivity;
use crate::interval::{
    box_of_cap, interval_sensitivity, lipschitz_bound, sigma_max_upper, RegionBox,
};

use super::{LipschitzMode, SlrConfig, TimestepContext};

const MAX_FIXPOINT_ITERS: usize = 64;

/// Bounds on `‖A_j·∂χ/∂x‖₂` over regions of the initial ball.
#[derive(Clone, Debug)]
pub struct LipschitzEstimator {
    mode: LipschitzMode,
    inflation: f64,
    sampled_points: usize,
    steps: usize,
    rng: ChaCha8Rng,
    /// Bound over the whole initial ball.
    pub ball: f64,
}

impl LipschitzEstimator {
    /// Computes the whole-ball bound. In rigorous mode the interval step
    /// count is doubled from the configured start until the bound changes by
    /// less than 5% or the cap is reached; the smallest bound seen is kept
    /// (each one is rigorous) together with its step count.
    pub fn new(ctx: &TimestepContext, cfg: &SlrConfig, seed: u64, stream: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(stream);
        let mut est = Self {
            mode: cfg.lipschitz_mode,
            inflation: cfg.sampled_inflation,
            sampled_points: cfg.sampled_points,
            steps: 1,
            rng,
            ball: f64::INFINITY,
        };
        let span = ctx.t - ctx.t0;
        if span == 0.0 || ctx.delta0 == 0.0 {
            est.ball = sigma_max_upper(&ctx.ellipsoid.factor);
            return Ok(est);
        }
        match cfg.lipschitz_mode {
            LipschitzMode::Sampled => {
                est.ball = est.sampled(ctx, None)?;
            }
            LipschitzMode::Rigorous => {
                let region = whole_ball(ctx);
                let steps_for = |per_unit: usize| ((per_unit as f64 * span).ceil() as usize).max(1);
                let mut per_unit = cfg.lipschitz_steps_per_unit;
                let mut prev: Option<f64> = None;
                let mut last_err = None;
                while per_unit <= cfg.lipschitz_max_steps_per_unit {
                    let steps = steps_for(per_unit);
                    match rigorous_bound(ctx, &region, steps) {
                        Ok(l) => {
                            if l < est.ball {
                                est.ball = l;
                                est.steps = steps;
                            }
                            if let Some(p) = prev {
                                if ((l - p) / p).abs() < 0.05 {
                                    break;
                                }
                            }
                            prev = Some(l);
                        }
                        Err(e @ SlrError::EnclosureFailure { .. }) => last_err = Some(e),
                        Err(e) => return Err(e),
                    }
                    per_unit *= 2;
                }
                if !est.ball.is_finite() {
                    return Err(last_err.unwrap_or(SlrError::EnclosureFailure { t: ctx.t }));
                }
            }
        }
        Ok(est)
    }

    pub fn mode(&self) -> LipschitzMode {
        self.mode
    }

    /// Interval steps used for region bounds after calibration.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Bound over the cap of chord radius `s` around `anchor` (the whole ball
    /// once `s ≥ 2δ₀`).
    pub fn over_cap(&mut self, ctx: &TimestepContext, anchor: &[f64], s: f64) -> Result<f64> {
        if s >= 2.0 * ctx.delta0 {
            return Ok(self.ball);
        }
        match self.mode {
            LipschitzMode::Rigorous => {
                let region = box_of_cap(anchor, s, &ctx.x0, ctx.delta0);
                rigorous_bound(ctx, &region, self.steps)
            }
            LipschitzMode::Sampled => self.sampled(ctx, Some((anchor, s))),
        }
    }

    /// Largest sensitivity norm over random points of the ball (optionally
    /// restricted to within `s` of an anchor), times the inflation factor.
    fn sampled(&mut self, ctx: &TimestepContext, cap: Option<(&[f64], f64)>) -> Result<f64> {
        let n = ctx.dim();
        let mut points: Vec<Vec<f64>> = Vec::with_capacity(self.sampled_points + 1);
        points.push(match cap {
            Some((a, _)) => a.to_vec(),
            None => ctx.x0.clone(),
        });
        let mut tries = 0;
        while points.len() <= self.sampled_points && tries < 1000 * self.sampled_points {
            tries += 1;
            let g: Vec<f64> = (0..n).map(|_| self.rng.sample(StandardNormal)).collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let u: f64 = self.rng.random();
            let radius = ctx.delta0 * u.powf(1.0 / n as f64);
            let x: Vec<f64> = g
                .iter()
                .zip(&ctx.x0)
                .map(|(v, c)| c + radius * v / norm)
                .collect();
            if let Some((a, s)) = cap {
                let d2: f64 = x.iter().zip(a).map(|(p, q)| (p - q).powi(2)).sum();
                if d2.sqrt() > s {
                    continue;
                }
            }
            points.push(x);
        }
        let mut best: f64 = 0.0;
        for x in &points {
            let sol = solve_flow_with_sensitivity(&ctx.field, x, ctx.t0, ctx.t, &ctx.ivp)?;
            let m: DMatrix<f64> = &ctx.ellipsoid.factor * sol.final_sensitivity();
            best = best.max(sigma_max_upper(&m));
        }
        Ok(self.inflation * best)
    }
}

fn whole_ball(ctx: &TimestepContext) -> RegionBox {
    box_of_cap(&ctx.x0, 2.0 * ctx.delta0, &ctx.x0, ctx.delta0)
}

fn rigorous_bound(ctx: &TimestepContext, region: &RegionBox, steps: usize) -> Result<f64> {
    let f = interval_sensitivity(&ctx.field, region, ctx.t0, ctx.t, steps)?;
    let n = ctx.dim();
    lipschitz_bound(&f, &ctx.ellipsoid.factor, &DMatrix::identity(n, n))
}

/// Chord radius of a cap around a visited point on which `L ≥ μ·m̄`.
///
/// With `Σ` the region the Lipschitz bound `λ` was computed on, any radius
/// `r ≤ (L_φ − μ·m̄)/λ` whose cap lies inside `Σ` is safe. Starting from the
/// whole ball, the region is shrunk towards the candidate radius
/// (`s ← r + |s − r|/2`) until `s ≥ r` and `|r − s|/r ≤ ε`. Each round's
/// `min(s, r)` is itself safe, so the largest of those is returned; this also
/// covers rounds that hit the iteration cap.
#[allow(clippy::too_many_arguments)]
pub fn safety_radius(
    anchor: &[f64],
    loss_at_anchor: f64,
    m_bar: f64,
    mu: f64,
    ctx: &TimestepContext,
    est: &mut LipschitzEstimator,
    per_cap: bool,
    eps_fix: f64,
) -> Result<f64> {
    let cap_all = 2.0 * ctx.delta0;
    let numerator = (loss_at_anchor - mu * m_bar).max(0.0);
    if numerator == 0.0 {
        return Ok(0.0);
    }
    let radius_for = |lambda: f64| -> f64 {
        if lambda <= 0.0 {
            cap_all
        } else {
            (numerator / lambda).min(cap_all)
        }
    };
    let mut r = radius_for(est.ball);
    let mut best = r;
    if !per_cap || r >= cap_all {
        return Ok(best);
    }
    let mut s = ctx.delta0;
    for _ in 0..MAX_FIXPOINT_ITERS {
        if !((r - s).abs() / r > eps_fix || s < r) {
            break;
        }
        s = r + (s - r).abs() / 2.0;
        let lambda = est.over_cap(ctx, anchor, s)?;
        r = radius_for(lambda);
        best = best.max(r.min(s));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{LipschitzScope, MetricMode};
    use crate::field::VectorField;
    use crate::geometry::PolarPoint;
    use crate::integrator::IvpSettings;
    use crate::oracle::grid_verify_cap;

    fn ctx(field: &VectorField, x0: &[f64], delta0: f64, t: f64) -> TimestepContext {
        TimestepContext::new(
            field,
            x0,
            delta0,
            0.0,
            t,
            MetricMode::Optimal,
            &IvpSettings::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_numerator_gives_zero_radius() {
        let c = ctx(&VectorField::rotation(), &[0.0, 0.0], 0.1, 1.0);
        let mut est = LipschitzEstimator::new(&c, &SlrConfig::default(), 0, 0).unwrap();
        let r = safety_radius(&[0.1, 0.0], -0.1, -0.1, 1.0, &c, &mut est, false, 1e-3).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn zero_field_has_unit_lipschitz() {
        let c = ctx(&VectorField::zero(2).unwrap(), &[1.0, 1.0], 0.2, 1.0);
        let mut est = LipschitzEstimator::new(&c, &SlrConfig::default(), 0, 0).unwrap();
        assert!((est.ball - 1.0).abs() < 1e-12, "{}", est.ball);
        let r = safety_radius(&[1.2, 1.0], -0.2, -0.2, 1.1, &c, &mut est, false, 1e-3).unwrap();
        assert!((r - 0.02).abs() < 1e-12, "{r}");
    }

    #[test]
    fn rotation_ball_bound_near_one() {
        let c = ctx(&VectorField::rotation(), &[0.0, 0.0], 0.1, 3.0);
        let est = LipschitzEstimator::new(&c, &SlrConfig::default(), 0, 0).unwrap();
        assert!(est.ball >= 1.0 && est.ball < 1.05, "{}", est.ball);
    }

    #[test]
    fn per_cap_radius_is_at_least_global_and_sound() {
        let field = VectorField::van_der_pol(1.0);
        let c = ctx(&field, &[2.0, 0.0], 0.05, 1.0);
        let cfg = SlrConfig {
            lipschitz_scope: LipschitzScope::PerCap,
            ..SlrConfig::default()
        };
        let mut est = LipschitzEstimator::new(&c, &cfg, 0, 0).unwrap();
        let phi = PolarPoint::new(vec![2.0]);
        let anchor = c.point(&phi).unwrap();
        let l = c.loss(&phi).unwrap();
        let m_bar = l * 1.3;
        let global =
            safety_radius(anchor.as_slice(), l, m_bar, 1.05, &c, &mut est, false, 1e-3).unwrap();
        let local =
            safety_radius(anchor.as_slice(), l, m_bar, 1.05, &c, &mut est, true, 1e-3).unwrap();
        assert!(local >= global && global > 0.0);
        let cap = crate::geometry::SafetyCap {
            anchor: phi,
            anchor_cartesian: anchor.as_slice().to_vec(),
            radius: local,
            loss_at_anchor: l,
        };
        let (min_l, pass) = grid_verify_cap(&cap, 1.05, m_bar, &c, 200).unwrap();
        assert!(pass, "{min_l} vs {}", 1.05 * m_bar);
    }
}
