use crate::error::Result;
use crate::geometry::PolarPoint;

use super::{SlrConfig, TimestepContext};

const MAX_HALVINGS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct DescentOutcome {
    /// Start point actually used (nudged if it hit a singular gradient).
    pub start: PolarPoint,
    pub start_loss: f64,
    pub point: PolarPoint,
    pub loss: f64,
    pub iterations: usize,
    /// Every accepted loss, starting with `start_loss`.
    pub accepted: Vec<f64>,
    /// The loss rose on every iteration without backtracking; the best point
    /// seen is returned.
    pub diverged: bool,
}

/// Local minimization of the loss from `phi_init`.
///
/// The step is `α·∇L/|L|`: the loss scales with the initial radius and with the
/// metric, so normalizing by it makes `α` an angle. With backtracking, a step
/// that does not decrease the loss is halved up to 20 times; if none
/// succeeds the current point is taken as stationary.
pub fn gradient_descent(
    phi_init: &PolarPoint,
    ctx: &TimestepContext,
    cfg: &SlrConfig,
) -> Result<DescentOutcome> {
    let (start, start_loss, mut grad) = ctx.loss_and_gradient(phi_init)?;
    let mut phi = start.clone();
    let mut loss = start_loss;
    let mut best = (phi.clone(), loss);
    let mut accepted = vec![loss];
    let mut increases = 0usize;
    let mut iterations = 0usize;

    while iterations < cfg.max_gd_iters {
        iterations += 1;
        let scale = loss.abs();
        if scale == 0.0 || grad.norm() == 0.0 {
            break;
        }
        let mut step = cfg.alpha / scale;
        let mut moved = None;
        for _ in 0..=if cfg.backtracking { MAX_HALVINGS } else { 0 } {
            let trial = PolarPoint::new(
                phi.angles
                    .iter()
                    .zip(grad.iter())
                    .map(|(a, g)| a - step * g)
                    .collect(),
            );
            let (trial, trial_loss, trial_grad) = ctx.loss_and_gradient(&trial)?;
            if !cfg.backtracking || trial_loss < loss {
                moved = Some((trial, trial_loss, trial_grad));
                break;
            }
            step *= 0.5;
        }
        let Some((next, next_loss, next_grad)) = moved else {
            break;
        };
        let prev = loss;
        if next_loss > prev {
            increases += 1;
        } else {
            increases = 0;
        }
        phi = next;
        loss = next_loss;
        grad = next_grad;
        accepted.push(loss);
        if loss < best.1 {
            best = (phi.clone(), loss);
        }
        // first iteration always proceeds; afterwards stop on small relative change
        if ((loss - prev) / prev).abs() <= cfg.eps_gd {
            break;
        }
    }

    let diverged = !cfg.backtracking && increases >= cfg.max_gd_iters;
    let (point, loss) = best;
    Ok(DescentOutcome {
        start,
        start_loss,
        point: point.canonical(),
        loss,
        iterations,
        accepted,
        diverged,
    })
}
