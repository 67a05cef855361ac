use serde::{Deserialize, Serialize};

use crate::error::{Result, SlrError};
use crate::geometry::{base_disk_probability, base_radius, cap_probability_exact};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum PlanBound {
    Finite(u64),
    /// The guaranteed cap radius is zero, so no sample count suffices.
    Unbounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    /// Smallest cap radius any sample can get: `(1 − μ)·L(φ₁)/λ`.
    pub r_bound: f64,
    /// Base-disk radius `ρ(r_bound)`.
    pub rho: f64,
    /// Per-sample probability of landing in a cap of radius `r_bound`.
    pub inner_probability: f64,
    /// True when the cap reaches a hemisphere and the exact cap probability
    /// replaced the base-disk bound.
    pub clamped: bool,
    /// `ln γ / ln(1 − p)` before rounding.
    pub n_max_real: f64,
    pub n_max: PlanBound,
    /// `−ln γ·(δ₀/r_bound)^{2n}`.
    pub asymptotic: f64,
}

/// Smallest `N` with `(1 − p)^N ≤ γ`, and the real quotient `ln γ / ln(1 − p)`.
pub fn plan_from_probability(gamma: f64, p: f64) -> (f64, PlanBound) {
    if !(p > 0.0) {
        return (f64::INFINITY, PlanBound::Unbounded);
    }
    if p >= 1.0 {
        return (0.0, PlanBound::Finite(1));
    }
    let log_miss = (-p).ln_1p();
    let real = gamma.ln() / log_miss;
    if !real.is_finite() || real >= u64::MAX as f64 {
        return (real, PlanBound::Unbounded);
    }
    let mut n = real.ceil().max(1.0) as u64;
    // the quotient can land a rounding error above an integer
    if n > 1 && (n - 1) as f64 * log_miss <= gamma.ln() {
        n -= 1;
    }
    (real, PlanBound::Finite(n))
}

/// Sample budget after which the confidence `1 − γ` is reached for sure, given
/// the whole-ball Lipschitz bound and the loss of the first sample.
pub fn plan_iterations(
    gamma: f64,
    mu: f64,
    lambda: f64,
    first_loss: f64,
    delta0: f64,
    n: usize,
) -> Result<PlanResult> {
    let mut errs = Vec::new();
    if !(gamma > 0.0 && gamma < 1.0) {
        errs.push(format!("gamma must satisfy γ ∈ (0,1), got {gamma}"));
    }
    if !(mu >= 1.0 && mu.is_finite()) {
        errs.push(format!("mu must satisfy μ ≥ 1, got {mu}"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        errs.push(format!("Lipschitz bound must be positive, got {lambda}"));
    }
    if !(first_loss <= 0.0) {
        errs.push(format!("first loss must be ≤ 0, got {first_loss}"));
    }
    if !(delta0 > 0.0 && delta0.is_finite()) {
        errs.push(format!("initial radius must be positive, got {delta0}"));
    }
    if n < 2 {
        errs.push(format!("dimension must be at least 2, got {n}"));
    }
    if !errs.is_empty() {
        return Err(SlrError::Validation(errs));
    }

    let r_bound = (1.0 - mu) * first_loss / lambda;
    let nf = n as f64;
    if r_bound <= 0.0 {
        return Ok(PlanResult {
            r_bound: 0.0,
            rho: 0.0,
            inner_probability: 0.0,
            clamped: false,
            n_max_real: f64::INFINITY,
            n_max: PlanBound::Unbounded,
            asymptotic: f64::INFINITY,
        });
    }
    let rho = base_radius(r_bound.min(2.0 * delta0), delta0);
    let clamped = r_bound * r_bound >= 2.0 * delta0 * delta0;
    let p = if clamped {
        cap_probability_exact(r_bound.min(2.0 * delta0), delta0, n)?
    } else {
        base_disk_probability(rho / delta0, n)
    };
    let (n_max_real, n_max) = plan_from_probability(gamma, p);
    Ok(PlanResult {
        r_bound,
        rho,
        inner_probability: p,
        clamped,
        n_max_real,
        n_max,
        asymptotic: -gamma.ln() * (delta0 / r_bound).powf(2.0 * nf),
    })
}
