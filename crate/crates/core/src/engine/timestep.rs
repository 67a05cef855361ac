use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SlrError};
use crate::geometry::{
    cap_probability_exact, cartesian_to_polar, CoverageSet, PolarPoint, SafetyCap,
};

use super::{
    gradient_descent, plan_iterations, safety_radius, LipschitzEstimator, LipschitzMode,
    LipschitzScope, PlanResult, ReachProblem, SlrConfig, TimestepContext, TimestepResult,
};

/// State of the sampling loop at one time point, kept so a finished run can
/// be refined with a smaller tolerance.
#[derive(Debug)]
pub struct TimestepSolver {
    index: usize,
    cfg: SlrConfig,
    ctx: TimestepContext,
    est: Option<LipschitzEstimator>,
    rng: ChaCha8Rng,
    mu: f64,
    coverage: CoverageSet,
    /// Parallel to `coverage.caps`: whether the point was a uniform sample.
    uniform: Vec<bool>,
    m_bar: f64,
    log_miss: f64,
    samples: usize,
    gd_runs: usize,
    descent_warnings: usize,
    first_loss: f64,
    converged: bool,
}

impl TimestepSolver {
    pub fn new(problem: &ReachProblem, t: f64, index: usize, cfg: &SlrConfig) -> Result<Self> {
        cfg.validate()?;
        if !(t >= problem.t0) {
            return Err(SlrError::Domain(format!(
                "time {t} precedes the initial time {}",
                problem.t0
            )));
        }
        let ctx = TimestepContext::new(
            &problem.field,
            &problem.x0,
            problem.delta0,
            problem.t0,
            t,
            cfg.metric_mode,
            &cfg.ivp,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64);
        let est = if problem.delta0 > 0.0 {
            Some(LipschitzEstimator::new(&ctx, cfg, cfg.seed, index as u64)?)
        } else {
            None
        };
        Ok(Self {
            index,
            cfg: cfg.clone(),
            coverage: CoverageSet::new(problem.x0.clone(), problem.delta0),
            ctx,
            est,
            rng,
            mu: cfg.initial_mu(),
            uniform: Vec::new(),
            m_bar: 0.0,
            log_miss: 0.0,
            samples: 0,
            gd_runs: 0,
            descent_warnings: 0,
            first_loss: 0.0,
            converged: false,
        })
    }

    pub fn context(&self) -> &TimestepContext {
        &self.ctx
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn m_bar(&self) -> f64 {
        self.m_bar
    }

    pub fn lipschitz(&self) -> f64 {
        self.est.as_ref().map_or(0.0, |e| e.ball)
    }

    /// `1 − ∏(1 − p_i)` over the caps of uniform samples.
    pub fn confidence(&self) -> f64 {
        if self.ctx.delta0 == 0.0 {
            return 1.0;
        }
        -self.log_miss.exp_m1()
    }

    /// Sample budget from the whole-ball Lipschitz bound and the loss of the
    /// first sample, drawing that sample if it has not been drawn yet.
    pub fn plan(&mut self) -> Result<PlanResult> {
        if self.samples == 0 {
            self.sample_once()?;
        }
        plan_iterations(
            self.cfg.gamma,
            self.mu,
            self.lipschitz(),
            self.first_loss,
            self.ctx.delta0,
            self.ctx.dim(),
        )
    }

    /// Samples until the confidence reaches `1 − γ` or the sample budget runs out.
    pub fn run(&mut self) -> Result<()> {
        let target = 1.0 - self.cfg.gamma;
        while self.confidence() < target {
            if self.samples >= self.cfg.max_samples {
                self.converged = false;
                debug!(
                    "timestep {}: sample budget {} exhausted at confidence {}",
                    self.index,
                    self.cfg.max_samples,
                    self.confidence()
                );
                return Ok(());
            }
            self.sample_once()?;
        }
        self.converged = true;
        Ok(())
    }

    /// Shrinks every cap to the smaller tolerance and resumes sampling.
    pub fn refine(&mut self, mu_next: f64) -> Result<()> {
        self.reduce_mu(mu_next)?;
        self.run()
    }

    /// Recomputes every cap for the smaller tolerance (never enlarging one)
    /// and the confidence they give, without sampling further.
    pub fn reduce_mu(&mut self, mu_next: f64) -> Result<()> {
        if !(mu_next >= 1.0) || mu_next > self.mu {
            return Err(SlrError::Config(format!(
                "refinement needs 1 ≤ μ_next ≤ μ = {}, got {mu_next}",
                self.mu
            )));
        }
        if mu_next == self.mu {
            return Ok(());
        }
        self.mu = mu_next;
        for i in 0..self.coverage.len() {
            let r = self.radius_of(i)?;
            let cap = &mut self.coverage.caps[i];
            cap.radius = r.min(cap.radius);
        }
        self.converged = false;
        self.rebuild_confidence()
    }

    fn sample_uniform(&mut self) -> Result<PolarPoint> {
        let n = self.ctx.dim();
        loop {
            let g: Vec<f64> = (0..n).map(|_| self.rng.sample(StandardNormal)).collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                continue;
            }
            let x: Vec<f64> = g
                .iter()
                .zip(&self.ctx.x0)
                .map(|(v, c)| c + self.ctx.delta0 * v / norm)
                .collect();
            return cartesian_to_polar(&x, &self.ctx.x0, self.ctx.delta0);
        }
    }

    fn push_visited(&mut self, phi: PolarPoint, loss: f64, uniform: bool) -> Result<()> {
        let x = self.ctx.point(&phi)?;
        self.coverage.push(SafetyCap {
            anchor: phi,
            anchor_cartesian: x.as_slice().to_vec(),
            radius: 0.0,
            loss_at_anchor: loss,
        });
        self.uniform.push(uniform);
        Ok(())
    }

    fn sample_once(&mut self) -> Result<()> {
        if self.ctx.delta0 == 0.0 {
            return Ok(());
        }
        let phi = self.sample_uniform()?;
        let x = self.ctx.point(&phi)?;
        self.samples += 1;
        let first_new = self.coverage.len();
        let m = if self.coverage.contains(x.as_slice()) {
            let l = self.ctx.loss_at(x.as_slice())?;
            self.push_visited(phi, l, true)?;
            l
        } else {
            let out = gradient_descent(&phi, &self.ctx, &self.cfg)?;
            self.gd_runs += 1;
            if out.diverged {
                self.descent_warnings += 1;
            }
            self.push_visited(out.start, out.start_loss, true)?;
            self.push_visited(out.point, out.loss, false)?;
            out.loss
        };
        if self.samples == 1 {
            self.first_loss = self.coverage.caps[first_new].loss_at_anchor;
        }

        if m < self.m_bar - 1e-12 * self.m_bar.abs() {
            self.m_bar = m;
            // a lower minimum only enlarges caps; keeping the old radius when the
            // per-cap fixpoint lands lower stays safe
            for i in 0..self.coverage.len() {
                let r = self.radius_of(i)?;
                let cap = &mut self.coverage.caps[i];
                cap.radius = r.max(cap.radius);
            }
            self.rebuild_confidence()?;
        } else {
            for i in first_new..self.coverage.len() {
                let r = self.radius_of(i)?;
                self.coverage.caps[i].radius = r;
                if self.uniform[i] {
                    self.log_miss += self.miss_log(r)?;
                }
            }
        }
        Ok(())
    }

    fn radius_of(&mut self, i: usize) -> Result<f64> {
        let est = self
            .est
            .as_mut()
            .expect("estimator exists for a positive radius");
        let cap = &self.coverage.caps[i];
        safety_radius(
            &cap.anchor_cartesian,
            cap.loss_at_anchor,
            self.m_bar,
            self.mu,
            &self.ctx,
            est,
            self.cfg.lipschitz_scope == LipschitzScope::PerCap,
            self.cfg.eps_fix,
        )
    }

    fn miss_log(&self, r: f64) -> Result<f64> {
        let p = cap_probability_exact(
            r.min(2.0 * self.ctx.delta0),
            self.ctx.delta0,
            self.ctx.dim(),
        )?;
        Ok((-p).ln_1p())
    }

    fn rebuild_confidence(&mut self) -> Result<()> {
        let mut total = 0.0;
        for (cap, &u) in self.coverage.caps.iter().zip(&self.uniform) {
            if u {
                total += self.miss_log(cap.radius)?;
            }
        }
        self.log_miss = total;
        Ok(())
    }

    pub fn result(&self) -> TimestepResult {
        let ell = &self.ctx.ellipsoid;
        let mode = self
            .est
            .as_ref()
            .map_or(self.cfg.lipschitz_mode, |e| e.mode());
        TimestepResult {
            index: self.index,
            t: self.ctx.t,
            center: ell.center.as_slice().to_vec(),
            metric: ell.metric.clone(),
            factor: ell.factor.clone(),
            m_bar: self.m_bar,
            delta_raw: -self.m_bar,
            delta_guaranteed: -self.mu * self.m_bar,
            mu: self.mu,
            confidence: self.confidence(),
            converged: self.converged || self.ctx.delta0 == 0.0,
            samples_used: self.samples,
            gd_runs: self.gd_runs,
            caps_count: self.coverage.len(),
            lipschitz: self.lipschitz(),
            lipschitz_mode: mode,
            lipschitz_scope: self.cfg.lipschitz_scope,
            metric_mode: self.cfg.metric_mode,
            guarantee_claimed: mode == LipschitzMode::Rigorous,
            first_loss: self.first_loss,
            descent_warnings: self.descent_warnings,
            caps: self.coverage.caps.clone(),
        }
    }
}

/// Runs the sampling loop at time `t`, then any refinement the tolerance
/// schedule asks for.
pub fn run_timestep(
    problem: &ReachProblem,
    t: f64,
    index: usize,
    cfg: &SlrConfig,
) -> Result<TimestepResult> {
    let mut solver = TimestepSolver::new(problem, t, index, cfg)?;
    solver.run()?;
    for &mu in cfg.mu_schedule.iter().skip(1) {
        let current = solver.result();
        if !current.converged {
            break;
        }
        if cfg
            .refine_until_radius
            .is_some_and(|limit| current.delta_guaranteed <= limit)
        {
            break;
        }
        solver.refine(mu)?;
    }
    Ok(solver.result())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::VectorField;
    use std::f64::consts::FRAC_PI_2;

    fn problem(field: VectorField, x0: Vec<f64>, delta0: f64) -> ReachProblem {
        ReachProblem {
            field,
            x0,
            delta0,
            t0: 0.0,
        }
    }

    #[test]
    fn zero_field_radius_is_mu_delta() {
        let p = problem(VectorField::zero(2).unwrap(), vec![0.0, 0.0], 0.1);
        let cfg = SlrConfig {
            mu: 1.1,
            ..SlrConfig::default()
        };
        let r = run_timestep(&p, 1.0, 0, &cfg).unwrap();
        assert!(r.converged);
        assert!(
            (r.delta_guaranteed - 0.11).abs() < 1e-6,
            "{}",
            r.delta_guaranteed
        );
        assert!((r.delta_raw - 0.1).abs() < 1e-12);
        assert!(r.confidence >= 0.95);
    }

    #[test]
    fn rotation_radius_within_isometry_bounds() {
        let p = problem(VectorField::rotation(), vec![1.0, 0.0], 0.1);
        let cfg = SlrConfig {
            metric_mode: super::super::MetricMode::Identity,
            ..SlrConfig::default()
        };
        let r = run_timestep(&p, FRAC_PI_2, 0, &cfg).unwrap();
        assert!(r.delta_guaranteed >= 0.1 && r.delta_guaranteed <= 1.05 * 0.1 * (1.0 + 1e-6));
    }

    #[test]
    fn vacuous_confidence_stops_after_one_sample() {
        let p = problem(VectorField::van_der_pol(1.0), vec![2.0, 0.0], 0.05);
        let cfg = SlrConfig {
            gamma: 1.0 - 1e-9,
            ..SlrConfig::default()
        };
        let r = run_timestep(&p, 0.5, 0, &cfg).unwrap();
        assert_eq!(r.samples_used, 1);
    }

    #[test]
    fn degenerate_ball_returns_zero_radius() {
        let p = problem(VectorField::van_der_pol(1.0), vec![2.0, 0.0], 0.0);
        let r = run_timestep(&p, 0.5, 0, &SlrConfig::default()).unwrap();
        assert_eq!(r.delta_guaranteed, 0.0);
        assert_eq!(r.confidence, 1.0);
        assert!(r.converged);
    }

    #[test]
    fn schedule_refinement_shrinks_radius() {
        let p = problem(VectorField::zero(2).unwrap(), vec![0.0, 0.0], 0.1);
        let coarse = SlrConfig {
            mu_schedule: vec![1.2],
            ..SlrConfig::default()
        };
        let fine = SlrConfig {
            mu_schedule: vec![1.2, 1.1],
            ..SlrConfig::default()
        };
        let a = run_timestep(&p, 1.0, 0, &coarse).unwrap();
        let b = run_timestep(&p, 1.0, 0, &fine).unwrap();
        assert!((a.delta_guaranteed - 0.12).abs() < 1e-6);
        assert!((b.delta_guaranteed - 0.11).abs() < 1e-6);
        assert!(b.samples_used >= a.samples_used);
    }

    #[test]
    fn refinement_never_grows_caps() {
        let p = problem(VectorField::van_der_pol(1.0), vec![2.0, 0.0], 0.05);
        let cfg = SlrConfig {
            mu: 1.2,
            ..SlrConfig::default()
        };
        let mut s = TimestepSolver::new(&p, 1.0, 0, &cfg).unwrap();
        s.run().unwrap();
        let before = s.result();
        s.refine(1.2).unwrap();
        assert_eq!(s.result(), before);
        s.reduce_mu(1.05).unwrap();
        let reduced = s.result();
        assert_eq!(reduced.caps.len(), before.caps.len());
        for (a, b) in reduced.caps.iter().zip(&before.caps) {
            assert!(a.radius <= b.radius);
        }
        s.run().unwrap();
        let after = s.result();
        assert!(after.delta_guaranteed <= before.delta_guaranteed);
        assert!(after.converged && after.confidence >= 0.95);
    }

    #[test]
    fn minimum_is_smallest_visited_loss() {
        let p = problem(VectorField::van_der_pol(1.0), vec![2.0, 0.0], 0.05);
        let r = run_timestep(&p, 1.0, 0, &SlrConfig::default()).unwrap();
        let min = r
            .caps
            .iter()
            .map(|c| c.loss_at_anchor)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(min, r.m_bar);
        assert_eq!(r.delta_guaranteed, -r.mu * r.m_bar);
    }
}
