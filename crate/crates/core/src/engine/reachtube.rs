use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Result, SlrError};

use super::{run_timestep, ReachProblem, SlrConfig, TimestepResult};

#[derive(Clone, Debug, PartialEq)]
pub struct TimestepFailure {
    pub index: usize,
    pub t: f64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReachtubeResult {
    /// Successful timesteps in time order.
    pub timesteps: Vec<TimestepResult>,
    pub failures: Vec<TimestepFailure>,
    pub config: SlrConfig,
    pub wall_time_seconds: f64,
}

impl ReachtubeResult {
    pub fn all_converged(&self) -> bool {
        self.failures.is_empty() && self.timesteps.iter().all(|t| t.converged)
    }
}

/// Runs every time point independently on a pool of `workers` threads.
///
/// Each timestep draws from its own random stream (seed, index), so the
/// result does not depend on the worker count or scheduling.
pub fn run_reachtube(
    problem: &ReachProblem,
    times: &[f64],
    cfg: &SlrConfig,
    workers: usize,
) -> Result<ReachtubeResult> {
    cfg.validate()?;
    if let Some(w) = times.windows(2).find(|w| !(w[0] <= w[1])) {
        return Err(SlrError::Config(format!(
            "time grid must be sorted, found {} before {}",
            w[0], w[1]
        )));
    }
    if let Some(t) = times.iter().find(|t| !(**t >= problem.t0)) {
        return Err(SlrError::Config(format!(
            "time {t} precedes the initial time {}",
            problem.t0
        )));
    }
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SlrError::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<(usize, Result<TimestepResult>)> = pool.install(|| {
        times
            .par_iter()
            .enumerate()
            .map(|(j, &t)| (j, run_timestep(problem, t, j, cfg)))
            .collect()
    });
    let mut timesteps = Vec::new();
    let mut failures = Vec::new();
    for (j, outcome) in outcomes {
        match outcome {
            Ok(r) => timesteps.push(r),
            Err(e) => failures.push(TimestepFailure {
                index: j,
                t: times[j],
                error: e.to_string(),
            }),
        }
    }
    Ok(ReachtubeResult {
        timesteps,
        failures,
        config: cfg.clone(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}
