//! The `run`, `verify` and `plan` commands, independent of any argument parser.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::engine::{run_reachtube, PlanBound, PlanResult, ReachtubeResult, TimestepSolver};
use crate::error::{Result, SlrError};
use crate::geometry::Ellipsoid;
use crate::oracle::{mc_reachtube, McEstimate};
use crate::report::{projection_csv, ReachtubeReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNCONVERGED: i32 = 2;
pub const EXIT_NOT_CONTAINED: i32 = 3;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides `output.dir` (taken relative to the working directory).
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    pub workers: Option<usize>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub result: ReachtubeResult,
    pub report: ReachtubeReport,
    pub result_path: PathBuf,
    pub exit_code: i32,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs the reachtube and writes the result file, projections and log.
///
/// Exit code: 0 when every timestep converged, 2 when some ran out of
/// samples, 1 when some timestep failed outright (its error is in the result
/// file and the log, tagged with the timestep index).
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let mut slr = cfg.slr.clone();
    if let Some(seed) = opts.seed {
        slr.seed = seed;
    }
    let out_dir = opts.out_dir.clone().unwrap_or_else(|| cfg.output_dir());
    std::fs::create_dir_all(&out_dir)?;
    let problem = cfg.problem();
    let workers = opts.workers.unwrap_or_else(default_workers);
    let result = run_reachtube(&problem, &cfg.times, &slr, workers)?;
    let report = ReachtubeReport::new(
        &cfg.field,
        &problem.x0,
        problem.delta0,
        problem.t0,
        &cfg.times,
        &result,
    );
    let result_path = out_dir.join(&cfg.output.result);
    report.write(&result_path)?;
    if cfg.output.projection {
        for ts in &report.timesteps {
            let csv = projection_csv(ts, cfg.output.projection_axes, cfg.output.projection_points)?;
            std::fs::write(out_dir.join(format!("projection_{:03}.csv", ts.index)), csv)?;
        }
    }

    let mut log = String::new();
    writeln!(
        log,
        "system {:?} n={} x0={:?} delta0={} seed={} workers={}",
        report.system.kind, report.system.n, problem.x0, problem.delta0, slr.seed, workers
    )
    .ok();
    for ts in &report.timesteps {
        writeln!(
            log,
            "timestep {} t={} delta_raw={:e} delta_guaranteed={:e} confidence={:.6} samples={} gd_runs={} caps={} lipschitz={:e} ({:?}){}",
            ts.index,
            ts.t,
            ts.delta_raw,
            ts.delta_guaranteed,
            ts.confidence,
            ts.samples_used,
            ts.gd_runs,
            ts.caps_count,
            ts.lipschitz,
            ts.lipschitz_mode,
            if ts.converged { "" } else { " UNCONVERGED" }
        )
        .ok();
    }
    for f in &report.failures {
        writeln!(log, "timestep {} t={} FAILED: {}", f.index, f.t, f.error).ok();
    }
    writeln!(log, "wall time {:.3} s", result.wall_time_seconds).ok();
    std::fs::File::create(out_dir.join(&cfg.output.log))?.write_all(log.as_bytes())?;

    let exit_code = if !result.failures.is_empty() {
        EXIT_ERROR
    } else if !result.all_converged() {
        EXIT_UNCONVERGED
    } else {
        EXIT_OK
    };
    Ok(RunOutcome {
        result,
        report,
        result_path,
        exit_code,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimestepVerdict {
    pub index: usize,
    pub t: f64,
    pub delta_guaranteed: f64,
    pub estimate: McEstimate,
    /// `δ_guaranteed − max observed distance`; negative means an escape.
    pub margin: f64,
    pub contained: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub samples: usize,
    pub verdicts: Vec<TimestepVerdict>,
}

impl VerifyReport {
    pub fn all_contained(&self) -> bool {
        self.verdicts.iter().all(|v| v.contained)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for v in &self.verdicts {
            writeln!(
                s,
                "timestep {} t={} {} max_dist={:e} delta_guaranteed={:e} margin={:e}",
                v.index,
                v.t,
                if v.contained {
                    "CONTAINED"
                } else {
                    "NOT CONTAINED"
                },
                v.estimate.max_dist,
                v.delta_guaranteed,
                v.margin
            )
            .ok();
        }
        s
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_contained() {
            EXIT_OK
        } else {
            EXIT_NOT_CONTAINED
        }
    }
}

fn same(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn check_matches(cfg: &RunConfig, rep: &ReachtubeReport) -> Result<()> {
    let mut errs = Vec::new();
    if rep.system.kind != cfg.field.kind() {
        errs.push(format!(
            "system kind {:?} in the result, {:?} in the config",
            rep.system.kind,
            cfg.field.kind()
        ));
    }
    if rep.system.n != cfg.field.dim() {
        errs.push(format!(
            "n = {} in the result, {} in the config",
            rep.system.n,
            cfg.field.dim()
        ));
    }
    let params = cfg.field.params();
    if rep.system.params.len() != params.len()
        || rep
            .system
            .params
            .iter()
            .zip(&params)
            .any(|(a, b)| !same(*a, *b))
    {
        errs.push("field parameters differ".into());
    }
    if rep.initial.x0.len() != cfg.initial.x0.len()
        || rep
            .initial
            .x0
            .iter()
            .zip(&cfg.initial.x0)
            .any(|(a, b)| !same(*a, *b))
        || !same(rep.initial.delta0, cfg.initial.delta0)
        || !same(rep.initial.t0, cfg.t0)
    {
        errs.push("initial set differs".into());
    }
    if rep.times.len() != cfg.times.len()
        || rep.times.iter().zip(&cfg.times).any(|(a, b)| !same(*a, *b))
    {
        errs.push("time grid differs".into());
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(SlrError::Schema(format!(
            "result file does not match the config: {}",
            errs.join("; ")
        )))
    }
}

/// Monte Carlo check of every reachset in a result file against the system
/// of `cfg`.
pub fn verify(
    cfg: &RunConfig,
    result_path: &Path,
    samples: usize,
    seed: u64,
) -> Result<VerifyReport> {
    if samples == 0 {
        return Err(SlrError::Config("--mc-samples must be at least 1".into()));
    }
    let rep = ReachtubeReport::read(result_path)?;
    check_matches(cfg, &rep)?;
    verify_report(cfg, &rep, samples, seed)
}

pub fn verify_report(
    cfg: &RunConfig,
    rep: &ReachtubeReport,
    samples: usize,
    seed: u64,
) -> Result<VerifyReport> {
    let times: Vec<f64> = rep.timesteps.iter().map(|t| t.t).collect();
    let ellipsoids: Vec<Ellipsoid> = rep.timesteps.iter().map(|t| t.ellipsoid()).collect();
    let estimates = mc_reachtube(
        &cfg.field,
        &rep.initial.x0,
        rep.initial.delta0,
        rep.initial.t0,
        &times,
        &ellipsoids,
        samples,
        seed,
    )?;
    let verdicts = rep
        .timesteps
        .iter()
        .zip(estimates)
        .map(|(ts, estimate)| TimestepVerdict {
            index: ts.index,
            t: ts.t,
            delta_guaranteed: ts.delta_guaranteed,
            margin: ts.delta_guaranteed - estimate.max_dist,
            contained: estimate.max_dist <= ts.delta_guaranteed,
            estimate,
        })
        .collect();
    Ok(VerifyReport { samples, verdicts })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimestepPlan {
    pub index: usize,
    pub t: f64,
    pub lipschitz: f64,
    pub first_loss: f64,
    pub plan: PlanResult,
}

/// Sample budgets per timestep from the whole-ball Lipschitz bound and the
/// first sample's loss (the same first sample a run with this seed draws).
pub fn plan(cfg: &RunConfig, seed: Option<u64>) -> Result<Vec<TimestepPlan>> {
    let mut slr = cfg.slr.clone();
    if let Some(s) = seed {
        slr.seed = s;
    }
    let problem = cfg.problem();
    cfg.times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let mut solver = TimestepSolver::new(&problem, t, j, &slr)?;
            let plan = solver.plan()?;
            Ok(TimestepPlan {
                index: j,
                t,
                lipschitz: solver.lipschitz(),
                first_loss: solver.result().first_loss,
                plan,
            })
        })
        .collect()
}

pub fn render_plan(plans: &[TimestepPlan]) -> String {
    let mut s = String::new();
    for p in plans {
        let n = match p.plan.n_max {
            PlanBound::Finite(n) => n.to_string(),
            PlanBound::Unbounded => "unbounded".into(),
        };
        writeln!(
            s,
            "timestep {} t={} n_max={} lipschitz={:e} first_loss={:e} r_bound={:e} p={:e}{}",
            p.index,
            p.t,
            n,
            p.lipschitz,
            p.first_loss,
            p.plan.r_bound,
            p.plan.inner_probability,
            if p.plan.clamped {
                " (hemisphere clamp)"
            } else {
                ""
            }
        )
        .ok();
    }
    s
}
