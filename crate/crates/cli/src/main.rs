use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slr_core::runner::{self, RunOptions, EXIT_ERROR};
use slr_core::{parse_config, RunConfig};

/// Stochastic reachtubes for ODEs and neural ODEs.
#[derive(Parser)]
#[command(name = "slr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the reachtube described by a config file.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output.dir`.
        #[arg(long, env = "SLR_OUTPUT_DIR")]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for independent timesteps.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        parallel: Option<u64>,
    },
    /// Check a result file against Monte Carlo endpoints.
    Verify {
        config: PathBuf,
        result: PathBuf,
        #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
        mc_samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print per-timestep sample budgets.
    Plan {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: &Path) -> Result<RunConfig, slr_core::SlrError> {
    parse_config(path)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            parallel,
        } => load(&config).and_then(|cfg| {
            let out = runner::run(
                &cfg,
                &RunOptions {
                    out_dir: out,
                    seed,
                    workers: parallel.map(|p| p as usize),
                },
            )?;
            for f in &out.report.failures {
                eprintln!("timestep {} (t = {}) failed: {}", f.index, f.t, f.error);
            }
            println!("{}", out.result_path.display());
            Ok(out.exit_code)
        }),
        Command::Verify {
            config,
            result,
            mc_samples,
            seed,
        } => load(&config).and_then(|cfg| {
            let rep = runner::verify(&cfg, &result, mc_samples as usize, seed)?;
            print!("{}", rep.render());
            Ok(rep.exit_code())
        }),
        Command::Plan { config, seed } => load(&config).and_then(|cfg| {
            print!("{}", runner::render_plan(&runner::plan(&cfg, seed)?));
            Ok(0)
        }),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
