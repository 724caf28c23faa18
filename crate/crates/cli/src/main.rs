//! `slt`: batch driver for path simulation, local time estimation, level
//! curve extraction, exposure profiles, and CVA, configured by a single
//! `key = value` file.
//!
//! Exit codes: 0 success (and verification PASS), 1 verification FAIL,
//! 2 configuration error, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{CliError, Ctx};
use config::Config;

const CONFIG_HELP: &str = "\
CONFIG FORMAT (line-oriented `key = value` under `[section]` headers):
  [model]     preset = brownian | arithmetic-bm | gbm | ou | custom
              mu, sigma, kappa, theta, x0 (per preset),
              mu_expr/sigma_expr (custom, expressions in t and x)
  [surface]   v = expression in t and x, or fixture = identity |
              paper-example-1 | paper-example-2 | paper-example-3
  [grid]      t = horizon (default 1), n = steps (default 4096)
  [ensemble]  npaths (default 1000), master_seed (default 42)
  [estimator] kind = occupation | tanaka, level, epsilon, side,
              z, horizon, rect = t_lo t_hi x_lo x_hi, n_seed_times, nx,
              tolerance, trace_step, newton_iters
  [exposure]  times = list | ntimes = count, method = mc | forward | both,
              density = auto | closed-form | kde, density_times,
              default = exponential | uniform | cdf, lambda, alpha,
              allow_non_martingale, cdf_file
  [output]    dir (default `out`), csv = true | false

Unset keys take the documented defaults. The window epsilon defaults to
2% of the ensemble standard deviation at the horizon.";

#[derive(Parser)]
#[command(
    name = "slt",
    version,
    about = "Local times of diffusions: estimators, level curves, exposure, CVA",
    after_help = CONFIG_HELP
)]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for path-level parallelism. Changes speed, never
    /// results.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Master seed; overrides `[ensemble] master_seed`.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an ensemble and write it to a binary file (plus CSV).
    Simulate,
    /// Estimate a local time at a level and write the mean process.
    Localtime,
    /// Extract the zero-set branches of the surface.
    Branches,
    /// Check the composed local time identity; exit 0 on PASS, 1 on FAIL.
    VerifyCvf,
    /// Expected exposure profiles by Monte Carlo and/or the forward formula.
    Ee,
    /// CVA from an expected exposure profile and a default-time model.
    Cva,
}

fn run(cli: &Cli) -> Result<i32, CliError> {
    if let Some(threads) = cli.threads {
        // Ignore a second initialization (tests may share the process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let Some(config_path) = cli.config.as_deref() else {
        return Err(CliError::Usage("--config PATH is required".into()));
    };
    let cfg = Config::load(config_path)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.str_val("output", "dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    let ctx = Ctx { cfg, out, seed_override: cli.seed };

    match cli.command {
        Command::Simulate => commands::cmd_simulate(&ctx),
        Command::Localtime => commands::cmd_localtime(&ctx),
        Command::Branches => commands::cmd_branches(&ctx),
        Command::VerifyCvf => commands::cmd_verify_cvf(&ctx),
        Command::Ee => commands::cmd_ee(&ctx),
        Command::Cva => commands::cmd_cva(&ctx),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    };
    std::process::exit(code);
}
