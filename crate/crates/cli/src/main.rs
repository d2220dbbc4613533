//! `kld`: waveform optimization, benchmarks, Pareto sweeps, random-access
//! detection experiments and the acceptance suite.
//!
//! Exit status: 0 on success, 1 when output cannot be written, 2 on a
//! configuration error, 3 on a numerical failure or failed validation.

// `!(x <= y)` style checks reject NaN along with out-of-order values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::benchmark::FULL_SIZE;
use commands::Context;
use config::{resolve, Config, Overrides};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "kld", version, about = "KLD-maximizing waveform design experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration, or the manifest of an earlier run.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "results")]
    out: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Sets a configuration key by dotted path, e.g. `solver.epsilon=1e-8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Threads for concurrent independent runs; without it, grid points run in order.
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u32).range(1..))]
    parallel: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Runs one solver and writes its trace and final waveform.
    Optimize(Common),
    /// Times the solvers over a grid of problem sizes.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Benchmarks at 32x32 antennas and T = 50 instead of the default sizes.
        #[arg(long)]
        full_scale: bool,
    },
    /// Sweeps the sensing/communication weight.
    Pareto(Common),
    /// Compares optimized and orthogonal random-access waveforms.
    RandomAccess(Common),
    /// Checks input files and runs the acceptance criteria.
    Validate(Common),
}

fn execute<C: Config>(name: &str, common: &Common, extra: Vec<String>, run: fn(&C, &Context<'_>) -> CliResult<()>) -> CliResult<()> {
    let mut set = extra;
    set.extend(common.set.iter().cloned());
    let cfg: C = resolve(
        name,
        &Overrides {
            file: common.config.as_deref(),
            set: &set,
            seed: common.seed,
        },
    )?;
    if let Some(n) = common.parallel {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| CliError::Config(format!("--parallel: {e}")))?;
    }
    let ctx = Context {
        out: &common.out,
        parallel: common.parallel.is_some(),
    };
    run(&cfg, &ctx)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Optimize(c) => execute("optimize", &c, Vec::new(), commands::optimize::run),
        Command::Benchmark { common, full_scale } => {
            let extra = if full_scale {
                let size = serde_json::to_string(&[FULL_SIZE]).expect("sizes serialize");
                vec![format!("sizes={size}")]
            } else {
                Vec::new()
            };
            execute("benchmark", &common, extra, commands::benchmark::run)
        }
        Command::Pareto(c) => execute("pareto", &c, Vec::new(), commands::pareto::run),
        Command::RandomAccess(c) => execute("random-access", &c, Vec::new(), commands::random_access::run),
        Command::Validate(c) => execute("validate", &c, Vec::new(), commands::validate::run),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kld: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
