use serde::{Deserialize, Serialize};

use kld_core::accel::DEFAULT_MAX_BACKTRACKS;
use kld_core::scenario::{init_waveform, GeneratorConfig, InitKind};
use kld_core::solvers::SolverOptions;

use super::optimize::scenario;
use super::{check_solver, Algorithm, Context};
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::output::{num, Outputs, Table};

pub const BENCHMARK_FILE: &str = "benchmark.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Size {
    pub n_tx: usize,
    pub n_rx: usize,
    pub snapshots: usize,
}

/// Problem size used by `--full-scale`.
pub const FULL_SIZE: Size = Size {
    n_tx: 32,
    n_rx: 32,
    snapshots: 50,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    /// Seeds the scenarios; repetition `r` starts from the waveform seeded by `seed + r`.
    pub seed: u64,
    pub sizes: Vec<Size>,
    pub algorithms: Vec<Algorithm>,
    pub repetitions: usize,
    pub snr_db: f64,
    pub solver: SolverOptions,
    pub max_backtracks: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sizes: vec![Size {
                n_tx: 16,
                n_rx: 16,
                snapshots: 32,
            }],
            algorithms: Algorithm::ALL.to_vec(),
            repetitions: 3,
            snr_db: 7.0,
            solver: SolverOptions::default(),
            max_backtracks: DEFAULT_MAX_BACKTRACKS,
        }
    }
}

impl BenchmarkConfig {
    fn generator(&self, s: Size) -> GeneratorConfig {
        GeneratorConfig {
            snr_db: self.snr_db,
            ..GeneratorConfig::with_dims(s.n_tx, s.n_rx, s.snapshots)
        }
    }
}

impl Config for BenchmarkConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn check(&self) -> CliResult<()> {
        if self.repetitions < 3 {
            return Err(CliError::Config(format!("repetitions must be at least 3, got {}", self.repetitions)));
        }
        if self.sizes.is_empty() || self.algorithms.is_empty() {
            return Err(CliError::Config("sizes and algorithms must be nonempty".into()));
        }
        for &s in &self.sizes {
            self.generator(s).check().map_err(CliError::config)?;
        }
        check_solver(&self.solver)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Repetitions always run one at a time so that timings do not compete.
pub fn run(cfg: &BenchmarkConfig, ctx: &Context<'_>) -> CliResult<()> {
    let problems = cfg
        .sizes
        .iter()
        .map(|&s| scenario(None, &cfg.generator(s), cfg.seed))
        .collect::<CliResult<Vec<_>>>()?;
    let mut table = Table::new(
        &["algorithm", "n_tx", "n_rx", "snapshots", "median_iter_s", "iterations", "total_s"],
        &["median_iter_s", "total_s"],
    );
    for (&size, p) in cfg.sizes.iter().zip(&problems) {
        let mut totals = vec![Vec::new(); cfg.algorithms.len()];
        for rep in 0..cfg.repetitions {
            let x0 = init_waveform(p.scenario(), cfg.seed + rep as u64, InitKind::RandomGaussian);
            for (a, &alg) in cfg.algorithms.iter().enumerate() {
                let (_, trace) = alg.solve(p, &x0, &cfg.solver, cfg.max_backtracks)?;
                totals[a].push(trace.total_seconds());
                table.push(vec![
                    alg.name().into(),
                    size.n_tx.to_string(),
                    size.n_rx.to_string(),
                    size.snapshots.to_string(),
                    num(median(trace.per_iteration_seconds())),
                    trace.iterations.to_string(),
                    num(trace.total_seconds()),
                ]);
            }
        }
        for (a, &alg) in cfg.algorithms.iter().enumerate() {
            println!(
                "{}x{}x{} {}: median total {:.4} s",
                size.n_tx,
                size.n_rx,
                size.snapshots,
                alg.name(),
                median(totals[a].clone())
            );
        }
    }
    let mut out = Outputs::create(ctx.out)?;
    out.csv(BENCHMARK_FILE, &table)?;
    out.finish("benchmark", cfg.seed, cfg)?;
    Ok(())
}
