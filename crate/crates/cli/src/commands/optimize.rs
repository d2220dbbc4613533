use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use kld_core::accel::DEFAULT_MAX_BACKTRACKS;
use kld_core::io::load_scenario;
use kld_core::scenario::{generate_scenario, init_waveform, GeneratorConfig, InitKind, KldProblem, SensingScenario};
use kld_core::solvers::SolverOptions;

use super::{check_solver, Algorithm, Context};
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::output::{num, Outputs, Table};

pub const TRACE_FILE: &str = "trace.csv";
pub const WAVEFORM_FILE: &str = "waveform.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeConfig {
    /// Seeds the generated scenario and the starting waveform.
    pub seed: u64,
    pub algorithm: Algorithm,
    pub generator: GeneratorConfig,
    /// Scenario JSON to use instead of the generator.
    pub scenario_file: Option<PathBuf>,
    pub init: InitKind,
    pub solver: SolverOptions,
    pub max_backtracks: usize,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            algorithm: Algorithm::Amm,
            generator: GeneratorConfig::default(),
            scenario_file: None,
            init: InitKind::RandomGaussian,
            solver: SolverOptions::default(),
            max_backtracks: DEFAULT_MAX_BACKTRACKS,
        }
    }
}

impl Config for OptimizeConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn check(&self) -> CliResult<()> {
        if self.scenario_file.is_none() {
            self.generator.check().map_err(CliError::config)?;
        }
        check_solver(&self.solver)
    }
}

/// Loads or generates the sensing scenario. Failures are configuration errors.
pub fn scenario(file: Option<&PathBuf>, gen: &GeneratorConfig, seed: u64) -> CliResult<KldProblem> {
    let sc: SensingScenario = match file {
        Some(path) => load_scenario(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => generate_scenario(gen, seed).map_err(CliError::config)?,
    };
    KldProblem::new(sc).map_err(|e| CliError::Config(format!("scenario: {e}")))
}

pub fn run(cfg: &OptimizeConfig, ctx: &Context<'_>) -> CliResult<()> {
    let problem = scenario(cfg.scenario_file.as_ref(), &cfg.generator, cfg.seed)?;
    let x0 = init_waveform(problem.scenario(), cfg.seed, cfg.init);
    let (w, trace) = cfg.algorithm.solve(&problem, &x0, &cfg.solver, cfg.max_backtracks)?;

    let step = match cfg.algorithm {
        Algorithm::Fp => &trace.mu_per_iter,
        Algorithm::Mm => &Vec::new(),
        Algorithm::Amm => &trace.gamma_per_iter,
    };
    let mut table = Table::new(&["iter", "objective", "elapsed_s", "mu_or_gamma"], &["elapsed_s"]);
    for (k, (f, t)) in trace.objective_per_iter.iter().zip(&trace.elapsed_seconds_per_iter).enumerate() {
        let extra = k.checked_sub(1).and_then(|i| step.get(i)).map(|&v| num(v)).unwrap_or_default();
        table.push(vec![k.to_string(), num(*f), num(*t), extra]);
    }
    let mut out = Outputs::create(ctx.out)?;
    out.csv(TRACE_FILE, &table)?;
    out.waveform(WAVEFORM_FILE, &w)?;
    out.finish("optimize", cfg.seed, cfg)?;
    println!(
        "{}: {} iterations ({:?}), objective {:.10}, power {:.6}",
        cfg.algorithm.name(),
        trace.iterations,
        trace.status,
        trace.final_objective(),
        trace.final_power
    );
    Ok(())
}
