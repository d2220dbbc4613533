use serde::{Deserialize, Serialize};

use kld_core::detection::{single_user_detection, DetectionConfig};
use kld_core::isac::{generate_isac_scenario, pareto_sweep, IsacGeneratorConfig, IsacProblem, IsacVariant, SweepSettings, SweepStart};
use kld_core::rng::SeededRng;
use kld_core::scenario::{init_waveform, InitKind};
use kld_core::solvers::{SolverOptions, Status};

use super::{check_solver, Context};
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::output::{num, Outputs, Table};

pub const PARETO_FILE: &str = "pareto.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParetoConfig {
    /// Seeds the scenario, the starting waveform and the detection trials.
    pub seed: u64,
    pub generator: IsacGeneratorConfig,
    /// Ascending weights in `[0, 1]`.
    pub rho_grid: Vec<f64>,
    pub variant: IsacVariant,
    pub accelerate: bool,
    pub start: SweepStart,
    pub solver: SolverOptions,
    pub detection: DetectionConfig,
}

impl Default for ParetoConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            generator: IsacGeneratorConfig::default(),
            rho_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            variant: IsacVariant::Mm,
            accelerate: true,
            start: SweepStart::Warm,
            solver: SolverOptions::default(),
            detection: DetectionConfig::default(),
        }
    }
}

impl Config for ParetoConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn check(&self) -> CliResult<()> {
        self.generator.sensing.check().map_err(CliError::config)?;
        if self.rho_grid.is_empty() {
            return Err(CliError::Config("rho_grid must be nonempty".into()));
        }
        if self.rho_grid.iter().any(|r| !(0.0..=1.0).contains(r)) || self.rho_grid.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(CliError::Config("rho_grid must be ascending within [0, 1]".into()));
        }
        self.detection.check().map_err(|e| CliError::Config(format!("detection: {e}")))?;
        check_solver(&self.solver)
    }
}

pub fn run(cfg: &ParetoConfig, ctx: &Context<'_>) -> CliResult<()> {
    let sc = generate_isac_scenario(&cfg.generator, 0.0, cfg.seed).map_err(CliError::config)?;
    let problem = IsacProblem::new(sc).map_err(|e| CliError::Config(format!("scenario: {e}")))?;
    let x0 = init_waveform(problem.sensing().scenario(), cfg.seed, InitKind::RandomGaussian);
    let settings = SweepSettings {
        variant: cfg.variant,
        accelerate: cfg.accelerate,
        start: cfg.start,
    };
    let points = pareto_sweep(&problem, &cfg.rho_grid, &x0, &cfg.solver, settings).map_err(CliError::run)?;
    let trials = SeededRng::new(cfg.seed).fork(0xD0);
    let p_d = ctx.map(&points, |i, pt| {
        single_user_detection(problem.sensing(), &pt.waveform, &cfg.detection, trials.fork(i as u64))
            .map(|r| r.users[0].p_d.value)
            .map_err(CliError::run)
    })?;

    let mut table = Table::new(&["rho", "kld", "mi", "detection_probability", "converged_iters"], &[]);
    for (pt, pd) in points.iter().zip(p_d) {
        if pt.status != Status::Converged {
            eprintln!("warning: rho = {} stopped at the iteration limit", pt.rho);
        }
        table.push(vec![num(pt.rho), num(pt.value.kld), num(pt.value.mi), num(pd), pt.iterations.to_string()]);
        println!("rho {:.3}: kld {:.6}, mi {:.6}, p_d {:.4}", pt.rho, pt.value.kld, pt.value.mi, pd);
    }
    let mut out = Outputs::create(ctx.out)?;
    out.csv(PARETO_FILE, &table)?;
    out.finish("pareto", cfg.seed, cfg)?;
    Ok(())
}
