use serde::{Deserialize, Serialize};

use kld_core::detection::{detection_experiment, orthogonal_baseline, DetectionConfig, DetectionResult};
use kld_core::random_access::{generate_ra_scenario, init_waveform_set, ra_solve, RaGeneratorConfig, RaProblem};
use kld_core::rng::SeededRng;
use kld_core::scenario::InitKind;
use kld_core::solvers::SolverOptions;

use super::{check_solver, Context};
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::output::{num, Outputs, Table};

pub const SNR_FILE: &str = "random_access_snr.csv";
pub const T_FILE: &str = "random_access_t.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomAccessConfig {
    /// Seeds every scenario, starting point and detection run.
    pub seed: u64,
    pub generator: RaGeneratorConfig,
    /// SNRs in dB, each at the generator's sequence length.
    pub snr_grid: Vec<f64>,
    /// Sequence lengths, each at the generator's SNR.
    pub t_grid: Vec<usize>,
    pub init: InitKind,
    pub solver: SolverOptions,
    pub detection: DetectionConfig,
}

impl Default for RandomAccessConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            generator: RaGeneratorConfig::default(),
            snr_grid: vec![8.0],
            t_grid: vec![4, 8, 12],
            init: InitKind::RandomGaussian,
            solver: SolverOptions::default(),
            detection: DetectionConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Axis {
    Snr(f64),
    Length(usize),
}

impl RandomAccessConfig {
    fn points(&self) -> Vec<Axis> {
        let snr = self.snr_grid.iter().map(|&s| Axis::Snr(s));
        snr.chain(self.t_grid.iter().map(|&t| Axis::Length(t))).collect()
    }

    fn generator(&self, a: Axis) -> RaGeneratorConfig {
        match a {
            Axis::Snr(snr_db) => RaGeneratorConfig {
                snr_db,
                ..self.generator.clone()
            },
            Axis::Length(snapshots) => RaGeneratorConfig {
                snapshots,
                ..self.generator.clone()
            },
        }
    }
}

impl Config for RandomAccessConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn check(&self) -> CliResult<()> {
        if self.snr_grid.is_empty() && self.t_grid.is_empty() {
            return Err(CliError::Config("snr_grid and t_grid cannot both be empty".into()));
        }
        for a in self.points() {
            self.generator(a).check().map_err(CliError::config)?;
        }
        self.detection.check().map_err(|e| CliError::Config(format!("detection: {e}")))?;
        check_solver(&self.solver)
    }
}

struct PointResult {
    optimized: DetectionResult,
    baseline: DetectionResult,
}

fn evaluate(cfg: &RandomAccessConfig, p: &RaProblem) -> CliResult<PointResult> {
    let start = init_waveform_set(p, cfg.seed, cfg.init);
    let (opt, _) = ra_solve(p, &start, &cfg.solver).map_err(CliError::run)?;
    let base = orthogonal_baseline(p.scenario());
    let rng = SeededRng::new(cfg.seed).fork(0xDE7);
    Ok(PointResult {
        optimized: detection_experiment(p, &opt, &cfg.detection, rng).map_err(CliError::run)?,
        baseline: detection_experiment(p, &base, &cfg.detection, rng).map_err(CliError::run)?,
    })
}

fn table(axis: &str, n_devices: usize) -> Table {
    let mut header = vec!["design".to_string(), axis.to_string()];
    header.extend((1..=n_devices).map(|i| format!("p_d_{i}")));
    header.extend(["geometric_mean", "ci_low", "ci_high"].map(String::from));
    Table::with_header(header, &[])
}

fn rows(t: &mut Table, axis_value: String, r: &PointResult) {
    for (design, d) in [("optimized", &r.optimized), ("orthogonal", &r.baseline)] {
        let mut row = vec![design.to_string(), axis_value.clone()];
        row.extend(d.users.iter().map(|u| num(u.p_d.value)));
        let g = &d.geometric_mean;
        row.extend([num(g.value), num(g.ci_low), num(g.ci_high)]);
        t.push(row);
    }
}

pub fn run(cfg: &RandomAccessConfig, ctx: &Context<'_>) -> CliResult<()> {
    let axes = cfg.points();
    let problems = axes
        .iter()
        .map(|&a| {
            let sc = generate_ra_scenario(&cfg.generator(a), cfg.seed).map_err(CliError::config)?;
            RaProblem::new(sc).map_err(|e| CliError::Config(format!("scenario: {e}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let results = ctx.map(&problems, |_, p| evaluate(cfg, p))?;

    let k = cfg.generator.n_devices;
    let (mut snr, mut len) = (table("snr_db", k), table("T", k));
    for (a, r) in axes.iter().zip(&results) {
        let label = match *a {
            Axis::Snr(s) => {
                rows(&mut snr, num(s), r);
                format!("snr {s} dB")
            }
            Axis::Length(t) => {
                rows(&mut len, t.to_string(), r);
                format!("T = {t}")
            }
        };
        println!(
            "{label}: geometric-mean P_d optimized {:.4}, orthogonal {:.4}",
            r.optimized.geometric_mean.value, r.baseline.geometric_mean.value
        );
    }
    let mut out = Outputs::create(ctx.out)?;
    if snr.len() > 0 {
        out.csv(SNR_FILE, &snr)?;
    }
    if len.len() > 0 {
        out.csv(T_FILE, &len)?;
    }
    out.finish("random-access", cfg.seed, cfg)?;
    Ok(())
}
