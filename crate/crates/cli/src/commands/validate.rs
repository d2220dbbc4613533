use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use kld_core::io::{load_ra_scenario, load_scenario, load_waveform};
use kld_core::random_access::RaProblem;
use kld_core::scenario::KldProblem;
use kld_core::validation::{criteria, run_all};

use super::Context;
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::output::{num, Outputs, Table};

pub const REPORT_FILE: &str = "validation.csv";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    /// Base seed of the acceptance criteria.
    pub seed: u64,
    /// Criterion ids to run; empty runs all of them.
    pub criteria: Vec<String>,
    pub scenario_files: Vec<PathBuf>,
    pub ra_scenario_files: Vec<PathBuf>,
    pub waveform_files: Vec<PathBuf>,
}

impl Config for ValidateConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn check(&self) -> CliResult<()> {
        let known: Vec<&str> = criteria().iter().map(|c| c.id).collect();
        for id in &self.criteria {
            if !known.contains(&id.as_str()) {
                return Err(CliError::Config(format!("unknown criterion {id:?}; known: {}", known.join(", "))));
            }
        }
        Ok(())
    }
}

fn file_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

fn check_files(cfg: &ValidateConfig) -> CliResult<()> {
    for path in &cfg.scenario_files {
        let sc = load_scenario(path).map_err(|e| file_error(path, e))?;
        KldProblem::new(sc).map_err(|e| file_error(path, e))?;
        println!("ok {}", path.display());
    }
    for path in &cfg.ra_scenario_files {
        let sc = load_ra_scenario(path).map_err(|e| file_error(path, e))?;
        RaProblem::new(sc).map_err(|e| file_error(path, e))?;
        println!("ok {}", path.display());
    }
    for path in &cfg.waveform_files {
        load_waveform(path).map_err(|e| file_error(path, e))?;
        println!("ok {}", path.display());
    }
    Ok(())
}

/// The report is written either way; the manifest only when every criterion passed.
pub fn run(cfg: &ValidateConfig, ctx: &Context<'_>) -> CliResult<()> {
    check_files(cfg)?;
    let reports = run_all(cfg.seed, &cfg.criteria);
    let mut table = Table::new(&["criterion", "passed", "seconds", "detail"], &["seconds", "detail"]);
    for r in &reports {
        println!("{r}");
        table.push(vec![r.id.into(), r.passed.to_string(), num(r.seconds), r.detail.clone()]);
    }
    let mut out = Outputs::create(ctx.out)?;
    out.csv(REPORT_FILE, &table)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    if !failed.is_empty() {
        return Err(CliError::Numerical(format!("criteria failed: {}", failed.join(", "))));
    }
    out.finish("validate", cfg.seed, cfg)?;
    Ok(())
}
