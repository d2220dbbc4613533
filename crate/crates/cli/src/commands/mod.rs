pub mod benchmark;
pub mod optimize;
pub mod pareto;
pub mod random_access;
pub mod validate;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use kld_core::accel::a_mm_kld;
use kld_core::scenario::{KldProblem, Waveform};
use kld_core::solvers::{fp_kld, mm_kld, SolverOptions, SolverTrace};

use crate::error::{CliError, CliResult};

/// Settings shared by every command.
pub struct Context<'a> {
    pub out: &'a Path,
    /// Run independent grid points concurrently.
    pub parallel: bool,
}

impl Context<'_> {
    /// Maps over independent work items, concurrently when requested.
    /// Results keep the input order either way.
    pub fn map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(usize, &T) -> CliResult<R> + Sync + Send) -> CliResult<Vec<R>> {
        if self.parallel {
            items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
        } else {
            items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Fp,
    Mm,
    Amm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Fp, Algorithm::Mm, Algorithm::Amm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fp => "fp",
            Self::Mm => "mm",
            Self::Amm => "amm",
        }
    }

    pub fn solve(
        self,
        p: &KldProblem,
        x0: &Waveform,
        opts: &SolverOptions,
        max_backtracks: usize,
    ) -> CliResult<(Waveform, SolverTrace)> {
        match self {
            Self::Fp => fp_kld(p, x0, opts),
            Self::Mm => mm_kld(p, x0, opts),
            Self::Amm => a_mm_kld(p, x0, opts, max_backtracks),
        }
        .map_err(CliError::run)
    }
}

pub fn check_solver(opts: &SolverOptions) -> CliResult<()> {
    opts.check().map_err(|e| CliError::Config(format!("solver: {e}")))
}
