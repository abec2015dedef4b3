//! Grids of runs over optimizers and repetitions on one shared problem.

use ipg_core::{OptimizerKind, OptimizerSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::problem::{Env, Problem};
use crate::run::{run_on, RunOutput};
use crate::summary::{table_order, SummaryRow};

/// An optimizer by name, using the tuned parameters of the base config's
/// setting, or a fully specified one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OptimizerChoice {
    Tuned(OptimizerKind),
    Explicit(OptimizerSpec),
}

impl OptimizerChoice {
    pub fn kind(&self) -> OptimizerKind {
        match self {
            Self::Tuned(k) => *k,
            Self::Explicit(s) => s.kind(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    #[serde(default = "all_tuned")]
    pub optimizers: Vec<OptimizerChoice>,
    /// Repetition `r` runs with seed `base.seed + r`; every optimizer in a
    /// repetition sees the same `x(0)` and agent streams.
    #[serde(default = "one")]
    pub repeats: usize,
    /// Run experiments on the rayon pool.
    #[serde(default = "yes")]
    pub parallel: bool,
}

fn all_tuned() -> Vec<OptimizerChoice> {
    OptimizerKind::ALL.into_iter().map(OptimizerChoice::Tuned).collect()
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl SweepConfig {
    pub fn new(base: ExperimentConfig) -> Self {
        Self {
            base,
            optimizers: all_tuned(),
            repeats: 1,
            parallel: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(crate::error::json_err("sweep config"))
    }

    /// Resolved per-run configs, in repetition-major order.
    pub fn jobs(&self) -> Result<Vec<ExperimentConfig>> {
        let mut out = Vec::with_capacity(self.repeats * self.optimizers.len());
        for r in 0..self.repeats {
            for choice in &self.optimizers {
                let mut cfg = self.base.clone();
                cfg.seed = self.base.seed.wrapping_add(r as u64);
                cfg = match choice {
                    OptimizerChoice::Tuned(k) => cfg.with_tuned(*k)?,
                    OptimizerChoice::Explicit(spec) => {
                        cfg.optimizer = Some(spec.clone());
                        cfg
                    }
                };
                out.push(cfg.resolve()?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub runs: Vec<RunOutput>,
}

impl SweepOutput {
    /// Summary rows in table order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows: Vec<SummaryRow> = self.runs.iter().map(|r| r.summary.clone()).collect();
        table_order(&mut rows);
        rows
    }
}

/// Runs every job of `sweep` on one shared problem. Results do not depend
/// on `sweep.parallel`.
pub fn run_sweep_on(problem: &Problem, sweep: &SweepConfig) -> Result<SweepOutput> {
    let jobs = sweep.jobs()?;
    let runs = if sweep.parallel {
        jobs.par_iter().map(|cfg| run_on(problem, cfg)).collect::<Result<Vec<_>>>()?
    } else {
        jobs.iter().map(|cfg| run_on(problem, cfg)).collect::<Result<Vec<_>>>()?
    };
    Ok(SweepOutput { runs })
}

pub fn run_sweep(sweep: &SweepConfig, env: &Env) -> Result<SweepOutput> {
    let problem = Problem::build(&sweep.base, env)?;
    run_sweep_on(&problem, sweep)
}
