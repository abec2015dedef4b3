//! `ipgd`: run, sweep, verify and ingest from the command line.
//!
//! ```text
//! ipgd run    --config nqm.json --optimizer ipg --out runs/
//! ipgd sweep  --config mnist_sweep.json --out runs/mnist
//! ipgd verify
//! ipgd ingest --dataset mnist
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ipg_core::OptimizerKind;
use ipg_datapipe::{prepare, DatasetKind, DatasetSpec};
use ipg_harness::emit::{write_run, write_summary};
use ipg_harness::problem::{Env, DATA_DIR_ENV};
use ipg_harness::{run_experiment, run_sweep, verify, ExperimentConfig, SummaryRow, SweepConfig};
use log::info;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "ipgd", version, about = "Iteratively pre-conditioned gradient descent experiments")]
struct Cli {
    /// Dataset root.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = "data")]
    data_dir: PathBuf,
    /// Recompute designs and reference solutions instead of using the cache.
    #[arg(long, global = true)]
    no_cache: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Optimizer name; replaces the config's optimizer with its tuned
    /// parameters.
    #[arg(long)]
    optimizer: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run(RunArgs),
    /// Run a grid of optimizers and repetitions over one problem.
    Sweep(RunArgs),
    /// Check the convergence theory on small quadratics.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build and cache the design matrices for a dataset.
    Ingest {
        #[arg(long, value_parser = parse_dataset)]
        dataset: DatasetKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_dataset(s: &str) -> std::result::Result<DatasetKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "mnist" => Ok(DatasetKind::Mnist),
        "cifar10" | "cifar-10" | "cifar" => Ok(DatasetKind::Cifar10),
        other => Err(format!("unknown dataset {other:?}")),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn apply_overrides(cfg: &mut ExperimentConfig, args: &RunArgs) -> Result<()> {
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.max_iter {
        cfg.max_iter = n;
    }
    if let Some(name) = &args.optimizer {
        let kind: OptimizerKind = name.parse()?;
        *cfg = cfg.clone().with_tuned(kind)?;
    }
    Ok(())
}

fn print_row(r: &SummaryRow) {
    let test = r.test_error.map_or("-".to_string(), |e| format!("{e:.4}"));
    println!(
        "{:<10} {:<10} {:<5} seed {:<4} eps {:<8.1e} iters {:<8} sse {:<10.3e} test {:<7} {}",
        r.dataset, r.mode, r.optimizer.label(), r.seed, r.eps_tol, r.iterations, r.sse, test, r.status
    );
}

fn env(cli: &Cli) -> Env {
    let env = Env::new(&cli.data_dir);
    if cli.no_cache {
        env.without_cache()
    } else {
        env
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match try_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn try_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(args) => {
            let mut cfg = ExperimentConfig::from_json(&read(&args.config)?)?;
            apply_overrides(&mut cfg, args)?;
            let out_dir = cfg.output.dir.clone().unwrap_or_else(|| args.out.clone());
            let run = run_experiment(&cfg, &env(&cli))?;
            let (csv, json) = write_run(&out_dir, &run)?;
            print_row(&run.summary);
            info!("wrote {} and {}", csv.display(), json.display());
        }
        Command::Sweep(args) => {
            let mut sweep = SweepConfig::from_json(&read(&args.config)?)?;
            if let Some(name) = &args.optimizer {
                let kind: OptimizerKind = name.parse()?;
                sweep.optimizers.retain(|c| c.kind() == kind);
                if sweep.optimizers.is_empty() {
                    bail!("sweep has no {kind} entry");
                }
            }
            if let Some(seed) = args.seed {
                sweep.base.seed = seed;
            }
            if let Some(n) = args.max_iter {
                sweep.base.max_iter = n;
            }
            let out_dir = sweep.base.output.dir.clone().unwrap_or_else(|| args.out.clone());
            let out = run_sweep(&sweep, &env(&cli))?;
            for run in &out.runs {
                write_run(&out_dir, run)?;
            }
            let rows = out.summary();
            rows.iter().for_each(print_row);
            let (csv, _) = write_summary(&out_dir, &rows)?;
            info!("wrote {} runs and {}", out.runs.len(), csv.display());
        }
        Command::Verify { seed } => {
            let reports = verify::all_suites(*seed)?;
            for r in &reports {
                println!("{} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if reports.iter().any(|r| !r.pass) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Ingest { dataset, seed } => {
            let env = env(&cli);
            let spec = DatasetSpec::new(*dataset, *seed);
            let dir = {
                let nested = env.data_dir.join(dataset.subdir());
                if nested.is_dir() {
                    nested
                } else {
                    env.data_dir.clone()
                }
            };
            let data = prepare(&spec, &dir, env.cache_dir.as_deref())?;
            println!(
                "{}: train {}x{}, test {}x{}, fingerprint {}",
                dataset.subdir(),
                data.train.nrows(),
                data.train.ncols(),
                data.test.nrows(),
                data.test.ncols(),
                &data.fingerprint[..16]
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
