//! Trace and summary files.
//!
//! Schema version 1:
//!
//! * `<run>.csv`: `t, rel_error, cost, alpha, noise_flag, aux_rounds`, one
//!   row per iteration starting at `t = 0`. Empty cells mean "not
//!   available"; floats are written in shortest round-trip form.
//! * `<run>.json`: sidecar with the resolved config, `f*`, final status,
//!   round totals, logged step events and the summary row.
//! * `summary.csv` / `summary.json`: one [`SummaryRow`] per run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{csv_err, io_err, json_err, Result};
use crate::problem::MetricKind;
use crate::run::{LoggedEvent, Rounds, RunOutput, RunStatus, TraceRow};
use crate::summary::{SummaryRow, SUMMARY_COLUMNS};

pub const SCHEMA_VERSION: u32 = 1;

pub const TRACE_COLUMNS: [&str; 6] = ["t", "rel_error", "cost", "alpha", "noise_flag", "aux_rounds"];

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(io_err(dir)),
        _ => Ok(()),
    }
}

/// Writes `header` followed by `rows`; the header is written even when
/// there are no rows.
fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(csv_err(path))
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    write_csv(path, &TRACE_COLUMNS, rows)
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    read_csv(path)
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_csv(path, &SUMMARY_COLUMNS, rows)
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    read_csv(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(json_err(path.display().to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path.display().to_string()))
}

/// Everything about a run except the per-iteration rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSidecar {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub metric: MetricKind,
    pub f_star: Option<f64>,
    pub fingerprint: Option<String>,
    pub status: RunStatus,
    pub divergence: Option<String>,
    pub iterations: usize,
    pub rounds: Rounds,
    pub events: Vec<LoggedEvent>,
    pub summary: SummaryRow,
}

impl RunSidecar {
    pub fn of(run: &RunOutput) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config: run.config.clone(),
            metric: run.metric,
            f_star: run.f_star,
            fingerprint: run.fingerprint.clone(),
            status: run.trace.status,
            divergence: run.trace.divergence.clone(),
            iterations: run.trace.iterations(),
            rounds: run.trace.rounds,
            events: run.trace.events.clone(),
            summary: run.summary.clone(),
        }
    }
}

/// Writes `<dir>/<name>.csv` and `<dir>/<name>.json`; returns both paths.
pub fn write_run(dir: &Path, run: &RunOutput) -> Result<(PathBuf, PathBuf)> {
    let name = run.config.run_name();
    let csv_path = dir.join(format!("{name}.csv"));
    let json_path = dir.join(format!("{name}.json"));
    write_trace_csv(&csv_path, &run.trace.rows)?;
    write_json(&json_path, &RunSidecar::of(run))?;
    Ok((csv_path, json_path))
}

/// Writes `summary.csv` and `summary.json` under `dir`.
pub fn write_summary(dir: &Path, rows: &[SummaryRow]) -> Result<(PathBuf, PathBuf)> {
    let csv_path = dir.join("summary.csv");
    let json_path = dir.join("summary.json");
    write_summary_csv(&csv_path, rows)?;
    write_json(&json_path, &rows)?;
    Ok((csv_path, json_path))
}
