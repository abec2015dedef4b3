//! One summary row per run, computed only from the emitted trace columns.

use ipg_core::OptimizerKind;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{final_sse, iterations_to_tol, rel_est_cost};
use crate::problem::MetricKind;
use crate::run::{RunStatus, TraceRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub mode: String,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub eps_tol: f64,
    pub iterations_to_tol: Option<usize>,
    /// `iterations_to_tol`, or `>max_iter` when the tolerance was never held.
    pub iterations: String,
    /// Metric value once the cost settled; `inf` after divergence.
    #[serde(serialize_with = "ser_extended", deserialize_with = "de_extended")]
    pub sse: f64,
    pub sse_settled: bool,
    pub test_error: Option<f64>,
    pub status: RunStatus,
    pub total_rounds: u64,
}

/// Column order of the summary CSV.
pub const SUMMARY_COLUMNS: [&str; 12] = [
    "dataset",
    "mode",
    "optimizer",
    "seed",
    "eps_tol",
    "iterations_to_tol",
    "iterations",
    "sse",
    "sse_settled",
    "test_error",
    "status",
    "total_rounds",
];

/// Writes non-finite values as strings so JSON can carry them.
fn ser_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&v.to_string())
    }
}

fn de_extended<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        Num(f64),
        Text(String),
    }
    match Either::deserialize(d)? {
        Either::Num(v) => Ok(v),
        Either::Text(s) => s.trim().parse().map_err(serde::de::Error::custom),
    }
}

/// The series the stopping rules look at.
pub fn metric_series(rows: &[TraceRow], metric: MetricKind, f_star: Option<f64>) -> Result<Vec<f64>> {
    match metric {
        MetricKind::RelError => rows
            .iter()
            .map(|r| {
                r.rel_error.ok_or_else(|| {
                    HarnessError::Metric(format!("row {} has no relative error", r.t))
                })
            })
            .collect(),
        MetricKind::RelCost => {
            let f_star = f_star.ok_or_else(|| HarnessError::Metric("f* is not known".into()))?;
            let costs: Vec<f64> = rows.iter().map(|r| r.cost).collect();
            rel_est_cost(&costs, f_star)
        }
    }
}

/// Applies the tolerance and settling rules of `cfg` to a trace.
pub fn summarize(
    cfg: &ExperimentConfig,
    metric: MetricKind,
    f_star: Option<f64>,
    rows: &[TraceRow],
    status: RunStatus,
    total_rounds: u64,
    test_error: Option<f64>,
) -> Result<SummaryRow> {
    let eps_tol = cfg
        .eps_tol
        .ok_or_else(|| HarnessError::Config("summary needs a resolved eps_tol".into()))?;
    let series = metric_series(rows, metric, f_star)?;
    let costs: Vec<f64> = rows.iter().map(|r| r.cost).collect();
    let hit = iterations_to_tol(&series, eps_tol, cfg.tol_window);
    let sse = final_sse(&series, &costs, status == RunStatus::Diverged, cfg.sse.delta, cfg.sse.window);
    let optimizer = cfg
        .optimizer
        .as_ref()
        .ok_or_else(|| HarnessError::Config("summary needs an optimizer".into()))?
        .kind();
    Ok(SummaryRow {
        dataset: cfg.problem.label().to_string(),
        mode: cfg.mode.label().to_string(),
        optimizer,
        seed: cfg.seed,
        eps_tol,
        iterations_to_tol: hit,
        iterations: hit.map_or_else(|| format!(">{}", cfg.max_iter), |t| t.to_string()),
        sse: sse.value,
        sse_settled: sse.settled,
        test_error,
        status,
        total_rounds,
    })
}

/// Orders rows by dataset and mode as given, then optimizers in reporting
/// order, then seed.
pub fn table_order(rows: &mut [SummaryRow]) {
    let mut groups: Vec<(String, String)> = Vec::new();
    for r in rows.iter() {
        let key = (r.dataset.clone(), r.mode.clone());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    rows.sort_by_key(|r| {
        let g = groups
            .iter()
            .position(|k| k.0 == r.dataset && k.1 == r.mode)
            .unwrap_or(usize::MAX);
        (g, r.optimizer, r.seed)
    });
}

/// Median of `iterations_to_tol` over the rows of one optimizer, with
/// unreached tolerances counted as `cap + 1`.
pub fn median_iterations(rows: &[SummaryRow], kind: OptimizerKind, cap: usize) -> Option<f64> {
    let mut v: Vec<usize> = rows
        .iter()
        .filter(|r| r.optimizer == kind)
        .map(|r| r.iterations_to_tol.unwrap_or(cap + 1))
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(kind: OptimizerKind, seed: u64, hit: Option<usize>) -> SummaryRow {
        SummaryRow {
            dataset: "nqm".into(),
            mode: "full".into(),
            optimizer: kind,
            seed,
            eps_tol: 1e-3,
            iterations_to_tol: hit,
            iterations: hit.map_or(">100".into(), |t| t.to_string()),
            sse: f64::INFINITY,
            sse_settled: false,
            test_error: None,
            status: RunStatus::Diverged,
            total_rounds: 3,
        }
    }

    #[test]
    fn infinite_sse_survives_json() {
        let r = row(OptimizerKind::Bfgs, 0, None);
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"sse\":\"inf\""));
        assert_eq!(serde_json::from_str::<SummaryRow>(&text).unwrap(), r);
    }

    #[test]
    fn median_counts_misses_above_cap() {
        let rows: Vec<SummaryRow> = [Some(5), None, Some(9)]
            .into_iter()
            .enumerate()
            .map(|(s, h)| row(OptimizerKind::Gd, s as u64, h))
            .collect();
        assert_eq!(median_iterations(&rows, OptimizerKind::Gd, 100), Some(9.0));
        assert_eq!(median_iterations(&rows, OptimizerKind::Ipg, 100), None);
    }

    #[test]
    fn table_order_follows_reporting_order() {
        let mut rows: Vec<SummaryRow> = OptimizerKind::ALL
            .into_iter()
            .rev()
            .map(|k| row(k, 0, None))
            .collect();
        table_order(&mut rows);
        let order: Vec<OptimizerKind> = rows.iter().map(|r| r.optimizer).collect();
        assert_eq!(order, OptimizerKind::ALL);
    }
}
