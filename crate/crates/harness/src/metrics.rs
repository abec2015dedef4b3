//! Relative metrics and stopping rules. All are pure functions of the
//! series they are given, so they can be re-run on an emitted trace.

use ipg_core::Vector;
use ipg_datapipe::DesignMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// `||x(t)−x*|| / ||x(0)−x*||` for every iterate.
pub fn rel_est_error(iterates: &[Vector], x_star: &Vector, x0: &Vector) -> Result<Vec<f64>> {
    let denom = (x0 - x_star).norm();
    if !(denom > 0.0) {
        return Err(HarnessError::Metric(
            "relative error undefined: x(0) equals x*".into(),
        ));
    }
    Ok(iterates.iter().map(|x| (x - x_star).norm() / denom).collect())
}

/// `(f(x(t))−f*) / f*` for every cost value.
pub fn rel_est_cost(costs: &[f64], f_star: f64) -> Result<Vec<f64>> {
    if !(f_star > 0.0) {
        return Err(HarnessError::Metric(format!(
            "relative cost undefined for f* = {f_star}; use the relative error"
        )));
    }
    Ok(costs.iter().map(|f| (f - f_star) / f_star).collect())
}

/// Smallest `t` with `series[t..t+window]` all within `eps_tol`.
pub fn iterations_to_tol(series: &[f64], eps_tol: f64, window: usize) -> Option<usize> {
    let window = window.max(1);
    let mut run = 0;
    for (t, &v) in series.iter().enumerate() {
        if v <= eps_tol {
            run += 1;
            if run == window {
                return Some(t + 1 - window);
            }
        } else {
            run = 0;
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SseOutcome {
    /// Metric value at the settled index; `∞` for a diverged run.
    pub value: f64,
    pub index: Option<usize>,
    pub settled: bool,
}

/// First `t` with `|cost[k+1]−cost[k]| < delta` for every `k` in
/// `t..t+window`.
pub fn settle_index(costs: &[f64], delta: f64, window: usize) -> Option<usize> {
    let window = window.max(1);
    let mut run = 0;
    for k in 0..costs.len().saturating_sub(1) {
        if (costs[k + 1] - costs[k]).abs() < delta {
            run += 1;
            if run == window {
                return Some(k + 1 - window);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Final metric value once the cost has settled. A run that never settles
/// reports its last value with `settled = false`.
pub fn final_sse(series: &[f64], costs: &[f64], diverged: bool, delta: f64, window: usize) -> SseOutcome {
    if diverged {
        return SseOutcome {
            value: f64::INFINITY,
            index: None,
            settled: false,
        };
    }
    match settle_index(costs, delta, window) {
        Some(t) => SseOutcome {
            value: series[t],
            index: Some(t),
            settled: true,
        },
        None => SseOutcome {
            value: series.last().copied().unwrap_or(f64::NAN),
            index: series.len().checked_sub(1),
            settled: false,
        },
    }
}

/// Fraction of rows with `sign(aᵀx) ≠ b`; a zero margin counts as an error.
pub fn test_error(x: &Vector, design: &DesignMatrix) -> f64 {
    let n = design.nrows();
    if n == 0 {
        return 0.0;
    }
    let margins = &design.a * x;
    let wrong = margins
        .iter()
        .zip(design.b.iter())
        .filter(|(m, b)| !(*m * *b > 0.0))
        .count();
    wrong as f64 / n as f64
}
