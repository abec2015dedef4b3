//! High-precision reference minimizer for problems without a closed-form
//! solution, cached next to the dataset it was computed for.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ipg_core::coordinator::ServerOptimizer;
use ipg_core::{AgentPool, AlphaSchedule, CostModel, IpgState, Vector};
use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, HarnessError, Result};

/// Target norm of the aggregate gradient.
pub const REFERENCE_GRAD_TOL: f64 = 1e-12;
pub const REFERENCE_MAX_ITER: usize = 100_000;
/// Stop once the best gradient norm has not improved for this many
/// iterations; rounding sets a floor that may sit above the target.
pub const REFERENCE_PATIENCE: usize = 2_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub fingerprint: String,
    pub agents: usize,
    pub f_star: f64,
    pub x_star: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Runs IPG with `δ = 1`, `β = 0`, `K(0) = 0` and the constant step
/// `1/Λ`, `Λ` the closed-form Hessian bound, keeping the iterate with the
/// smallest exact gradient norm.
pub fn solve_reference(costs: &[Arc<dyn CostModel>], fingerprint: &str) -> Result<ReferenceSolution> {
    let d = costs
        .first()
        .map(|c| c.dim())
        .ok_or_else(|| HarnessError::Config("reference run needs at least one cost".into()))?;
    let mut pool = AgentPool::from_costs(costs.to_vec(), 0.0, 0)?;
    let lambda = pool.hessian_bound().ok_or_else(|| {
        HarnessError::Config("reference run needs costs with a closed-form Hessian bound".into())
    })?;
    let mut ipg = IpgState::with_zero_preconditioner(
        Vector::zeros(d),
        1.0,
        0.0,
        AlphaSchedule::constant(1.0 / lambda),
    )?;
    let mut best = (pool.monitor_gradient(ipg.x()).norm(), ipg.x().clone(), 0usize);
    for t in 1..=REFERENCE_MAX_ITER {
        ipg.iterate(&mut pool)?;
        let g = pool.monitor_gradient(ipg.x()).norm();
        if !g.is_finite() {
            return Err(HarnessError::Metric(format!("reference run diverged at iteration {t}")));
        }
        if g < best.0 {
            best = (g, ipg.x().clone(), t);
        }
        if best.0 < REFERENCE_GRAD_TOL || t - best.2 > REFERENCE_PATIENCE {
            break;
        }
    }
    let (grad_norm, x, iterations) = best;
    let f_star = pool.monitor_value(&x);
    info!("reference solution: f* = {f_star:.15e}, |grad| = {grad_norm:.2e} after {iterations} iterations");
    Ok(ReferenceSolution {
        fingerprint: fingerprint.to_string(),
        agents: costs.len(),
        f_star,
        x_star: x.iter().copied().collect(),
        grad_norm,
        iterations,
    })
}

/// [`solve_reference`], reusing a cached result for the same fingerprint
/// and agent count.
pub fn reference_solution(
    costs: &[Arc<dyn CostModel>],
    fingerprint: &str,
    cache_dir: Option<&Path>,
) -> Result<ReferenceSolution> {
    let Some(dir) = cache_dir else {
        return solve_reference(costs, fingerprint);
    };
    let short = &fingerprint[..fingerprint.len().min(16)];
    let path = dir.join(format!("reference_{short}_m{}.json", costs.len()));
    if path.is_file() {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let cached: ReferenceSolution = serde_json::from_str(&text).map_err(json_err(path.display().to_string()))?;
        if cached.fingerprint == fingerprint && cached.agents == costs.len() {
            debug!("reusing reference solution {}", path.display());
            return Ok(cached);
        }
    }
    let solution = solve_reference(costs, fingerprint)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let text = serde_json::to_string_pretty(&solution).map_err(json_err("reference solution"))?;
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(solution)
}
