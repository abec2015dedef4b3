//! Turning a [`ProblemSpec`] into local costs, a known or reference
//! minimizer and, for classification problems, a held-out design.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ipg_core::coordinator::GaussianNoise;
use ipg_core::costs::{nqm_build, nqm_hessian_diag};
use ipg_core::{CostModel, Matrix, QuadraticCost, Vector};
use ipg_datapipe::{prepare, DesignMatrix};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, HessianSpec, ProblemSpec};
use crate::error::{HarnessError, Result};
use crate::reference::{reference_solution, ReferenceSolution};

/// Environment variable naming the dataset root.
pub const DATA_DIR_ENV: &str = "IPGD_DATA_DIR";

/// Where datasets and caches live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Env {
    pub data_dir: PathBuf,
    /// Design matrices and reference solutions; no caching when `None`.
    pub cache_dir: Option<PathBuf>,
}

impl Env {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        let data_dir = data_dir.into();
        Self {
            cache_dir: Some(data_dir.join(".cache")),
            data_dir,
        }
    }

    /// `$IPGD_DATA_DIR`, else `./data`.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from))
    }

    pub fn without_cache(mut self) -> Self {
        self.cache_dir = None;
        self
    }
}

/// Which relative metric a problem is judged by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// `||x(t)−x*|| / ||x(0)−x*||`
    RelError,
    /// `(f(x(t))−f*) / f*`
    RelCost,
}

/// Gradient-query corruption attached to a problem.
#[derive(Debug, Clone, PartialEq)]
pub enum GradientNoise {
    /// One draw added to the aggregated gradient.
    Aggregate(GaussianNoise),
    /// One draw per agent, indexed by agent id.
    PerAgent(Vec<GaussianNoise>),
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub label: String,
    pub costs: Vec<Arc<dyn CostModel>>,
    pub x_star: Option<Vector>,
    pub f_star: Option<f64>,
    pub metric: MetricKind,
    pub test: Option<DesignMatrix>,
    pub gradient_noise: Option<GradientNoise>,
    /// Dataset fingerprint for logistic problems.
    pub fingerprint: Option<String>,
}

impl Problem {
    pub fn dim(&self) -> usize {
        self.costs[0].dim()
    }

    pub fn agents(&self) -> usize {
        self.costs.len()
    }

    /// Builds the problem named by `cfg` over `cfg.agents` agents.
    pub fn build(cfg: &ExperimentConfig, env: &Env) -> Result<Self> {
        let m = cfg.agents;
        match &cfg.problem {
            ProblemSpec::Nqm {
                d,
                noise_scale,
                per_agent_noise,
            } => nqm(*d, m, *noise_scale, *per_agent_noise),
            ProblemSpec::CustomQuadratic { hessian, x_star } => custom_quadratic(hessian, x_star.as_deref(), m),
            ProblemSpec::Mnist(img) | ProblemSpec::Cifar10(img) => {
                let kind = cfg.problem.dataset_kind().expect("image problem");
                let spec = img.dataset_spec(kind);
                let dir = dataset_dir(&env.data_dir, kind.subdir());
                let data = prepare(&spec, &dir, env.cache_dir.as_deref())?;
                let parts = data.train.logistic_parts(m)?;
                let costs: Vec<Arc<dyn CostModel>> = parts
                    .into_iter()
                    .map(|c| Arc::new(c) as Arc<dyn CostModel>)
                    .collect();
                let reference = reference_solution(&costs, &data.fingerprint, env.cache_dir.as_deref())?;
                Ok(Self::logistic(cfg.problem.label(), costs, reference, data.test, data.fingerprint))
            }
        }
    }

    /// Logistic problem from already-built parts and a reference solution.
    pub fn logistic(
        label: &str,
        costs: Vec<Arc<dyn CostModel>>,
        reference: ReferenceSolution,
        test: DesignMatrix,
        fingerprint: String,
    ) -> Self {
        Self {
            label: label.to_string(),
            costs,
            x_star: Some(Vector::from_vec(reference.x_star)),
            f_star: Some(reference.f_star),
            metric: MetricKind::RelCost,
            test: Some(test),
            gradient_noise: None,
            fingerprint: Some(fingerprint),
        }
    }
}

fn dataset_dir(root: &Path, sub: &str) -> PathBuf {
    let nested = root.join(sub);
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

fn nqm(d: usize, m: usize, scale: f64, per_agent: bool) -> Result<Problem> {
    let parts = nqm_build(d, m)?;
    let noise = if scale == 0.0 {
        None
    } else if per_agent {
        Some(GradientNoise::PerAgent(
            parts
                .iter()
                .map(|p| GaussianNoise::from_diagonal_covariance(&p.hessian_diag(), scale))
                .collect(),
        ))
    } else {
        Some(GradientNoise::Aggregate(GaussianNoise::from_diagonal_covariance(
            &nqm_hessian_diag(d),
            scale,
        )))
    };
    Ok(Problem {
        label: "nqm".into(),
        costs: parts
            .into_iter()
            .map(|c| Arc::new(c) as Arc<dyn CostModel>)
            .collect(),
        x_star: Some(Vector::zeros(d)),
        f_star: Some(0.0),
        metric: MetricKind::RelError,
        test: None,
        gradient_noise: noise,
        fingerprint: None,
    })
}

fn custom_quadratic(spec: &HessianSpec, x_star: Option<&[f64]>, m: usize) -> Result<Problem> {
    let h = match spec {
        HessianSpec::Diagonal(diag) => Matrix::from_diagonal(&Vector::from_column_slice(diag)),
        HessianSpec::Dense(rows) => {
            let d = rows.len();
            if rows.iter().any(|r| r.len() != d) {
                return Err(HarnessError::Config("dense Hessian must be square".into()));
            }
            Matrix::from_fn(d, d, |i, j| rows[i][j])
        }
    };
    let d = h.nrows();
    if d == 0 {
        return Err(HarnessError::Config("empty Hessian".into()));
    }
    let x_star = match x_star {
        Some(v) if v.len() == d => Vector::from_column_slice(v),
        Some(v) => {
            return Err(HarnessError::Config(format!(
                "x_star has {} entries for a {d}-dimensional Hessian",
                v.len()
            )))
        }
        None => Vector::zeros(d),
    };
    let costs = quadratic_costs(&h, &x_star, m)?;
    Ok(Problem {
        label: "quadratic".into(),
        costs,
        x_star: Some(x_star),
        f_star: Some(0.0),
        metric: MetricKind::RelError,
        test: None,
        gradient_noise: None,
        fingerprint: None,
    })
}

/// `½(x−x*)ᵀH(x−x*)` as `m` identical local costs with Hessian `H/m`.
pub fn quadratic_costs(h: &Matrix, x_star: &Vector, m: usize) -> Result<Vec<Arc<dyn CostModel>>> {
    if m == 0 {
        return Err(HarnessError::Config("agent count must be positive".into()));
    }
    // ½xᵀHx − (Hx*)ᵀx + ½x*ᵀHx*, split evenly.
    let share = 1.0 / m as f64;
    let hx = h * x_star;
    let offset = 0.5 * x_star.dot(&hx);
    let local = QuadraticCost::from_hessian(&(h * share))?;
    let costs = (0..m)
        .map(|_| {
            QuadraticCost::with_affine(local.factor().clone(), &hx * share, offset * share)
                .map(|c| Arc::new(c) as Arc<dyn CostModel>)
        })
        .collect::<ipg_core::Result<Vec<_>>>()?;
    Ok(costs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn custom_quadratic_has_minimum_at_x_star() {
        let p = custom_quadratic(
            &HessianSpec::Dense(vec![vec![2.0, 0.5], vec![0.5, 1.0]]),
            Some(&[1.0, -2.0]),
            3,
        )
        .unwrap();
        let xs = p.x_star.clone().unwrap();
        let g = p.costs.iter().fold(Vector::zeros(2), |acc, c| acc + c.gradient(&xs));
        assert!(g.norm() < 1e-12);
        let f: f64 = p.costs.iter().map(|c| c.value(&xs)).sum();
        assert_relative_eq!(f, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn nqm_noise_shapes() {
        let p = nqm(20, 4, 1.0, true).unwrap();
        assert!(matches!(p.gradient_noise, Some(GradientNoise::PerAgent(ref v)) if v.len() == 4));
        let p = nqm(20, 4, 0.0, false).unwrap();
        assert!(p.gradient_noise.is_none());
        assert_eq!(p.metric, MetricKind::RelError);
    }
}
