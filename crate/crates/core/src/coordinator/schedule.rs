use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step-size sequence `α(t)`, `t = 0, 1, …`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaSchedule {
    Constant {
        value: f64,
    },
    /// `2 / (λ1 + λd)`, the optimal constant step for a quadratic with
    /// extreme Hessian eigenvalues `λ1 ≥ λd`.
    TwoOverSum {
        lambda_max: f64,
        lambda_min: f64,
    },
    /// `safety · min{1/(Λ+β), μ^t(1−μρ)/(2l)}`.
    TheoremBound {
        lambda_bound: f64,
        beta: f64,
        l: f64,
        mu: f64,
        rho: f64,
        #[serde(default = "default_safety")]
        safety: f64,
    },
    /// `c / (t+1)`
    InverseT {
        c: f64,
    },
    /// `c / √(t+1)`
    InverseSqrtT {
        c: f64,
    },
    /// Explicit values; the last one repeats once the list is exhausted.
    Custom {
        values: Vec<f64>,
    },
}

fn default_safety() -> f64 {
    0.99
}

impl AlphaSchedule {
    pub fn constant(value: f64) -> Self {
        Self::Constant { value }
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        let a = match self {
            Self::Constant { value } => *value,
            Self::TwoOverSum {
                lambda_max,
                lambda_min,
            } => 2.0 / (lambda_max + lambda_min),
            Self::TheoremBound {
                lambda_bound,
                beta,
                l,
                mu,
                rho,
                safety,
            } => safety * theorem_alpha_bound(t, *lambda_bound, *beta, *l, *mu, *rho)?,
            Self::InverseT { c } => c / (t + 1) as f64,
            Self::InverseSqrtT { c } => c / ((t + 1) as f64).sqrt(),
            Self::Custom { values } => *values
                .get(t)
                .or(values.last())
                .ok_or_else(|| Error::Config("custom step-size list is empty".into()))?,
        };
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::Config(format!("step size α({t}) = {a} is not positive")));
        }
        Ok(a)
    }

    /// Checks that the first step is well defined.
    pub fn validate(&self) -> Result<()> {
        self.alpha(0).map(|_| ())
    }
}

/// Strict test of `0 < α < 1/(λmax + β)`, where `lam_max` upper-bounds the
/// Hessian's top eigenvalue at the current point.
pub fn alpha_valid(alpha: f64, lam_max: f64, beta: f64) -> bool {
    alpha > 0.0 && alpha < 1.0 / (lam_max + beta)
}

/// Conservative step-size ceiling `min{1/(Λ+β), μ^t(1−μρ)/(2l)}` under which
/// the linear-rate guarantee holds.
pub fn theorem_alpha_bound(
    t: usize,
    lambda_bound: f64,
    beta: f64,
    l: f64,
    mu: f64,
    rho: f64,
) -> Result<f64> {
    if !(mu > 1.0) {
        return Err(Error::Config(format!("μ must exceed 1, got {mu}")));
    }
    if !(l > 0.0) {
        return Err(Error::Config(format!("l must be positive, got {l}")));
    }
    let mr = mu * rho;
    if !(mr > 0.0 && mr < 1.0) {
        return Err(Error::Config(format!("need 0 < μρ < 1, got μρ = {mr}")));
    }
    let curvature_cap = 1.0 / (lambda_bound + beta);
    let growth_cap = mu.powf(t as f64) * (1.0 - mr) / (2.0 * l);
    Ok(curvature_cap.min(growth_cap))
}
