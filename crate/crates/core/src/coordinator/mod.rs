//! Server-side optimizer state and updates.
//!
//! Every optimizer talks to the agents only through [`AgentPool`] rounds, so
//! IPG and the baselines see identical data access and round accounting.

mod baselines;
mod ipg;
mod noise;
mod schedule;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use baselines::{
    bfgs_inverse_update, Adam, AdamParams, Bfgs, Gd, HeavyBall, LineSearch, Nesterov,
};
pub use ipg::IpgState;
pub use noise::{inject_process_noise, GaussianNoise, NoiseSpec, NoiseTargets};
pub use schedule::{alpha_valid, theorem_alpha_bound, AlphaSchedule};

use crate::agent::AgentPool;
use crate::error::{ensure_dim, Error, Result};
use crate::numkit::{all_finite, spectral_norm, symmetric_eigenvalues, Matrix, SeededRng, Vector};

/// Estimates with a larger norm than this count as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// The optimizers, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Ipg,
    Gd,
    Nag,
    Hbm,
    Adam,
    Bfgs,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 6] = [
        Self::Ipg,
        Self::Gd,
        Self::Nag,
        Self::Hbm,
        Self::Adam,
        Self::Bfgs,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Ipg => "IPG",
            Self::Gd => "GD",
            Self::Nag => "NAG",
            Self::Hbm => "HBM",
            Self::Adam => "Adam",
            Self::Bfgs => "BFGS",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown optimizer {s:?}")))
    }
}

/// Something worth logging that happened inside one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StepEvent {
    /// BFGS pair with `sᵀy ≤ 0`; `B` kept unchanged.
    CurvatureSkipped { sy: f64 },
    /// Armijo condition never met; the smallest trial step was taken.
    LineSearchExhausted { halvings: usize },
    /// Search direction with nonnegative slope `gᵀp`.
    NonDescentDirection { slope: f64 },
}

/// Outcome of one optimizer iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// Step size used, if the method has one.
    pub alpha: Option<f64>,
    /// Rounds beyond the single round an iteration nominally costs.
    pub aux_rounds: u64,
    pub events: Vec<StepEvent>,
    /// Whether process noise was added after the update.
    pub noise_applied: bool,
}

impl StepReport {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha: Some(alpha),
            ..Self::default()
        }
    }
}

/// Server state of one optimizer.
pub trait ServerOptimizer: fmt::Debug + Send {
    fn kind(&self) -> OptimizerKind;

    /// Current estimate `x(t)`.
    fn estimate(&self) -> &Vector;

    /// Number of completed iterations.
    fn iteration(&self) -> usize;

    /// Runs the rounds of one iteration and updates the state.
    fn iterate(&mut self, pool: &mut AgentPool) -> Result<StepReport>;

    /// Mutable views of the iterated variables selected by `targets`, for
    /// process noise.
    fn iterated_state(&mut self, targets: NoiseTargets) -> Vec<&mut [f64]>;
}

pub(crate) fn check_finite(values: &[f64], iteration: usize, what: &str) -> Result<()> {
    if all_finite(values) {
        Ok(())
    } else {
        Err(Error::Divergence {
            iteration,
            reason: format!("non-finite {what}"),
        })
    }
}

/// Fails when `x` has a non-finite entry or norm above [`DIVERGENCE_NORM`].
pub fn check_divergence(x: &Vector, iteration: usize) -> Result<()> {
    check_finite(x.as_slice(), iteration, "estimate")?;
    let norm = x.norm();
    if norm > DIVERGENCE_NORM {
        return Err(Error::Divergence {
            iteration,
            reason: format!("estimate norm {norm:.3e} exceeds {DIVERGENCE_NORM:.0e}"),
        });
    }
    Ok(())
}

/// One full iteration: agent rounds, update, optional process noise and the
/// divergence check.
pub fn step(
    opt: &mut dyn ServerOptimizer,
    pool: &mut AgentPool,
    noise: &NoiseSpec,
    rng: &mut SeededRng,
) -> Result<StepReport> {
    let mut report = opt.iterate(pool)?;
    if let Some(targets) = noise.process_targets() {
        report.noise_applied = inject_process_noise(opt.iterated_state(targets), noise, rng)?;
    }
    check_divergence(opt.estimate(), opt.iteration())?;
    Ok(report)
}

/// Optimizer choice and hyperparameters; initial auxiliary state is fixed
/// (`K(0) = 0`, zero momenta and moments, `B(0) = I`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "optimizer", rename_all = "lowercase")]
pub enum OptimizerSpec {
    Ipg {
        #[serde(default = "unit")]
        delta: f64,
        #[serde(default)]
        beta: f64,
        alpha: AlphaSchedule,
    },
    Gd {
        alpha: AlphaSchedule,
    },
    Nag {
        alpha: AlphaSchedule,
        momentum: f64,
    },
    Hbm {
        alpha: AlphaSchedule,
        momentum: f64,
    },
    Adam {
        alpha: AlphaSchedule,
        #[serde(flatten, default)]
        params: AdamParams,
    },
    Bfgs {
        #[serde(default)]
        line_search: LineSearch,
    },
}

fn unit() -> f64 {
    1.0
}

impl OptimizerSpec {
    pub fn kind(&self) -> OptimizerKind {
        match self {
            Self::Ipg { .. } => OptimizerKind::Ipg,
            Self::Gd { .. } => OptimizerKind::Gd,
            Self::Nag { .. } => OptimizerKind::Nag,
            Self::Hbm { .. } => OptimizerKind::Hbm,
            Self::Adam { .. } => OptimizerKind::Adam,
            Self::Bfgs { .. } => OptimizerKind::Bfgs,
        }
    }

    /// The β agents must use in their residuals; zero for non-IPG methods,
    /// which never request residuals.
    pub fn agent_beta(&self) -> f64 {
        match self {
            Self::Ipg { beta, .. } => *beta,
            _ => 0.0,
        }
    }

    pub fn build(&self, x0: Vector) -> Result<Box<dyn ServerOptimizer>> {
        Ok(match self.clone() {
            Self::Ipg { delta, beta, alpha } => {
                Box::new(IpgState::with_zero_preconditioner(x0, delta, beta, alpha)?)
            }
            Self::Gd { alpha } => Box::new(Gd::new(x0, alpha)?),
            Self::Nag { alpha, momentum } => Box::new(Nesterov::new(x0, alpha, momentum)?),
            Self::Hbm { alpha, momentum } => Box::new(HeavyBall::new(x0, alpha, momentum)?),
            Self::Adam { alpha, params } => Box::new(Adam::new(x0, alpha, params)?),
            Self::Bfgs { line_search } => Box::new(Bfgs::new(x0, line_search)?),
        })
    }
}

/// Both sides of the local-convergence initial condition
/// `ηγ/2 ||x(0)−x*|| + l ||K(0)−K*|| + ηβ ≤ 1/(2μ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConditionReport {
    /// `η = ||(∇²f(x*) + βI)^{-1}||`
    pub eta: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluates the initial condition with `K* = (∇²f(x*) + βI)^{-1}` and
/// spectral norms throughout. Errors when `∇²f(x*) + βI` is singular.
#[allow(clippy::too_many_arguments)]
pub fn init_condition_check(
    x0: &Vector,
    k0: &Matrix,
    x_star: &Vector,
    hess_star: &Matrix,
    beta: f64,
    gamma: f64,
    l: f64,
    mu: f64,
) -> Result<InitConditionReport> {
    let d = x_star.len();
    ensure_dim("initial estimate", d, x0.len())?;
    ensure_dim("Hessian at minimizer", d, hess_star.nrows())?;
    ensure_dim("initial preconditioner", d, k0.nrows())?;
    let shifted = hess_star + Matrix::identity(d, d) * beta;
    let lam_min = symmetric_eigenvalues(&shifted)
        .first()
        .copied()
        .unwrap_or(0.0);
    let scale = spectral_norm(&shifted).max(f64::MIN_POSITIVE);
    if !(lam_min > scale * 1e-14) {
        return Err(Error::Assumption(format!(
            "∇²f(x*) + βI is singular (smallest eigenvalue {lam_min:e})"
        )));
    }
    let k_star = shifted
        .try_inverse()
        .ok_or_else(|| Error::Assumption("∇²f(x*) + βI is not invertible".into()))?;
    let eta = spectral_norm(&k_star);
    let lhs = eta * gamma / 2.0 * (x0 - x_star).norm() + l * spectral_norm(&(k0 - &k_star)) + eta * beta;
    let rhs = 1.0 / (2.0 * mu);
    Ok(InitConditionReport {
        eta,
        lhs,
        rhs,
        holds: lhs <= rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn init_condition_at_optimum() {
        let h = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
        let k_star = h.clone().try_inverse().unwrap();
        let x = Vector::from_vec(vec![0.3, -0.7]);
        let r = init_condition_check(&x, &k_star, &x, &h, 0.0, 1.0, 2.0, 1.2).unwrap();
        assert!(r.holds);
        assert_relative_eq!(r.lhs, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn init_condition_perturbed_preconditioner() {
        let h = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
        let k_star = h.clone().try_inverse().unwrap();
        let x0 = Vector::from_vec(vec![5.0, 5.0]);
        let xs = Vector::zeros(2);
        let ok = init_condition_check(&x0, &k_star, &xs, &h, 0.0, 0.0, 2.0, 1.2).unwrap();
        assert!(ok.holds);
        assert_relative_eq!(ok.eta, 1.0, epsilon = 1e-12);
        let k0 = &k_star + Matrix::identity(2, 2) * 0.3;
        let bad = init_condition_check(&x0, &k0, &xs, &h, 0.0, 0.0, 2.0, 1.2).unwrap();
        assert_relative_eq!(bad.lhs, 0.6, epsilon = 1e-12);
        assert_relative_eq!(bad.rhs, 1.0 / 2.4, epsilon = 1e-12);
        assert!(!bad.holds);
    }

    #[test]
    fn init_condition_rejects_singular() {
        let h = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]));
        let z = Vector::zeros(2);
        let err = init_condition_check(&z, &Matrix::zeros(2, 2), &z, &h, 0.0, 0.0, 1.0, 1.5);
        assert!(matches!(err, Err(Error::Assumption(_))));
    }

    #[test]
    fn divergence_threshold() {
        assert!(check_divergence(&Vector::from_vec(vec![1e11]), 3).is_ok());
        assert!(matches!(
            check_divergence(&Vector::from_vec(vec![2e12]), 3),
            Err(Error::Divergence { iteration: 3, .. })
        ));
        assert!(check_divergence(&Vector::from_vec(vec![f64::NAN]), 0).is_err());
    }

    #[test]
    fn kind_round_trips_through_label() {
        for k in OptimizerKind::ALL {
            assert_eq!(k.label().parse::<OptimizerKind>().unwrap(), k);
        }
    }
}
