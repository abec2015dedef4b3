//! Dense oracles for the convergence analysis: contraction factors, problem
//! constants and trace verifiers. Intended for small instances only.

use serde::{Deserialize, Serialize};

use crate::coordinator::AlphaSchedule;
use crate::costs::CostModel;
use crate::error::{ensure_dim, Error, Result};
use crate::numkit::{spectral_norm, symmetric_eigenvalues, Matrix, SeededRng, Vector};

/// Largest dimension the dense oracles accept.
pub const ORACLE_DIM_LIMIT: usize = 64;

/// Errors at or below this fraction of the initial error are treated as
/// floating-point floor by the trace verifiers.
pub const ERROR_FLOOR: f64 = 1e-13;

/// Number of ratios examined by [`verify_superlinear`].
pub const SUPERLINEAR_TAIL: usize = 10;

fn oracle_guard(d: usize) -> Result<()> {
    if d > ORACLE_DIM_LIMIT {
        return Err(Error::OracleLimit(format!(
            "dimension {d} (limit {ORACLE_DIM_LIMIT})"
        )));
    }
    Ok(())
}

/// `ρ = ||I − α(H + βI)||` for symmetric `H`, from its eigenvalues.
pub fn compute_rho(hess: &Matrix, alpha: f64, beta: f64) -> Result<f64> {
    ensure_dim("ρ Hessian", hess.nrows(), hess.ncols())?;
    oracle_guard(hess.nrows())?;
    Ok(symmetric_eigenvalues(hess)
        .into_iter()
        .map(|lam| (1.0 - alpha * (lam + beta)).abs())
        .fold(0.0, f64::max))
}

/// Problem constants entering the linear-rate guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// Gradient Lipschitz constant.
    pub l: f64,
    /// Hessian Lipschitz constant.
    pub gamma: f64,
    /// `||K*||`
    pub eta: f64,
    /// `sup_t ρ(t)`
    pub rho: f64,
    /// Contraction parameter in `(1, 1/ρ)`.
    pub mu: f64,
    /// Upper bound on the Hessian's top eigenvalue along the trajectory.
    pub lambda_bound: f64,
}

impl TheoryConstants {
    /// Midpoint of `(1, 1/ρ)`, or 2 when `ρ = 0`.
    pub fn default_mu(rho: f64) -> f64 {
        if rho > 0.0 {
            0.5 * (1.0 + 1.0 / rho)
        } else {
            2.0
        }
    }

    pub fn with_mu(mut self, mu: f64) -> Result<Self> {
        self.mu = mu;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.l > 0.0
            && self.gamma >= 0.0
            && self.eta > 0.0
            && (0.0..1.0).contains(&self.rho)
            && self.mu > 1.0
            && self.mu * self.rho < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Assumption(format!("inconsistent constants {self:?}")))
        }
    }

    /// `K* = (H + βI)^{-1}`.
    pub fn k_star(hess_star: &Matrix, beta: f64) -> Result<Matrix> {
        let d = hess_star.nrows();
        (hess_star + Matrix::identity(d, d) * beta)
            .try_inverse()
            .ok_or_else(|| Error::Assumption("∇²f(x*) + βI is not invertible".into()))
    }
}

/// Exact constants for `f(x) = ½xᵀHx + bᵀx`: `l = λmax`, `γ = 0`,
/// `η = 1/(λmin + β)`, `Λ = λmax`, and `ρ` the largest `ρ(t)` over the first
/// `horizon` steps of `schedule`.
pub fn quadratic_constants(
    hess: &Matrix,
    beta: f64,
    schedule: &AlphaSchedule,
    horizon: usize,
) -> Result<TheoryConstants> {
    ensure_dim("quadratic Hessian", hess.nrows(), hess.ncols())?;
    oracle_guard(hess.nrows())?;
    let eig = symmetric_eigenvalues(hess);
    let (lam_min, lam_max) = (eig[0], eig[eig.len() - 1]);
    if lam_min < -1e-12 * lam_max.abs().max(1.0) {
        return Err(Error::Assumption(format!(
            "Hessian is not positive semidefinite (λmin = {lam_min:e})"
        )));
    }
    if lam_min.max(0.0) + beta <= 0.0 {
        return Err(Error::Assumption(
            "λmin(H) = 0 with β = 0 leaves H + βI singular".into(),
        ));
    }
    let mut rho: f64 = 0.0;
    for t in 0..horizon.max(1) {
        let alpha = schedule.alpha(t)?;
        rho = rho.max(compute_rho(hess, alpha, beta)?);
    }
    Ok(TheoryConstants {
        l: lam_max,
        gamma: 0.0,
        eta: 1.0 / (lam_min.max(0.0) + beta),
        rho,
        mu: TheoryConstants::default_mu(rho),
        lambda_bound: lam_max,
    })
}

/// Per-step outcome of [`verify_linear_contraction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    /// `||z(t+1)|| ≤ ||z(t)||/μ` for each `t`.
    pub contraction: Vec<bool>,
    /// `||z(t)|| < 1/(μηγ)` for each `t`; vacuous when `γ = 0`.
    pub radius: Vec<bool>,
    pub first_failure: Option<usize>,
    pub pass: bool,
}

/// Checks `||z(t+1)|| ≤ (1/μ)||z(t)||` and `||z(t)|| < 1/(μηγ)` along the
/// iterates, `z(t) = x(t) − x*`. Once `||z(t+1)||` is at the floor
/// `ERROR_FLOOR · ||z(0)||` rounding dominates, and the step counts as
/// contracting.
pub fn verify_linear_contraction(
    iterates: &[Vector],
    x_star: Option<&Vector>,
    constants: &TheoryConstants,
) -> Result<ContractionReport> {
    let x_star = x_star.ok_or_else(|| Error::MissingReference("x* is required".into()))?;
    let errs = errors_to(iterates, x_star)?;
    let mu = constants.mu;
    let floor = ERROR_FLOOR * errs.first().copied().unwrap_or(0.0);
    let contraction: Vec<bool> = errs
        .windows(2)
        .map(|w| w[1] <= w[0] / mu || w[1] <= floor)
        .collect();
    let radius: Vec<bool> = errs
        .iter()
        .map(|&e| constants.gamma == 0.0 || e < 1.0 / (mu * constants.eta * constants.gamma))
        .collect();
    let first_failure = (0..errs.len()).find(|&t| {
        !radius[t] || contraction.get(t).is_some_and(|ok| !ok)
    });
    Ok(ContractionReport {
        contraction,
        radius,
        first_failure,
        pass: first_failure.is_none(),
    })
}

fn errors_to(iterates: &[Vector], x_star: &Vector) -> Result<Vec<f64>> {
    iterates
        .iter()
        .map(|x| {
            ensure_dim("trace iterate", x_star.len(), x.len())?;
            Ok((x - x_star).norm())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Too few iterations above the error floor to judge.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperlinearReport {
    /// `r(t) = ||z(t+1)||/||z(t)||` for every step whose result lies above
    /// the floor.
    pub ratios: Vec<f64>,
    /// The ratios the verdict is based on.
    pub tail: Vec<f64>,
    /// First iteration at or below the floor, if reached.
    pub floor_reached_at: Option<usize>,
    pub verdict: Verdict,
}

/// Finite-sample test for a vanishing error ratio.
///
/// Takes the last [`SUPERLINEAR_TAIL`] ratios above the floor
/// `ERROR_FLOOR · ||z(0)||` and passes iff they strictly decrease and
/// the last is below half the first. A run that lands on the floor in a
/// single step passes outright; one that needs 2 to 11 steps is
/// inconclusive.
pub fn verify_superlinear(iterates: &[Vector], x_star: Option<&Vector>) -> Result<SuperlinearReport> {
    let x_star = x_star.ok_or_else(|| Error::MissingReference("x* is required".into()))?;
    let errs = errors_to(iterates, x_star)?;
    let e0 = errs.first().copied().unwrap_or(0.0);
    let floor = ERROR_FLOOR * e0;
    let floor_reached_at = errs.iter().position(|&e| e <= floor);
    let usable = floor_reached_at.unwrap_or(errs.len());
    let ratios: Vec<f64> = errs[..usable].windows(2).map(|w| w[1] / w[0]).collect();
    let verdict_of = |tail: &[f64]| {
        let decreasing = tail.windows(2).all(|w| w[1] < w[0]);
        if decreasing && tail[tail.len() - 1] < 0.5 * tail[0] {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    };
    let (tail, verdict) = match floor_reached_at {
        Some(0) => (Vec::new(), Verdict::Pass),
        Some(1) => (vec![errs[1] / e0], Verdict::Pass),
        Some(t) if t < SUPERLINEAR_TAIL + 2 => (ratios.clone(), Verdict::Inconclusive),
        _ if ratios.len() < SUPERLINEAR_TAIL => (ratios.clone(), Verdict::Inconclusive),
        _ => {
            let tail = ratios[ratios.len() - SUPERLINEAR_TAIL..].to_vec();
            let v = verdict_of(&tail);
            (tail, v)
        }
    };
    Ok(SuperlinearReport {
        ratios,
        tail,
        floor_reached_at,
        verdict,
    })
}

/// Sampled lower estimate of the Hessian Lipschitz constant
/// `sup ||∇²f(x) − ∇²f(y)|| / ||x − y||` over `pairs` random pairs in the
/// ball of radius `radius` around `center`. A heuristic for tests; never
/// an exact constant.
pub fn estimate_gamma(
    cost: &dyn CostModel,
    center: &Vector,
    radius: f64,
    pairs: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    let d = cost.dim();
    ensure_dim("γ center", d, center.len())?;
    oracle_guard(d)?;
    let point = |rng: &mut SeededRng| {
        let dir = Vector::from_fn(d, |_, _| rng.normal());
        let r = radius * rng.open01().powf(1.0 / d as f64);
        center + dir.normalize() * r
    };
    let mut best: f64 = 0.0;
    for _ in 0..pairs {
        let (x, y) = (point(rng), point(rng));
        let dist = (&x - &y).norm();
        if dist > 0.0 {
            best = best.max(spectral_norm(&(cost.hessian(&x) - cost.hessian(&y))) / dist);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag(v: &[f64]) -> Matrix {
        Matrix::from_diagonal(&Vector::from_column_slice(v))
    }

    #[test]
    fn rho_examples() {
        assert_relative_eq!(compute_rho(&diag(&[1.0, 0.5]), 0.0, 0.0).unwrap(), 1.0);
        assert_relative_eq!(compute_rho(&Matrix::identity(3, 3), 1.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(compute_rho(&diag(&[1.0, 0.5]), 4.0 / 3.0, 0.0).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn rho_refuses_large() {
        let h = Matrix::identity(65, 65);
        assert!(matches!(compute_rho(&h, 0.5, 0.0), Err(Error::OracleLimit(_))));
    }

    #[test]
    fn constants_examples() {
        let s = AlphaSchedule::constant(0.5);
        let c = quadratic_constants(&Matrix::identity(2, 2), 0.0, &s, 1).unwrap();
        assert_eq!((c.l, c.gamma, c.eta), (1.0, 0.0, 1.0));
        let c = quadratic_constants(&diag(&[1.0, 0.5]), 0.5, &s, 1).unwrap();
        assert_relative_eq!(c.eta, 1.0, epsilon = 1e-15);
        let d = 10;
        let nqm = diag(&(1..=d).map(|i| 1.0 / i as f64).collect::<Vec<_>>());
        let c = quadratic_constants(&nqm, 0.2, &s, 1).unwrap();
        assert_relative_eq!(c.l, 1.0, epsilon = 1e-14);
        assert_relative_eq!(c.eta, 1.0 / (0.1 + 0.2), epsilon = 1e-12);
    }

    #[test]
    fn constants_flag_singular() {
        let s = AlphaSchedule::constant(0.5);
        assert!(matches!(
            quadratic_constants(&diag(&[1.0, 0.0]), 0.0, &s, 1),
            Err(Error::Assumption(_))
        ));
    }

    fn consts(mu: f64) -> TheoryConstants {
        TheoryConstants {
            l: 1.0,
            gamma: 0.0,
            eta: 1.0,
            rho: 0.5,
            mu,
            lambda_bound: 1.0,
        }
    }

    #[test]
    fn contraction_constant_trace_at_optimum() {
        let xs = Vector::from_vec(vec![1.0, 2.0]);
        let trace = vec![xs.clone(); 5];
        let r = verify_linear_contraction(&trace, Some(&xs), &consts(1.5)).unwrap();
        assert!(r.pass);
    }

    #[test]
    fn contraction_flags_expansion() {
        let xs = Vector::zeros(1);
        let trace: Vec<Vector> = [8.0, 4.0, 2.0, 3.0, 1.0]
            .iter()
            .map(|&v| Vector::from_vec(vec![v]))
            .collect();
        let r = verify_linear_contraction(&trace, Some(&xs), &consts(1.5)).unwrap();
        assert!(!r.pass);
        assert_eq!(r.first_failure, Some(2));
        assert!(verify_linear_contraction(&trace, None, &consts(1.5)).is_err());
    }

    #[test]
    fn superlinear_newton_step_passes() {
        let xs = Vector::from_vec(vec![1.0, 1.0]);
        let trace = vec![Vector::zeros(2), xs.clone(), xs.clone()];
        let r = verify_superlinear(&trace, Some(&xs)).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn superlinear_rejects_linear_rate() {
        let xs = Vector::zeros(1);
        let trace: Vec<Vector> = (0..60).map(|t| Vector::from_vec(vec![0.9f64.powi(t)])).collect();
        let r = verify_superlinear(&trace, Some(&xs)).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn superlinear_inconclusive_when_floor_is_quick() {
        let xs = Vector::zeros(1);
        let trace: Vec<Vector> = (0..10).map(|t| Vector::from_vec(vec![1e-4f64.powi(t)])).collect();
        let r = verify_superlinear(&trace, Some(&xs)).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }
}
