//! Self-checks of the convergence theory on small dense quadratics, where
//! every constant is available in closed form.

use ipg_core::coordinator::init_condition_check;
use ipg_core::numkit::{spectral_norm, symmetric_eigenvalues};
use ipg_core::theory::{
    compute_rho, quadratic_constants, verify_linear_contraction, verify_superlinear,
    TheoryConstants, Verdict,
};
use ipg_core::{
    step, AgentPool, AlphaSchedule, IpgState, Matrix, NoiseSpec, OptimizerSpec, SeededRng,
    ServerOptimizer, Vector,
};
use serde::Serialize;

use crate::error::Result;
use crate::problem::quadratic_costs;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn pool(h: &Matrix, x_star: &Vector, m: usize, beta: f64) -> Result<AgentPool> {
    Ok(AgentPool::from_costs(quadratic_costs(h, x_star, m)?, beta, 0)?)
}

/// `AᵀA/d + shift·I` with standard normal `A`.
pub fn random_spd(rng: &mut SeededRng, d: usize, shift: f64) -> Matrix {
    let a = Matrix::from_fn(d, d, |_, _| rng.normal());
    a.transpose() * a / d as f64 + Matrix::identity(d, d) * shift
}

fn iterates(opt: &mut dyn ServerOptimizer, pool: &mut AgentPool, steps: usize) -> Result<Vec<Vector>> {
    let mut rng = SeededRng::new(0, 0);
    let mut out = vec![opt.estimate().clone()];
    for _ in 0..steps {
        step(opt, pool, &NoiseSpec::None, &mut rng)?;
        out.push(opt.estimate().clone());
    }
    Ok(out)
}

/// `||K(t)−K*||` contracts by at most `ρ` per step on a random `d = 16`
/// quadratic with `β = 0.1` and `α` inside the valid range.
pub fn preconditioner_convergence(seed: u64) -> Result<SuiteReport> {
    let (d, beta) = (16, 0.1);
    let mut rng = SeededRng::new(seed, 0);
    let h = random_spd(&mut rng, d, 0.0);
    let x_star = Vector::from_fn(d, |_, _| rng.normal());
    let lam_max = symmetric_eigenvalues(&h)[d - 1];
    let alpha = 0.9 / (lam_max + beta);
    let rho = compute_rho(&h, alpha, beta)?;
    let k_star = TheoryConstants::k_star(&h, beta)?;
    let mut pool = pool(&h, &x_star, 4, beta)?;
    let mut ipg = IpgState::with_zero_preconditioner(Vector::zeros(d), 1.0, beta, AlphaSchedule::constant(alpha))?;
    let mut prev = spectral_norm(&(ipg.k() - &k_star));
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (g, r) = pool.ipg_round(ipg.x(), ipg.k())?;
        ipg.apply(&g, &r)?;
        let now = spectral_norm(&(ipg.k() - &k_star));
        worst = worst.max(now / prev);
        prev = now;
    }
    Ok(SuiteReport {
        name: "preconditioner convergence",
        pass: worst <= rho + 1e-10,
        detail: format!("max contraction {worst:.12} vs rho {rho:.12}"),
    })
}

/// Theorem-mode IPG on `H = diag(1, 2, 3, 4)`, `β = 0.1`, `μ = 1.05`, with
/// `K(0)` close enough to `K*` for the initial condition to hold.
pub fn linear_contraction() -> Result<SuiteReport> {
    let h = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
    let (beta, mu) = (0.1, 1.05);
    let x_star = Vector::from_vec(vec![1.0, -1.0, 0.5, 2.0]);
    let reference = AlphaSchedule::constant(0.99 / (4.0 + beta));
    let consts = quadratic_constants(&h, beta, &reference, 1)?.with_mu(mu)?;
    let k_star = TheoryConstants::k_star(&h, beta)?;
    let k0 = &k_star + Matrix::identity(4, 4) * 0.09;
    let x0 = Vector::zeros(4);
    let init = init_condition_check(&x0, &k0, &x_star, &h, beta, consts.gamma, consts.l, mu)?;
    let schedule = AlphaSchedule::TheoremBound {
        lambda_bound: consts.lambda_bound,
        beta,
        l: consts.l,
        mu,
        rho: consts.rho,
        safety: 0.99,
    };
    // ρ taken as the supremum of ρ(t) over the run itself.
    let sup_rho = quadratic_constants(&h, beta, &schedule, 200)?.rho;
    let mut pool = pool(&h, &x_star, 2, beta)?;
    let mut ipg = IpgState::new(x0, k0, 1.0, beta, schedule)?;
    let trace = iterates(&mut ipg, &mut pool, 200)?;
    let report = verify_linear_contraction(&trace, Some(&x_star), &consts)?;
    let failures = report.contraction.iter().filter(|ok| !**ok).count();
    Ok(SuiteReport {
        name: "linear contraction",
        pass: init.holds && report.pass,
        detail: format!(
            "initial condition {:.4} <= {:.4}: {}; {failures} failures in 200 steps; rho {:.4} (sup over run {sup_rho:.4})",
            init.lhs, init.rhs, init.holds, consts.rho
        ),
    })
}

/// IPG with `β = 0`, `δ = 1`, `K(0) = 0` is superlinear on a `d = 8`
/// quadratic; GD with the optimal constant step on the same instance is not.
pub fn superlinear(seed: u64) -> Result<SuiteReport> {
    let d = 8;
    let mut rng = SeededRng::new(seed, 0);
    let h = random_spd(&mut rng, d, 1.0);
    let eig = symmetric_eigenvalues(&h);
    let x_star = Vector::from_fn(d, |_, _| rng.normal());

    let mut p = pool(&h, &x_star, 2, 0.0)?;
    let mut ipg = IpgState::with_zero_preconditioner(
        Vector::zeros(d),
        1.0,
        0.0,
        AlphaSchedule::constant(1.0 / eig[d - 1]),
    )?;
    let ipg_report = verify_superlinear(&iterates(&mut ipg, &mut p, 300)?, Some(&x_star))?;

    let mut p = pool(&h, &x_star, 2, 0.0)?;
    let mut gd = OptimizerSpec::Gd {
        alpha: AlphaSchedule::TwoOverSum {
            lambda_max: eig[d - 1],
            lambda_min: eig[0],
        },
    }
    .build(Vector::zeros(d))?;
    let gd_report = verify_superlinear(&iterates(gd.as_mut(), &mut p, 300)?, Some(&x_star))?;
    Ok(SuiteReport {
        name: "superlinear convergence",
        pass: ipg_report.verdict == Verdict::Pass && gd_report.verdict == Verdict::Fail,
        detail: format!("IPG {:?}, GD {:?}", ipg_report.verdict, gd_report.verdict),
    })
}

/// With `K(0) = H^{-1}` and `δ = 1` the first step is a Newton step.
pub fn newton_step(seed: u64) -> Result<SuiteReport> {
    let d = 8;
    let mut rng = SeededRng::new(seed, 0);
    let h = random_spd(&mut rng, d, 0.5);
    let x_star = Vector::from_fn(d, |_, _| rng.normal());
    let k0 = h
        .clone()
        .try_inverse()
        .ok_or_else(|| ipg_core::Error::Assumption("singular test Hessian".into()))?;
    let mut p = pool(&h, &x_star, 4, 0.0)?;
    let mut ipg = IpgState::new(Vector::zeros(d), k0, 1.0, 0.0, AlphaSchedule::constant(0.1))?;
    let trace = iterates(&mut ipg, &mut p, 1)?;
    let err = (&trace[1] - &x_star).norm();
    Ok(SuiteReport {
        name: "newton step",
        pass: err < 1e-10,
        detail: format!("||x(1) - x*|| = {err:.3e}"),
    })
}

/// Every suite, in a fixed order.
pub fn all_suites(seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        preconditioner_convergence(seed)?,
        linear_contraction()?,
        superlinear(seed)?,
        newton_step(seed)?,
    ])
}
