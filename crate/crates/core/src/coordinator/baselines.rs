//! Server-side baseline optimizers driven by the same agent rounds as IPG.

use serde::{Deserialize, Serialize};

use super::{
    check_finite, AlphaSchedule, NoiseTargets, OptimizerKind, ServerOptimizer, StepEvent,
    StepReport,
};
use crate::agent::AgentPool;
use crate::error::{ensure_dim, Error, Result};
use crate::numkit::{Matrix, Vector};

/// Plain gradient descent, `x ← x − α(t) g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gd {
    x: Vector,
    t: usize,
    schedule: AlphaSchedule,
}

impl Gd {
    pub fn new(x0: Vector, schedule: AlphaSchedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Self { x: x0, t: 0, schedule })
    }

    /// One update from an aggregate gradient taken at the current estimate.
    pub fn apply(&mut self, g_sum: &Vector) -> Result<f64> {
        ensure_dim("GD gradient", self.x.len(), g_sum.len())?;
        let alpha = self.schedule.alpha(self.t)?;
        self.x.axpy(-alpha, g_sum, 1.0);
        check_finite(self.x.as_slice(), self.t, "estimate")?;
        self.t += 1;
        Ok(alpha)
    }
}

impl ServerOptimizer for Gd {
    fn kind(&self) -> OptimizerKind {
        OptimizerKind::Gd
    }

    fn estimate(&self) -> &Vector {
        &self.x
    }

    fn iteration(&self) -> usize {
        self.t
    }

    fn iterate(&mut self, pool: &mut AgentPool) -> Result<StepReport> {
        let g = pool.gradient_round(&self.x)?;
        Ok(StepReport::with_alpha(self.apply(&g)?))
    }

    fn iterated_state(&mut self, _targets: NoiseTargets) -> Vec<&mut [f64]> {
        vec![self.x.as_mut_slice()]
    }
}

/// Polyak heavy-ball momentum, `x ← x − α g + β (x − x_prev)`.
///
/// The momentum vector is stored as the last displacement `x − x_prev`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeavyBall {
    x: Vector,
    velocity: Vector,
    t: usize,
    schedule: AlphaSchedule,
    momentum: f64,
}

impl HeavyBall {
    pub fn new(x0: Vector, schedule: AlphaSchedule, momentum: f64) -> Result<Self> {
        schedule.validate()?;
        check_momentum(momentum)?;
        let velocity = Vector::zeros(x0.len());
        Ok(Self {
            x: x0,
            velocity,
            t: 0,
            schedule,
            momentum,
        })
    }

    pub fn apply(&mut self, g_sum: &Vector) -> Result<f64> {
        ensure_dim("HBM gradient", self.x.len(), g_sum.len())?;
        let alpha = self.schedule.alpha(self.t)?;
        let step = &self.velocity * self.momentum - g_sum * alpha;
        self.x += &step;
        self.velocity = step;
        check_finite(self.x.as_slice(), self.t, "estimate")?;
        self.t += 1;
        Ok(alpha)
    }
}

impl ServerOptimizer for HeavyBall {
    fn kind(&self) -> OptimizerKind {
        OptimizerKind::Hbm
    }

    fn estimate(&self) -> &Vector {
        &self.x
    }

    fn iteration(&self) -> usize {
        self.t
    }

    fn iterate(&mut self, pool: &mut AgentPool) -> Result<StepReport> {
        let g = pool.gradient_round(&self.x)?;
        Ok(StepReport::with_alpha(self.apply(&g)?))
    }

    fn iterated_state(&mut self, targets: NoiseTargets) -> Vec<&mut [f64]> {
        match targets {
            NoiseTargets::All => vec![self.x.as_mut_slice(), self.velocity.as_mut_slice()],
            NoiseTargets::EstimateOnly => vec![self.x.as_mut_slice()],
        }
    }
}

/// Nesterov's accelerated gradient. Agents are queried at the lookahead
/// point `y = x + β (x − x_prev)` and the server sets `x ← y − α g(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Nesterov {
    x: Vector,
    velocity: Vector,
    t: usize,
    schedule: AlphaSchedule,
    momentum: f64,
}

impl Nesterov {
    pub fn new(x0: Vector, schedule: AlphaSchedule, momentum: f64) -> Result<Self> {
        schedule.validate()?;
        check_momentum(momentum)?;
        let velocity = Vector::zeros(x0.len());
        Ok(Self {
            x: x0,
            velocity,
            t: 0,
            schedule,
            momentum,
        })
    }

    /// The point the next gradient round must be taken at.
    pub fn lookahead(&self) -> Vector {
        &self.x + &self.velocity * self.momentum
    }

    /// One update from an aggregate gradient taken at [`Self::lookahead`].
    pub fn apply(&mut self, g_lookahead: &Vector) -> Result<f64> {
        ensure_dim("NAG gradient", self.x.len(), g_lookahead.len())?;
        let alpha = self.schedule.alpha(self.t)?;
        let step = &self.velocity * self.momentum - g_lookahead * alpha;
        self.x += &step;
        self.velocity = step;
        check_finite(self.x.as_slice(), self.t, "estimate")?;
        self.t += 1;
        Ok(alpha)
    }
}

impl ServerOptimizer for Nesterov {
    fn kind(&self) -> OptimizerKind {
        OptimizerKind::Nag
    }

    fn estimate(&self) -> &Vector {
        &self.x
    }

    fn iteration(&self) -> usize {
        self.t
    }

    fn iterate(&mut self, pool: &mut AgentPool) -> Result<StepReport> {
        let y = self.lookahead();
        let g = pool.gradient_round(&y)?;
        Ok(StepReport::with_alpha(self.apply(&g)?))
    }

    fn iterated_state(&mut self, targets: NoiseTargets) -> Vec<&mut [f64]> {
        match targets {
            NoiseTargets::All => vec![self.x.as_mut_slice(), self.velocity.as_mut_slice()],
            NoiseTargets::EstimateOnly => vec![self.x.as_mut_slice()],
        }
    }
}

fn check_momentum(momentum: f64) -> Result<()> {
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Config(format!(
            "momentum must lie in [0, 1), got {momentum}"
        )));
    }
    Ok(())
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    x: Vector,
    first: Vector,
    second: Vector,
    t: usize,
    schedule: AlphaSchedule,
    params: AdamParams,
}

impl Adam {
    pub fn new(x0: Vector, schedule: AlphaSchedule, params: AdamParams) -> Result<Self> {
        schedule.validate()?;
        let ok = (0.0..1.0).contains(&params.beta1)
            && (0.0..1.0).contains(&params.beta2)
            && params.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid Adam parameters {params:?}")));
        }
        let d = x0.len();
        Ok(Self {
            x: x0,
            first: Vector::zeros(d),
            second: Vector::zeros(d),
            t: 0,
            schedule,
            params,
        })
    }

    pub fn moments(&self) -> (&Vector, &Vector) {
        (&self.first, &self.second)
    }

    pub fn apply(&mut self, g_sum: &Vector) -> Result<f64> {
        ensure_dim("Adam gradient", self.x.len(), g_sum.len())?;
        let alpha = self.schedule.alpha(self.t)?;
        let AdamParams { beta1, beta2, eps } = self.params;
        self.first = &self.first * beta1 + g_sum * (1.0 - beta1);
        self.second = &self.second * beta2 + g_sum.component_mul(g_sum) * (1.0 - beta2);
        let step = (self.t + 1) as i32;
        let c1 = 1.0 - beta1.powi(step);
        let c2 = 1.0 - beta2.powi(step);
        for i in 0..self.x.len() {
            let m_hat = self.first[i] / c1;
            // Process noise may push the second moment below zero.
            let v_hat = (self.second[i] / c2).max(0.0);
            self.x[i] -= alpha * m_hat / (v_hat.sqrt() + eps);
        }
        check_finite(self.x.as_slice(), self.t, "estimate")?;
        self.t += 1;
        Ok(alpha)
    }
}

impl ServerOptimizer for Adam {
    fn kind(&self) -> OptimizerKind {
        OptimizerKind::Adam
    }

    fn estimate(&self) -> &Vector {
        &self.x
    }

    fn iteration(&self) -> usize {
        self.t
    }

    fn iterate(&mut self, pool: &mut AgentPool) -> Result<StepReport> {
        let g = pool.gradient_round(&self.x)?;
        Ok(StepReport::with_alpha(self.apply(&g)?))
    }

    fn iterated_state(&mut self, targets: NoiseTargets) -> Vec<&mut [f64]> {
        match targets {
            NoiseTargets::All => vec![
                self.x.as_mut_slice(),
                self.first.as_mut_slice(),
                self.second.as_mut_slice(),
            ],
            NoiseTargets::EstimateOnly => vec![self.x.as_mut_slice()],
        }
    }
}

/// Step-length rule for BFGS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LineSearch {
    Fixed {
        step: f64,
    },
    /// Armijo backtracking; every trial point costs one cost round.
    Backtracking {
        #[serde(default = "unit_step")]
        initial: f64,
        #[serde(default = "default_c1")]
        c1: f64,
        #[serde(default = "default_shrink")]
        shrink: f64,
        #[serde(default = "default_max_halvings")]
        max_halvings: usize,
    },
}

fn unit_step() -> f64 {
    1.0
}

fn default_c1() -> f64 {
    1e-4
}

fn default_shrink() -> f64 {
    0.5
}

fn default_max_halvings() -> usize {
    30
}

impl Default for LineSearch {
    fn default() -> Self {
        Self::Backtracking {
            initial: unit_step(),
            c1: default_c1(),
            shrink: default_shrink(),
            max_halvings: default_max_halvings(),
        }
    }
}

impl LineSearch {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Fixed { step } => step > 0.0,
            Self::Backtracking {
                initial, c1, shrink, ..
            } => initial > 0.0 && c1 > 0.0 && c1 < 1.0 && shrink > 0.0 && shrink < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid line search {self:?}")))
        }
    }
}

/// Inverse-Hessian BFGS update
/// `B⁺ = (I − ρ s yᵀ) B (I − ρ y sᵀ) + ρ s sᵀ`, `ρ = 1/(sᵀy)`,
/// in `O(d²)`. Returns `None` when the curvature condition `sᵀy > 0` fails.
/// `B` need not be symmetric (process noise can break symmetry).
pub fn bfgs_inverse_update(b: &Matrix, s: &Vector, y: &Vector) -> Option<Matrix> {
    let sy = s.dot(y);
    if !(sy > 0.0) {
        return None;
    }
    let rho = 1.0 / sy;
    let by = b * y;
    let ytb = b.tr_mul(y);
    let y_by = y.dot(&by);
    let mut out = b.clone();
    out.ger(-rho, &by, s, 1.0);
    out.ger(-rho, s, &ytb, 1.0);
    out.ger(rho * rho * y_by + rho, s, s, 1.0);
    Some(out)
}

/// BFGS on the aggregate cost with an inverse-Hessian approximation `B`,
/// `B(0) = I`.
///
/// The gradient at the accepted point is reused as the next iteration's
/// gradient, so each iteration costs one gradient round plus whatever cost
/// rounds the line search needs. Process noise on the state discards the
/// cached gradient and value.
#[derive(Debug, Clone, PartialEq)]
pub struct Bfgs {
    x: Vector,
    b: Matrix,
    t: usize,
    line_search: LineSearch,
    grad: Option<Vector>,
    value: Option<f64>,
}

impl Bfgs {
    pub fn new(x0: Vector, line_search: LineSearch) -> Result<Self> {
        line_search.validate()?;
        let d = x0.len();
        Ok(Self {
            x: x0,
            b: Matrix::identity(d, d),
            t: 0,
            line_search,
            grad: None,
            value: None,
        })
    }

    pub fn inverse_hessian(&self) -> &Matrix {
        &self.b
    }
}

impl ServerOptimizer for Bfgs {
    fn kind(&self) -> OptimizerKind {
        OptimizerKind::Bfgs
    }

    fn estimate(&self) -> &Vector {
        &self.x
    }

    fn iteration(&self) -> usize {
        self.t
    }

    fn iterate(&mut self, pool: &mut AgentPool) -> Result<StepReport> {
        let mut report = StepReport::default();
        let g = match self.grad.take() {
            Some(g) => g,
            None => {
                report.aux_rounds += 1;
                pool.gradient_round(&self.x)?
            }
        };
        let p = -(&self.b * &g);
        let slope = g.dot(&p);
        let step = match self.line_search {
            LineSearch::Fixed { step } => step,
            LineSearch::Backtracking {
                initial,
                c1,
                shrink,
                max_halvings,
            } => {
                if !(slope < 0.0) {
                    report.events.push(StepEvent::NonDescentDirection { slope });
                }
                let f0 = match self.value.take() {
                    Some(f) => f,
                    None => {
                        report.aux_rounds += 1;
                        pool.cost_round(&self.x)?
                    }
                };
                let mut s = initial;
                let mut accepted = false;
                for halving in 0..=max_halvings {
                    let trial = &self.x + &p * s;
                    let f = pool.cost_round(&trial)?;
                    report.aux_rounds += 1;
                    if f.is_finite() && f <= f0 + c1 * s * slope {
                        self.value = Some(f);
                        accepted = true;
                        break;
                    }
                    if halving < max_halvings {
                        s *= shrink;
                    }
                }
                if !accepted {
                    report.events.push(StepEvent::LineSearchExhausted {
                        halvings: max_halvings,
                    });
                }
                s
            }
        };
        let x_new = &self.x + &p * step;
        check_finite(x_new.as_slice(), self.t, "estimate")?;
        let g_new = pool.gradient_round(&x_new)?;
        let s = &x_new - &self.x;
        let y = &g_new - &g;
        match bfgs_inverse_update(&self.b, &s, &y) {
            Some(b) => {
                check_finite(b.as_slice(), self.t, "inverse Hessian approximation")?;
                self.b = b;
            }
            None => report.events.push(StepEvent::CurvatureSkipped { sy: s.dot(&y) }),
        }
        self.x = x_new;
        self.grad = Some(g_new);
        self.t += 1;
        report.alpha = Some(step);
        Ok(report)
    }

    fn iterated_state(&mut self, targets: NoiseTargets) -> Vec<&mut [f64]> {
        self.grad = None;
        self.value = None;
        match targets {
            NoiseTargets::All => vec![self.x.as_mut_slice(), self.b.as_mut_slice()],
            NoiseTargets::EstimateOnly => vec![self.x.as_mut_slice()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gd_unit_step_on_half_square() {
        let mut gd = Gd::new(Vector::from_vec(vec![3.0]), AlphaSchedule::constant(1.0)).unwrap();
        let g = gd.x.clone();
        gd.apply(&g).unwrap();
        assert_eq!(gd.x[0], 0.0);
    }

    #[test]
    fn gd_contracts_by_one_third_on_two_dim_nqm() {
        let h = [1.0, 0.5];
        let mut gd = Gd::new(Vector::from_vec(vec![1.0, 1.0]), AlphaSchedule::constant(4.0 / 3.0)).unwrap();
        let mut prev = gd.x.norm();
        for _ in 0..10 {
            let g = Vector::from_fn(2, |i, _| h[i] * gd.x[i]);
            gd.apply(&g).unwrap();
            assert_relative_eq!(gd.x.norm() / prev, 1.0 / 3.0, epsilon = 1e-12);
            prev = gd.x.norm();
        }
    }

    #[test]
    fn heavy_ball_without_momentum_is_gd() {
        let x0 = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let mut gd = Gd::new(x0.clone(), AlphaSchedule::constant(0.3)).unwrap();
        let mut hb = HeavyBall::new(x0, AlphaSchedule::constant(0.3), 0.0).unwrap();
        for _ in 0..5 {
            let g = gd.x.map(|v| v * v);
            let gh = hb.x.map(|v| v * v);
            gd.apply(&g).unwrap();
            hb.apply(&gh).unwrap();
            assert_eq!(gd.x, hb.x);
        }
    }

    #[test]
    fn adam_first_step_is_signed_alpha() {
        let mut adam = Adam::new(Vector::zeros(2), AlphaSchedule::constant(0.1), AdamParams::default()).unwrap();
        adam.apply(&Vector::from_vec(vec![2.0, -5.0])).unwrap();
        assert_relative_eq!(adam.x[0], -0.1, epsilon = 1e-8);
        assert_relative_eq!(adam.x[1], 0.1, epsilon = 1e-8);
    }

    #[test]
    fn bfgs_update_satisfies_secant() {
        let b = Matrix::identity(3, 3);
        let s = Vector::from_vec(vec![1.0, 0.5, -0.2]);
        let y = Vector::from_vec(vec![2.0, 0.3, 0.1]);
        let b1 = bfgs_inverse_update(&b, &s, &y).unwrap();
        assert_relative_eq!(&b1 * &y, s, epsilon = 1e-12);
        assert_relative_eq!(b1.clone(), b1.transpose(), epsilon = 1e-12);
    }

    #[test]
    fn bfgs_update_skips_negative_curvature() {
        let b = Matrix::identity(2, 2);
        let s = Vector::from_vec(vec![1.0, 0.0]);
        let y = Vector::from_vec(vec![-1.0, 0.0]);
        assert!(bfgs_inverse_update(&b, &s, &y).is_none());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(HeavyBall::new(Vector::zeros(1), AlphaSchedule::constant(0.1), 1.0).is_err());
        assert!(Bfgs::new(Vector::zeros(1), LineSearch::Fixed { step: 0.0 }).is_err());
    }
}
