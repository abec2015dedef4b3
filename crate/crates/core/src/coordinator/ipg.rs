use super::{check_finite, AlphaSchedule, NoiseTargets, OptimizerKind, ServerOptimizer, StepReport};
use crate::agent::AgentPool;
use crate::error::{ensure_dim, Error, Result};
use crate::numkit::{Matrix, Vector};

/// Server state of iteratively pre-conditioned gradient descent: the estimate
/// `x(t)` and the preconditioner `K(t)`, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct IpgState {
    x: Vector,
    k: Matrix,
    t: usize,
    delta: f64,
    beta: f64,
    schedule: AlphaSchedule,
}

impl IpgState {
    pub fn new(x0: Vector, k0: Matrix, delta: f64, beta: f64, schedule: AlphaSchedule) -> Result<Self> {
        let d = x0.len();
        ensure_dim("IPG K(0) rows", d, k0.nrows())?;
        ensure_dim("IPG K(0) cols", d, k0.ncols())?;
        if !(delta >= 0.0) || !(beta >= 0.0) {
            return Err(Error::Config(format!(
                "IPG needs δ >= 0 and β >= 0, got δ = {delta}, β = {beta}"
            )));
        }
        schedule.validate()?;
        Ok(Self {
            x: x0,
            k: k0,
            t: 0,
            delta,
            beta,
            schedule,
        })
    }

    /// `K(0) = 0`
    pub fn with_zero_preconditioner(x0: Vector, delta: f64, beta: f64, schedule: AlphaSchedule) -> Result<Self> {
        let d = x0.len();
        Self::new(x0, Matrix::zeros(d, d), delta, beta, schedule)
    }

    pub fn x(&self) -> &Vector {
        &self.x
    }

    pub fn k(&self) -> &Matrix {
        &self.k
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn schedule(&self) -> &AlphaSchedule {
        &self.schedule
    }

    /// `x(t) − δ K(t) Σ g^i(t)`, using the pre-update preconditioner.
    pub fn update_x(&self, g_sum: &Vector) -> Result<Vector> {
        ensure_dim("IPG gradient sum", self.x.len(), g_sum.len())?;
        let x = &self.x - (&self.k * g_sum) * self.delta;
        check_finite(x.as_slice(), self.t, "estimate")?;
        Ok(x)
    }

    /// `K(t) − α(t) Σ R^i(t)`, column by column.
    pub fn update_k(&self, r_sum: &Matrix, alpha: f64) -> Result<Matrix> {
        ensure_dim("IPG residual rows", self.k.nrows(), r_sum.nrows())?;
        ensure_dim("IPG residual cols", self.k.ncols(), r_sum.ncols())?;
        let k = &self.k - r_sum * alpha;
        check_finite(k.as_slice(), self.t, "preconditioner")?;
        Ok(k)
    }

    /// Step 4: the estimate moves with `K(t)`, then `K` advances to `K(t+1)`.
    /// Returns the `α(t)` used.
    pub fn apply(&mut self, g_sum: &Vector, r_sum: &Matrix) -> Result<f64> {
        let alpha = self.schedule.alpha(self.t)?;
        let x = self.update_x(g_sum)?;
        ensure_dim("IPG residual rows", self.k.nrows(), r_sum.nrows())?;
        ensure_dim("IPG residual cols", self.k.ncols(), r_sum.ncols())?;
        // In place; same arithmetic as `update_k`.
        self.k.zip_apply(r_sum, |k, r| *k -= r * alpha);
        check_finite(self.k.as_slice(), self.t, "preconditioner")?;
        self.x = x;
        self.t += 1;
        Ok(alpha)
    }
}

impl ServerOptimizer for IpgState {
    fn kind(&self) -> OptimizerKind {
        OptimizerKind::Ipg
    }

    fn estimate(&self) -> &Vector {
        &self.x
    }

    fn iteration(&self) -> usize {
        self.t
    }

    fn iterate(&mut self, pool: &mut AgentPool) -> Result<StepReport> {
        let (g_sum, r_sum) = pool.ipg_round(&self.x, &self.k)?;
        let alpha = self.apply(&g_sum, &r_sum)?;
        Ok(StepReport::with_alpha(alpha))
    }

    fn iterated_state(&mut self, targets: NoiseTargets) -> Vec<&mut [f64]> {
        match targets {
            NoiseTargets::All => vec![self.x.as_mut_slice(), self.k.as_mut_slice()],
            NoiseTargets::EstimateOnly => vec![self.x.as_mut_slice()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_preconditioner_leaves_x() {
        let x0 = Vector::from_vec(vec![1.0, -2.0]);
        let s = IpgState::with_zero_preconditioner(x0.clone(), 1.0, 0.0, AlphaSchedule::constant(0.5)).unwrap();
        assert_eq!(s.update_x(&Vector::from_vec(vec![3.0, 4.0])).unwrap(), x0);
    }

    #[test]
    fn identity_preconditioner_is_gradient_step() {
        let s = IpgState::new(
            Vector::from_vec(vec![1.0, 1.0]),
            Matrix::identity(2, 2),
            1.0,
            0.0,
            AlphaSchedule::constant(0.5),
        )
        .unwrap();
        let x = s.update_x(&Vector::from_vec(vec![0.25, -1.0])).unwrap();
        assert_eq!(x, Vector::from_vec(vec![0.75, 2.0]));
    }

    #[test]
    fn k_update_from_zero() {
        let s = IpgState::with_zero_preconditioner(Vector::zeros(3), 1.0, 0.0, AlphaSchedule::constant(0.5)).unwrap();
        let k = s.update_k(&(-Matrix::identity(3, 3)), 0.5).unwrap();
        assert_relative_eq!(k, Matrix::identity(3, 3) * 0.5);
    }

    #[test]
    fn divergence_is_reported() {
        let s = IpgState::new(
            Vector::from_vec(vec![1.0]),
            Matrix::from_element(1, 1, f64::MAX),
            1.0,
            0.0,
            AlphaSchedule::constant(0.5),
        )
        .unwrap();
        let err = s.update_x(&Vector::from_vec(vec![-f64::MAX])).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }
}
