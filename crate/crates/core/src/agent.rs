//! Agent-side computation of one synchronous round, and the in-process pool
//! that fans a broadcast out to all agents and sums the replies.

use std::sync::Arc;

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::coordinator::GaussianNoise;
use crate::costs::CostModel;
use crate::error::{ensure_dim, Error, Result};
use crate::numkit::{Matrix, SeededRng, Vector};

/// Which local points an agent uses per round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Full,
    /// `size` points drawn uniformly without replacement, fresh each round.
    MiniBatch { size: usize },
}

/// Data used for the residual vectors when running mini-batch rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualData {
    /// Same sampled batch as the gradient, identically rescaled.
    #[default]
    SameBatch,
    FullBatch,
}

/// One agent's reply to an IPG broadcast: `d + d²` scalars and nothing else.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentReply {
    pub gradient: Vector,
    /// Column `j` is `R_j = (∇²f^i(x) + (β/m)I)k_j − (1/m)e_j`.
    pub residuals: Matrix,
}

#[derive(Debug, Clone)]
pub struct Agent {
    id: usize,
    cost: Arc<dyn CostModel>,
    rng: SeededRng,
    batch: BatchMode,
    residual_data: ResidualData,
    m_total: usize,
    beta: f64,
    gradient_noise: Option<GaussianNoise>,
}

impl Agent {
    pub fn new(
        id: usize,
        cost: Arc<dyn CostModel>,
        rng: SeededRng,
        m_total: usize,
        beta: f64,
    ) -> Result<Self> {
        if m_total == 0 {
            return Err(Error::Config("agent count must be positive".into()));
        }
        if !(beta >= 0.0) {
            return Err(Error::Config(format!("beta must be >= 0, got {beta}")));
        }
        Ok(Self {
            id,
            cost,
            rng,
            batch: BatchMode::Full,
            residual_data: ResidualData::SameBatch,
            m_total,
            beta,
            gradient_noise: None,
        })
    }

    pub fn with_batch(mut self, batch: BatchMode, residual_data: ResidualData) -> Result<Self> {
        if let BatchMode::MiniBatch { size } = batch {
            let n = self.cost.num_points();
            if size == 0 || size > n {
                return Err(Error::Config(format!(
                    "agent {}: batch size {size} outside 1..={n}",
                    self.id
                )));
            }
        }
        self.batch = batch;
        self.residual_data = residual_data;
        Ok(self)
    }

    /// Corrupts every local gradient query with an independent draw.
    pub fn with_gradient_noise(mut self, noise: GaussianNoise) -> Self {
        self.gradient_noise = Some(noise);
        self
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn m_total(&self) -> usize {
        self.m_total
    }

    pub fn dim(&self) -> usize {
        self.cost.dim()
    }

    fn draw_batch(&mut self) -> Option<(Vec<usize>, f64)> {
        match self.batch {
            BatchMode::Full => None,
            BatchMode::MiniBatch { size } => {
                let n = self.cost.num_points();
                let mut rows = sample(&mut self.rng, n, size).into_vec();
                rows.sort_unstable();
                Some((rows, n as f64 / size as f64))
            }
        }
    }

    fn gradient_on(&mut self, x: &Vector, batch: Option<&(Vec<usize>, f64)>) -> Result<Vector> {
        let mut g = match batch {
            None => self.cost.gradient(x),
            Some((rows, scale)) => self.cost.sampled_gradient(x, rows, *scale),
        };
        if let Some(noise) = &self.gradient_noise {
            g += noise.sample(&mut self.rng);
        }
        Ok(g)
    }

    fn residuals_from(&self, curvature_times_k: Matrix, k: &Matrix) -> Matrix {
        let m = self.m_total as f64;
        let mut r = curvature_times_k;
        if self.beta != 0.0 {
            let c = self.beta / m;
            r.zip_apply(k, |a, b| *a += b * c);
        }
        for j in 0..r.ncols() {
            r[(j, j)] -= 1.0 / m;
        }
        r
    }

    /// `g^i = ∇f^i(x)`, or its rescaled mini-batch estimate.
    pub fn compute_gradient(&mut self, x: &Vector) -> Result<Vector> {
        ensure_dim("agent gradient", self.dim(), x.len())?;
        let batch = self.draw_batch();
        self.gradient_on(x, batch.as_ref())
    }

    /// Full-batch residual vectors for the broadcast preconditioner `k`.
    pub fn compute_residuals(&self, x: &Vector, k: &Matrix) -> Result<Matrix> {
        let d = self.dim();
        ensure_dim("agent residual x", d, x.len())?;
        ensure_dim("agent residual K rows", d, k.nrows())?;
        ensure_dim("agent residual K cols", d, k.ncols())?;
        Ok(self.residuals_from(self.cost.hess_mat(x, k), k))
    }

    /// Steps 2–3 of a round: gradient and residuals at the broadcast `(x, K)`.
    pub fn run_round(&mut self, x: &Vector, k: &Matrix) -> Result<AgentReply> {
        let d = self.dim();
        ensure_dim("agent round x", d, x.len())?;
        ensure_dim("agent round K rows", d, k.nrows())?;
        ensure_dim("agent round K cols", d, k.ncols())?;
        let batch = self.draw_batch();
        let gradient = self.gradient_on(x, batch.as_ref())?;
        let curvature = match (&batch, self.residual_data) {
            (Some((rows, scale)), ResidualData::SameBatch) => {
                self.cost.sampled_hess_mat(x, rows, *scale, k)
            }
            _ => self.cost.hess_mat(x, k),
        };
        let residuals = self.residuals_from(curvature, k);
        Ok(AgentReply {
            gradient,
            residuals,
        })
    }

    /// Local cost value `f^i(x)`, used by cost-evaluation rounds.
    pub fn local_value(&self, x: &Vector) -> Result<f64> {
        ensure_dim("agent value", self.dim(), x.len())?;
        Ok(self.cost.value(x))
    }
}

/// Round counts by kind. An optimizer iteration may use several rounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RoundCounter {
    pub gradient: u64,
    pub preconditioner: u64,
    pub cost: u64,
}

impl RoundCounter {
    pub fn total(&self) -> u64 {
        self.gradient + self.preconditioner + self.cost
    }
}

/// All `m` agents of one run behind a synchronous round barrier.
///
/// Replies are summed in agent-id order whether or not the agents ran in
/// parallel, so sums are bit-reproducible.
#[derive(Debug, Clone)]
pub struct AgentPool {
    agents: Vec<Agent>,
    aggregate_noise: Option<(GaussianNoise, SeededRng)>,
    parallel: bool,
    rounds: RoundCounter,
}

impl AgentPool {
    pub fn new(agents: Vec<Agent>) -> Result<Self> {
        let d = agents
            .first()
            .map(|a| a.dim())
            .ok_or_else(|| Error::Config("agent pool needs at least one agent".into()))?;
        let (m, beta) = (agents[0].m_total, agents[0].beta);
        for a in &agents {
            ensure_dim("agent dimension", d, a.dim())?;
            if a.m_total != agents.len() || a.beta != beta || a.m_total != m {
                return Err(Error::Config(
                    "agents must share the broadcast β and agent count m".into(),
                ));
            }
        }
        Ok(Self {
            agents,
            aggregate_noise: None,
            parallel: false,
            rounds: RoundCounter::default(),
        })
    }

    /// Full-batch agents over `costs`; agent `i` draws from stream `i + 1` of
    /// `seed`.
    pub fn from_costs(costs: Vec<Arc<dyn CostModel>>, beta: f64, seed: u64) -> Result<Self> {
        let m = costs.len();
        let agents = costs
            .into_iter()
            .enumerate()
            .map(|(i, c)| Agent::new(i, c, SeededRng::new(seed, i as u64 + 1), m, beta))
            .collect::<Result<Vec<_>>>()?;
        Self::new(agents)
    }

    /// Adds one draw of `noise` to every aggregated gradient.
    pub fn with_aggregate_noise(mut self, noise: GaussianNoise, rng: SeededRng) -> Result<Self> {
        ensure_dim("aggregate noise", self.dim(), noise.dim())?;
        self.aggregate_noise = Some((noise, rng));
        Ok(self)
    }

    pub fn parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn dim(&self) -> usize {
        self.agents[0].dim()
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn rounds(&self) -> RoundCounter {
        self.rounds
    }

    fn fan_out<T, F>(&mut self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&mut Agent) -> Result<T> + Sync + Send,
    {
        if self.parallel {
            self.agents.par_iter_mut().map(f).collect()
        } else {
            self.agents.iter_mut().map(f).collect()
        }
    }

    fn add_aggregate_noise(&mut self, g: &mut Vector) {
        if let Some((noise, rng)) = &mut self.aggregate_noise {
            *g += noise.sample(rng);
        }
    }

    /// One gradient-only round at `x`: returns `Σ_i g^i`.
    pub fn gradient_round(&mut self, x: &Vector) -> Result<Vector> {
        let grads = self.fan_out(|a| a.compute_gradient(x))?;
        self.rounds.gradient += 1;
        let mut sum = grads
            .into_iter()
            .fold(Vector::zeros(x.len()), |acc, g| acc + g);
        self.add_aggregate_noise(&mut sum);
        Ok(sum)
    }

    /// One IPG round at `(x, K)`: returns `(Σ_i g^i, Σ_i R^i)`.
    pub fn ipg_round(&mut self, x: &Vector, k: &Matrix) -> Result<(Vector, Matrix)> {
        let replies = self.fan_out(|a| a.run_round(x, k))?;
        self.rounds.preconditioner += 1;
        let d = x.len();
        let mut replies = replies.into_iter();
        // The pool is never empty; start from the first reply to skip a d×d
        // zero accumulator.
        let first = replies.next().expect("agent pool is non-empty");
        let (mut g_sum, r_sum) = replies.fold((first.gradient, first.residuals), |(mut g, mut r), reply| {
            g += reply.gradient;
            r += reply.residuals;
            (g, r)
        });
        debug_assert_eq!(r_sum.shape(), (d, d));
        self.add_aggregate_noise(&mut g_sum);
        Ok((g_sum, r_sum))
    }

    /// One cost-evaluation round: returns `Σ_i f^i(x)`.
    pub fn cost_round(&mut self, x: &Vector) -> Result<f64> {
        let values = self.fan_out(|a| a.local_value(x))?;
        self.rounds.cost += 1;
        Ok(values.into_iter().sum())
    }

    /// Aggregate cost for monitoring; not counted as a protocol round.
    pub fn monitor_value(&self, x: &Vector) -> f64 {
        self.agents.iter().map(|a| a.cost.value(x)).sum()
    }

    /// Exact aggregate gradient for monitoring; no noise, not counted.
    pub fn monitor_gradient(&self, x: &Vector) -> Vector {
        self.agents
            .iter()
            .fold(Vector::zeros(x.len()), |acc, a| acc + a.cost.gradient(x))
    }

    /// Sum of the agents' closed-form Hessian bounds, if all have one.
    pub fn hessian_bound(&self) -> Option<f64> {
        self.agents.iter().map(|a| a.cost.hessian_bound()).sum()
    }

    /// Aggregate Hessian-vector product; the operator agents can serve for
    /// step-size estimation without exposing data.
    pub fn hess_vec(&self, x: &Vector, v: &Vector) -> Vector {
        self.agents
            .iter()
            .fold(Vector::zeros(x.len()), |acc, a| acc + a.cost.hess_vec(x, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::QuadraticCost;
    use approx::assert_relative_eq;

    fn diag_agent(diag: &[f64], m: usize, beta: f64) -> Agent {
        let h = Matrix::from_diagonal(&Vector::from_vec(diag.to_vec()));
        let cost: Arc<dyn CostModel> = Arc::new(QuadraticCost::from_hessian(&h).unwrap());
        Agent::new(0, cost, SeededRng::new(0, 1), m, beta).unwrap()
    }

    #[test]
    fn gradient_of_identity_quadratic() {
        let mut a = diag_agent(&[1.0, 1.0], 1, 0.0);
        let g = a.compute_gradient(&Vector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_relative_eq!(g, Vector::from_vec(vec![1.0, 2.0]), epsilon = 1e-15);
    }

    #[test]
    fn residuals_of_zero_preconditioner() {
        let a = diag_agent(&[2.0, 3.0, 1.0], 4, 0.7);
        let r = a
            .compute_residuals(&Vector::from_vec(vec![0.1, 0.2, 0.3]), &Matrix::zeros(3, 3))
            .unwrap();
        assert_eq!(r, Matrix::identity(3, 3) * -0.25);
    }

    #[test]
    fn residuals_vanish_at_inverse_hessian() {
        let a = diag_agent(&[2.0, 4.0], 1, 0.0);
        let k = Matrix::from_diagonal(&Vector::from_vec(vec![0.5, 0.25]));
        let r = a.compute_residuals(&Vector::zeros(2), &k).unwrap();
        assert_relative_eq!(r, Matrix::zeros(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn residuals_hand_evaluated() {
        let a = diag_agent(&[1.0, 2.0], 2, 0.5);
        let r = a
            .compute_residuals(&Vector::zeros(2), &Matrix::identity(2, 2))
            .unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[0.75, 0.0, 0.0, 1.75]);
        assert_relative_eq!(r, expected, epsilon = 1e-14);
    }

    #[test]
    fn mini_batch_of_everything_equals_full_batch() {
        let cost: Arc<dyn CostModel> = Arc::new(
            QuadraticCost::new(crate::costs::QuadraticFactor::Dense(Matrix::from_row_slice(
                3,
                2,
                &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1],
            ))),
        );
        let mut full = Agent::new(0, cost.clone(), SeededRng::new(4, 1), 1, 0.0).unwrap();
        let mut mini = Agent::new(0, cost, SeededRng::new(4, 1), 1, 0.0)
            .unwrap()
            .with_batch(BatchMode::MiniBatch { size: 3 }, ResidualData::SameBatch)
            .unwrap();
        let x = Vector::from_vec(vec![0.4, -1.1]);
        let k = Matrix::from_row_slice(2, 2, &[0.2, 0.1, -0.3, 0.5]);
        assert_relative_eq!(
            full.compute_gradient(&x).unwrap(),
            mini.compute_gradient(&x).unwrap(),
            epsilon = 1e-14
        );
        let (rf, rm) = (full.run_round(&x, &k).unwrap(), mini.run_round(&x, &k).unwrap());
        assert_relative_eq!(rf.residuals, rm.residuals, epsilon = 1e-14);
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let a = diag_agent(&[1.0, 1.0], 1, 0.0);
        assert!(a.with_batch(BatchMode::MiniBatch { size: 3 }, ResidualData::SameBatch).is_err());
    }

    #[test]
    fn pool_rejects_inconsistent_broadcast() {
        let a = diag_agent(&[1.0], 2, 0.5);
        let mut b = diag_agent(&[1.0], 2, 0.1);
        b.id = 1;
        assert!(AgentPool::new(vec![a, b]).is_err());
    }
}
