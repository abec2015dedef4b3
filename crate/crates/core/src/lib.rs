//! Iteratively pre-conditioned gradient descent (IPG) for server-agent
//! distributed convex optimization, with the baseline optimizers it is
//! compared against and dense oracles for its convergence theory.
//!
//! The server holds an estimate `x` and a preconditioner `K`; each round the
//! agents return local gradients and preconditioner residuals computed from
//! their private costs, and the server applies
//!
//! ```text
//! x ← x − δ K Σ g^i
//! K ← K − α Σ R^i,   R^i = (∇²f^i(x) + (β/m) I) K − (1/m) I
//! ```

pub mod agent;
pub mod coordinator;
pub mod costs;
pub mod error;
pub mod numkit;
pub mod theory;

pub use agent::{Agent, AgentPool, AgentReply, BatchMode, ResidualData, RoundCounter};
pub use coordinator::{
    step, AlphaSchedule, IpgState, NoiseSpec, NoiseTargets, OptimizerKind, OptimizerSpec,
    ServerOptimizer, StepEvent, StepReport,
};
pub use costs::{Aggregate, CostModel, LogisticCost, QuadraticCost};
pub use error::{Error, Result};
pub use numkit::{Matrix, SeededRng, Vector};
