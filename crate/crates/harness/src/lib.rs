//! Experiment harness for IPG and its baselines: configuration, the
//! synchronous run loop, relative metrics and stopping rules, and CSV/JSON
//! emission of traces and summary tables.
//!
//! A run is fully determined by its resolved [`ExperimentConfig`]: the
//! seed fixes `x(0)`, every agent's sampling stream and all noise draws, so
//! repeated runs emit byte-identical traces.

pub mod config;
pub mod emit;
pub mod error;
pub mod metrics;
pub mod problem;
pub mod reference;
pub mod run;
pub mod summary;
pub mod sweep;
pub mod verify;

pub use config::{ExperimentConfig, Mode, ProblemSpec, Setting, StopRule};
pub use error::{HarnessError, Result};
pub use problem::{Env, MetricKind, Problem};
pub use run::{run_experiment, run_on, RunOutput, RunStatus, RunTrace, TraceRow};
pub use summary::SummaryRow;
pub use sweep::{run_sweep, run_sweep_on, OptimizerChoice, SweepConfig, SweepOutput};
