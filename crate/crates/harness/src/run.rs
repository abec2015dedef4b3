//! The synchronous round loop of one experiment.

use ipg_core::numkit::draw_normal;
use ipg_core::{
    step, Agent, AgentPool, BatchMode, Error as CoreError, NoiseSpec, ResidualData, SeededRng,
    StepEvent, Vector,
};
use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Mode, ResidualChoice, StopRule};
use crate::error::{HarnessError, Result};
use crate::problem::{Env, GradientNoise, MetricKind, Problem};
use crate::summary::{summarize, SummaryRow};

/// Stream of the run seed that draws `x(0)`; agent `i` uses stream `i + 1`.
pub const INIT_STREAM: u64 = 0;
pub const GRADIENT_NOISE_STREAM: u64 = 1 << 32;
pub const PROCESS_NOISE_STREAM: u64 = (1 << 32) + 1;

/// One line of a trace; `t = 0` is the initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    /// `||x(t)−x*|| / ||x(0)−x*||` when `x*` is known.
    pub rel_error: Option<f64>,
    /// Exact aggregate cost `f(x(t))`.
    pub cost: f64,
    /// Step size used to produce `x(t)`.
    pub alpha: Option<f64>,
    /// Process noise was injected after this update.
    pub noise_flag: bool,
    /// Rounds beyond the nominal one spent on this iteration.
    pub aux_rounds: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIter,
    Diverged,
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Converged => "converged",
            Self::MaxIter => "max_iter",
            Self::Diverged => "diverged",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rounds {
    pub gradient: u64,
    pub preconditioner: u64,
    pub cost: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub t: usize,
    #[serde(flatten)]
    pub event: StepEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub status: RunStatus,
    pub divergence: Option<String>,
    pub rounds: Rounds,
    pub events: Vec<LoggedEvent>,
    pub x0: Vector,
    pub x_final: Vector,
}

impl RunTrace {
    pub fn costs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cost).collect()
    }

    /// Iterations performed.
    pub fn iterations(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }
}

/// A finished run with everything needed to emit it.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Fully resolved configuration.
    pub config: ExperimentConfig,
    pub metric: MetricKind,
    pub f_star: Option<f64>,
    pub fingerprint: Option<String>,
    pub trace: RunTrace,
    pub summary: SummaryRow,
}

/// Builds the problem and runs `cfg` on it.
pub fn run_experiment(cfg: &ExperimentConfig, env: &Env) -> Result<RunOutput> {
    let cfg = cfg.resolve()?;
    let problem = Problem::build(&cfg, env)?;
    run_on(&problem, &cfg)
}

fn build_pool(problem: &Problem, cfg: &ExperimentConfig, beta: f64) -> Result<AgentPool> {
    let m = problem.agents();
    let batch = match cfg.mode {
        Mode::MiniBatch { size, residuals } => Some((
            BatchMode::MiniBatch { size },
            match residuals {
                ResidualChoice::SameBatch => ResidualData::SameBatch,
                ResidualChoice::FullBatch => ResidualData::FullBatch,
            },
        )),
        _ => None,
    };
    let mut agents = Vec::with_capacity(m);
    for (i, cost) in problem.costs.iter().enumerate() {
        let mut agent = Agent::new(i, cost.clone(), SeededRng::new(cfg.seed, i as u64 + 1), m, beta)?;
        if let Some((mode, residuals)) = batch {
            agent = agent.with_batch(mode, residuals)?;
        }
        if let Some(GradientNoise::PerAgent(noises)) = &problem.gradient_noise {
            agent = agent.with_gradient_noise(noises[i].clone());
        }
        agents.push(agent);
    }
    let mut pool = AgentPool::new(agents)?.parallel(cfg.parallel);
    if let Some(GradientNoise::Aggregate(noise)) = &problem.gradient_noise {
        pool = pool.with_aggregate_noise(noise.clone(), SeededRng::new(cfg.seed, GRADIENT_NOISE_STREAM))?;
    }
    Ok(pool)
}

/// Counts consecutive hits of a condition.
#[derive(Debug, Default)]
struct Streak {
    run: usize,
    done: bool,
}

impl Streak {
    fn push(&mut self, hit: bool, window: usize) {
        self.run = if hit { self.run + 1 } else { 0 };
        self.done |= self.run >= window;
    }
}

/// Runs `cfg` on an already built problem, which must have `cfg.agents`
/// agents.
pub fn run_on(problem: &Problem, cfg: &ExperimentConfig) -> Result<RunOutput> {
    let cfg = cfg.resolve()?;
    if problem.agents() != cfg.agents {
        return Err(HarnessError::Config(format!(
            "problem has {} agents, config asks for {}",
            problem.agents(),
            cfg.agents
        )));
    }
    let spec = cfg.optimizer.clone().expect("resolved config has an optimizer");
    let eps_tol = cfg.eps_tol.expect("resolved config has eps_tol");
    let d = problem.dim();

    let mut init_rng = SeededRng::new(cfg.seed, INIT_STREAM);
    let x0 = draw_normal(&mut init_rng, 0.0, cfg.init_std.unwrap_or(1.0), d)?;
    let mut pool = build_pool(problem, &cfg, spec.agent_beta())?;
    let noise = match &cfg.mode {
        Mode::ProcessNoise { lo, hi, targets } => NoiseSpec::ProcessUniform {
            lo: *lo,
            hi: hi.expect("resolved process noise"),
            targets: *targets,
        },
        _ => NoiseSpec::None,
    };
    let mut noise_rng = SeededRng::new(cfg.seed, PROCESS_NOISE_STREAM);
    let mut opt = spec.build(x0.clone())?;

    let err_denom = problem.x_star.as_ref().map(|xs| (&x0 - xs).norm());
    if problem.metric == MetricKind::RelError && !err_denom.is_some_and(|d| d > 0.0) {
        return Err(HarnessError::Metric("relative error undefined: x(0) equals x*".into()));
    }
    let rel_error = |x: &Vector| match (&problem.x_star, err_denom) {
        (Some(xs), Some(den)) if den > 0.0 => Some((x - xs).norm() / den),
        _ => None,
    };
    let f_star = problem.f_star.filter(|_| problem.metric == MetricKind::RelCost);
    let metric_of = |row: &TraceRow| match problem.metric {
        MetricKind::RelError => row.rel_error.unwrap_or(f64::INFINITY),
        MetricKind::RelCost => (row.cost - f_star.unwrap_or(f64::NAN)) / f_star.unwrap_or(f64::NAN),
    };

    let mut rows = vec![TraceRow {
        t: 0,
        rel_error: rel_error(&x0),
        cost: pool.monitor_value(&x0),
        alpha: None,
        noise_flag: false,
        aux_rounds: 0,
    }];
    let mut tol = Streak::default();
    let mut settle = Streak::default();
    tol.push(metric_of(&rows[0]) <= eps_tol, cfg.tol_window);
    let stop_now = |tol: &Streak, settle: &Streak| match cfg.stop {
        StopRule::Tolerance => tol.done,
        StopRule::Settled => settle.done,
        StopRule::Both => tol.done && settle.done,
        StopRule::Budget => false,
    };

    let mut events = Vec::new();
    let mut divergence = None;
    for t in 1..=cfg.max_iter {
        if stop_now(&tol, &settle) {
            break;
        }
        let report = match step(opt.as_mut(), &mut pool, &noise, &mut noise_rng) {
            Ok(r) => r,
            Err(CoreError::Divergence { iteration, reason }) => {
                warn!("{} diverged at iteration {iteration}: {reason}", spec.kind());
                divergence = Some(reason);
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let x = opt.estimate();
        let cost = pool.monitor_value(x);
        if !cost.is_finite() {
            divergence = Some(format!("non-finite cost at iteration {t}"));
            break;
        }
        events.extend(report.events.into_iter().map(|event| LoggedEvent { t, event }));
        let row = TraceRow {
            t,
            rel_error: rel_error(x),
            cost,
            alpha: report.alpha,
            noise_flag: report.noise_applied,
            aux_rounds: report.aux_rounds,
        };
        tol.push(metric_of(&row) <= eps_tol, cfg.tol_window);
        settle.push((cost - rows[t - 1].cost).abs() < cfg.sse.delta, cfg.sse.window);
        rows.push(row);
    }

    let status = if divergence.is_some() {
        RunStatus::Diverged
    } else if match cfg.stop {
        StopRule::Budget => tol.done,
        _ => stop_now(&tol, &settle),
    } {
        RunStatus::Converged
    } else {
        RunStatus::MaxIter
    };
    let rc = pool.rounds();
    let trace = RunTrace {
        rows,
        status,
        divergence,
        rounds: Rounds {
            gradient: rc.gradient,
            preconditioner: rc.preconditioner,
            cost: rc.cost,
            total: rc.total(),
        },
        events,
        x0,
        x_final: opt.estimate().clone(),
    };
    debug!(
        "{} {}: {} after {} iterations",
        problem.label,
        spec.kind(),
        trace.status,
        trace.iterations()
    );
    let test_error = problem.test.as_ref().map(|design| crate::metrics::test_error(&trace.x_final, design));
    let summary = summarize(&cfg, problem.metric, f_star, &trace.rows, trace.status, trace.rounds.total, test_error)?;
    Ok(RunOutput {
        config: cfg,
        metric: problem.metric,
        f_star,
        fingerprint: problem.fingerprint.clone(),
        trace,
        summary,
    })
}
