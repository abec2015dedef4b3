//! Experiment configuration, read from JSON.
//!
//! Fields left out of a config are filled from per-setting defaults by
//! [`ExperimentConfig::resolve`]; the resolved config is what gets written
//! next to every run's trace.

use std::path::PathBuf;

use ipg_core::coordinator::{AdamParams, LineSearch};
use ipg_core::{AlphaSchedule, NoiseTargets, OptimizerKind, OptimizerSpec};
use ipg_datapipe::{DatasetKind, DatasetSpec, SymmetryMode, DEFAULT_INSTANCES};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const DEFAULT_MAX_ITER: usize = 10_000;
pub const DEFAULT_AGENTS: usize = 10;
/// Points per agent and round in mini-batch mode.
pub const DEFAULT_BATCH: usize = 10;

/// Options shared by the two image datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageProblem {
    pub instances: usize,
    /// Seed of the training-instance draw, independent of the run seed.
    pub data_seed: u64,
    pub symmetry: SymmetryMode,
    pub classes: Option<(u8, u8)>,
}

impl Default for ImageProblem {
    fn default() -> Self {
        Self {
            instances: DEFAULT_INSTANCES,
            data_seed: 0,
            symmetry: SymmetryMode::default(),
            classes: None,
        }
    }
}

impl ImageProblem {
    pub fn dataset_spec(&self, kind: DatasetKind) -> DatasetSpec {
        DatasetSpec {
            kind,
            instances: self.instances,
            seed: self.data_seed,
            symmetry: self.symmetry,
            classes: self.classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianSpec {
    Diagonal(Vec<f64>),
    /// Row-major symmetric matrix.
    Dense(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    /// `H = diag(1, 1/2, …, 1/d)`, minimizer at the origin, gradient
    /// queries corrupted by `N(0, noise_scale² H)`.
    Nqm {
        d: usize,
        #[serde(default = "unit")]
        noise_scale: f64,
        /// Draw the noise per agent with the local Hessians instead of
        /// once for the aggregate.
        #[serde(default)]
        per_agent_noise: bool,
    },
    Mnist(ImageProblem),
    Cifar10(ImageProblem),
    /// `f(x) = ½(x−x*)ᵀH(x−x*)`, split evenly across agents.
    CustomQuadratic {
        hessian: HessianSpec,
        #[serde(default)]
        x_star: Option<Vec<f64>>,
    },
}

fn unit() -> f64 {
    1.0
}

impl ProblemSpec {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Nqm { .. } => "nqm",
            Self::Mnist(_) => "mnist",
            Self::Cifar10(_) => "cifar10",
            Self::CustomQuadratic { .. } => "quadratic",
        }
    }

    pub fn dataset_kind(&self) -> Option<DatasetKind> {
        match self {
            Self::Mnist(_) => Some(DatasetKind::Mnist),
            Self::Cifar10(_) => Some(DatasetKind::Cifar10),
            _ => None,
        }
    }

    fn is_logistic(&self) -> bool {
        self.dataset_kind().is_some()
    }
}

/// Residual data in mini-batch rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualChoice {
    #[default]
    SameBatch,
    FullBatch,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    #[default]
    FullBatch,
    /// Uniform `(lo, hi)` noise added to the iterated state after each
    /// update; `hi` defaults per dataset.
    ProcessNoise {
        #[serde(default)]
        lo: f64,
        #[serde(default)]
        hi: Option<f64>,
        #[serde(default)]
        targets: NoiseTargets,
    },
    MiniBatch {
        #[serde(default = "default_batch")]
        size: usize,
        #[serde(default)]
        residuals: ResidualChoice,
    },
}

fn default_batch() -> usize {
    DEFAULT_BATCH
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Self::FullBatch => "full",
            Self::ProcessNoise { .. } => "noise",
            Self::MiniBatch { .. } => "minibatch",
        }
    }
}

/// Which rule ends a run before `max_iter`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Once the metric has stayed within `eps_tol` for a full window.
    #[default]
    Tolerance,
    /// Once the cost has settled for a full window.
    Settled,
    /// Once both of the above have happened.
    Both,
    /// Never; always runs `max_iter` iterations.
    Budget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SseParams {
    #[serde(default = "default_sse_delta")]
    pub delta: f64,
    #[serde(default = "default_sse_window")]
    pub window: usize,
}

fn default_sse_delta() -> f64 {
    1e-4
}

fn default_sse_window() -> usize {
    50
}

impl Default for SseParams {
    fn default() -> Self {
        Self {
            delta: default_sse_delta(),
            window: default_sse_window(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// File stem; derived from problem, mode, optimizer and seed if absent.
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    #[serde(default = "default_agents")]
    pub agents: usize,
    /// Defaults to the tuned parameters for the problem and mode.
    #[serde(default)]
    pub optimizer: Option<OptimizerSpec>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub eps_tol: Option<f64>,
    #[serde(default = "default_tol_window")]
    pub tol_window: usize,
    #[serde(default)]
    pub sse: SseParams,
    #[serde(default)]
    pub stop: StopRule,
    /// Standard deviation of the i.i.d. normal initial estimate.
    #[serde(default)]
    pub init_std: Option<f64>,
    /// Run agent rounds on the rayon pool.
    #[serde(default)]
    pub parallel: bool,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_agents() -> usize {
    DEFAULT_AGENTS
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

fn default_tol_window() -> usize {
    10
}

/// The experimental settings with tuned parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    Nqm,
    MnistFull,
    MnistNoise,
    MnistMini,
    CifarFull,
    CifarNoise,
    CifarMini,
}

impl Setting {
    pub fn of(problem: &ProblemSpec, mode: &Mode) -> Option<Self> {
        use Mode::*;
        Some(match (problem, mode) {
            (ProblemSpec::Nqm { .. }, FullBatch) => Self::Nqm,
            (ProblemSpec::Mnist(_), FullBatch) => Self::MnistFull,
            (ProblemSpec::Mnist(_), ProcessNoise { .. }) => Self::MnistNoise,
            (ProblemSpec::Mnist(_), MiniBatch { .. }) => Self::MnistMini,
            (ProblemSpec::Cifar10(_), FullBatch) => Self::CifarFull,
            (ProblemSpec::Cifar10(_), ProcessNoise { .. }) => Self::CifarNoise,
            (ProblemSpec::Cifar10(_), MiniBatch { .. }) => Self::CifarMini,
            _ => return None,
        })
    }

    /// Default `ε_tol`. Full-batch logistic runs use `1e-12`, tight enough
    /// that only runs that actually reach the minimum count as converged.
    pub fn eps_tol(self) -> f64 {
        match self {
            Self::Nqm => 1e-3,
            Self::MnistFull | Self::CifarFull => 1e-12,
            Self::MnistNoise => 6e-8,
            Self::CifarNoise => 4e-6,
            Self::MnistMini | Self::CifarMini => 2e-3,
        }
    }

    /// Upper end of the process-noise interval.
    pub fn process_noise_hi(self) -> Option<f64> {
        match self {
            Self::MnistNoise => Some(2.3e-4),
            Self::CifarNoise => Some(1e-4),
            _ => None,
        }
    }

    /// Tuned hyperparameters for `kind` in this setting.
    pub fn tuned(self, kind: OptimizerKind) -> OptimizerSpec {
        use Setting::*;
        let c = AlphaSchedule::constant;
        let ipg = |alpha: AlphaSchedule, delta, beta| OptimizerSpec::Ipg { delta, beta, alpha };
        let momentum = |alpha: f64, m: f64, nesterov: bool| {
            if nesterov {
                OptimizerSpec::Nag {
                    alpha: c(alpha),
                    momentum: m,
                }
            } else {
                OptimizerSpec::Hbm {
                    alpha: c(alpha),
                    momentum: m,
                }
            }
        };
        let adam = |alpha| OptimizerSpec::Adam {
            alpha,
            params: AdamParams::default(),
        };
        let bfgs = |step: Option<f64>| OptimizerSpec::Bfgs {
            line_search: step.map_or_else(LineSearch::default, |step| LineSearch::Fixed { step }),
        };
        let inv_t = AlphaSchedule::InverseT { c: 1.0 };
        let inv_sqrt = || AlphaSchedule::InverseSqrtT { c: 1.0 };
        match (self, kind) {
            (Nqm, OptimizerKind::Ipg) => ipg(c(1.99), 1.0, 0.0),
            (Nqm, OptimizerKind::Gd) => OptimizerSpec::Gd { alpha: c(1.99) },
            (Nqm, OptimizerKind::Nag) => momentum(1.33, 0.97, true),
            (Nqm, OptimizerKind::Hbm) => momentum(3.92, 0.96, false),
            (Nqm, OptimizerKind::Adam) => adam(inv_t),
            (Nqm, OptimizerKind::Bfgs) => bfgs(None),

            (MnistFull | MnistNoise, OptimizerKind::Ipg) => ipg(c(5e-4), 1.0, 0.0),
            (MnistFull | MnistNoise, OptimizerKind::Gd) => OptimizerSpec::Gd { alpha: c(5e-4) },
            (MnistFull | MnistNoise, OptimizerKind::Nag) => momentum(5e-4, 0.97, true),
            (MnistFull | MnistNoise, OptimizerKind::Hbm) => momentum(1e-3, 0.94, false),
            (MnistFull | MnistNoise, OptimizerKind::Adam) => adam(c(2.0)),
            (MnistFull | MnistNoise, OptimizerKind::Bfgs) => bfgs(Some(1e-3)),

            (MnistMini, OptimizerKind::Ipg) => ipg(c(1e-4), 0.05, 1.0),
            (MnistMini, OptimizerKind::Gd) => OptimizerSpec::Gd { alpha: c(1e-4) },
            (MnistMini, OptimizerKind::Nag) => momentum(5e-4, 0.97, true),
            (MnistMini, OptimizerKind::Hbm) => momentum(1e-3, 0.95, false),
            (MnistMini, OptimizerKind::Adam) => adam(c(1.0)),
            (MnistMini, OptimizerKind::Bfgs) => bfgs(Some(0.05)),

            (CifarFull, OptimizerKind::Ipg) => ipg(c(2e-4), 1.0, 0.0),
            (CifarFull, OptimizerKind::Gd) => OptimizerSpec::Gd { alpha: c(2e-4) },
            (CifarFull, OptimizerKind::Nag) => momentum(1e-4, 0.95, true),
            (CifarFull, OptimizerKind::Hbm) => momentum(3e-4, 0.94, false),
            (CifarFull, OptimizerKind::Adam) => adam(inv_sqrt()),
            (CifarFull, OptimizerKind::Bfgs) => bfgs(Some(2e-4)),

            (CifarNoise, OptimizerKind::Ipg) => ipg(c(2e-4), 0.05, 0.0),
            (CifarNoise, OptimizerKind::Gd) => OptimizerSpec::Gd { alpha: c(2e-4) },
            (CifarNoise, OptimizerKind::Nag) => momentum(1e-4, 0.93, true),
            (CifarNoise, OptimizerKind::Hbm) => momentum(3e-4, 0.94, false),
            (CifarNoise, OptimizerKind::Adam) => adam(c(0.1)),
            (CifarNoise, OptimizerKind::Bfgs) => bfgs(Some(1e-5)),

            (CifarMini, OptimizerKind::Ipg) => ipg(c(1e-3), 0.05, 0.0),
            (CifarMini, OptimizerKind::Gd) => OptimizerSpec::Gd { alpha: c(2e-4) },
            (CifarMini, OptimizerKind::Nag) => momentum(2e-4, 0.95, true),
            (CifarMini, OptimizerKind::Hbm) => momentum(2e-4, 0.92, false),
            (CifarMini, OptimizerKind::Adam) => adam(inv_sqrt()),
            (CifarMini, OptimizerKind::Bfgs) => bfgs(None),
        }
    }
}

impl ExperimentConfig {
    /// Minimal config for `problem` with every other field at its default.
    pub fn new(problem: ProblemSpec) -> Self {
        Self {
            problem,
            agents: DEFAULT_AGENTS,
            optimizer: None,
            mode: Mode::default(),
            seed: 0,
            max_iter: DEFAULT_MAX_ITER,
            eps_tol: None,
            tol_window: default_tol_window(),
            sse: SseParams::default(),
            stop: StopRule::default(),
            init_std: None,
            parallel: false,
            output: OutputSpec::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(crate::error::json_err("experiment config"))
    }

    pub fn setting(&self) -> Option<Setting> {
        Setting::of(&self.problem, &self.mode)
    }

    /// Uses the tuned parameters of `kind` for this config's setting.
    pub fn with_tuned(mut self, kind: OptimizerKind) -> Result<Self> {
        let setting = self.setting().ok_or_else(|| {
            HarnessError::Config(format!(
                "no tuned {kind} parameters for {} in {} mode",
                self.problem.label(),
                self.mode.label()
            ))
        })?;
        self.optimizer = Some(setting.tuned(kind));
        Ok(self)
    }

    /// Fills every defaulted field and validates the result.
    pub fn resolve(&self) -> Result<Self> {
        let mut cfg = self.clone();
        let setting = cfg.setting();
        if cfg.optimizer.is_none() {
            return Err(HarnessError::Config("no optimizer given".into()));
        }
        if cfg.eps_tol.is_none() {
            cfg.eps_tol = setting.map(Setting::eps_tol);
        }
        if cfg.init_std.is_none() {
            cfg.init_std = Some(if cfg.problem.is_logistic() { 0.1f64.sqrt() } else { 1.0 });
        }
        if let Mode::ProcessNoise { hi, .. } = &mut cfg.mode {
            if hi.is_none() {
                *hi = setting.and_then(Setting::process_noise_hi);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.agents == 0 {
            return bad("agent count must be positive".into());
        }
        match self.eps_tol {
            Some(e) if e > 0.0 && e.is_finite() => {}
            Some(e) => return bad(format!("eps_tol must be positive, got {e}")),
            None => return bad("eps_tol not set and no default for this problem".into()),
        }
        if self.tol_window == 0 || self.sse.window == 0 {
            return bad("stopping windows must be at least one iteration".into());
        }
        if let Some(s) = self.init_std {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("init_std must be finite and >= 0, got {s}"));
            }
        }
        match &self.mode {
            Mode::ProcessNoise { lo, hi, .. } => match hi {
                Some(hi) if lo <= hi => {}
                Some(hi) => return bad(format!("process noise needs lo <= hi, got ({lo}, {hi})")),
                None => return bad("process noise upper bound not set".into()),
            },
            Mode::MiniBatch { size: 0, .. } => return bad("batch size must be positive".into()),
            _ => {}
        }
        if let ProblemSpec::Nqm { d: 0, .. } = self.problem {
            return bad("NQM dimension must be positive".into());
        }
        if let Some(opt) = &self.optimizer {
            validate_optimizer(opt)?;
        }
        Ok(())
    }

    /// Output file stem.
    pub fn run_name(&self) -> String {
        if let Some(name) = &self.output.name {
            return name.clone();
        }
        let opt = self
            .optimizer
            .as_ref()
            .map_or("none".to_string(), |o| o.kind().label().to_ascii_lowercase());
        format!("{}_{}_{}_s{}", self.problem.label(), self.mode.label(), opt, self.seed)
    }
}

fn validate_optimizer(opt: &OptimizerSpec) -> Result<()> {
    let bad = |msg: String| Err(HarnessError::Config(msg));
    let momentum_ok = |m: f64| (0.0..1.0).contains(&m);
    match opt {
        OptimizerSpec::Ipg { delta, beta, alpha } => {
            alpha.validate()?;
            if !(*delta > 0.0) || !(*beta >= 0.0) {
                return bad(format!("IPG needs delta > 0 and beta >= 0, got {delta}, {beta}"));
            }
        }
        OptimizerSpec::Gd { alpha } => alpha.validate()?,
        OptimizerSpec::Nag { alpha, momentum } | OptimizerSpec::Hbm { alpha, momentum } => {
            alpha.validate()?;
            if !momentum_ok(*momentum) {
                return bad(format!("momentum must lie in [0, 1), got {momentum}"));
            }
        }
        OptimizerSpec::Adam { alpha, params } => {
            alpha.validate()?;
            if !momentum_ok(params.beta1) || !momentum_ok(params.beta2) || !(params.eps > 0.0) {
                return bad(format!("invalid Adam parameters {params:?}"));
            }
        }
        OptimizerSpec::Bfgs { line_search } => match *line_search {
            LineSearch::Fixed { step } if !(step > 0.0) => {
                return bad(format!("BFGS step must be positive, got {step}"))
            }
            LineSearch::Backtracking {
                initial, c1, shrink, ..
            } if !(initial > 0.0 && c1 > 0.0 && c1 < 1.0 && shrink > 0.0 && shrink < 1.0) => {
                return bad(format!("invalid backtracking parameters {line_search:?}"))
            }
            _ => {}
        },
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_resolves_with_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"problem": {"kind": "nqm", "d": 50}}"#)
            .unwrap()
            .with_tuned(OptimizerKind::Ipg)
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(cfg.agents, 10);
        assert_eq!(cfg.max_iter, 10_000);
        assert_eq!(cfg.eps_tol, Some(1e-3));
        assert_eq!(cfg.init_std, Some(1.0));
        assert_eq!(cfg.run_name(), "nqm_full_ipg_s0");
    }

    #[test]
    fn logistic_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"problem": {"kind": "mnist"}, "mode": {"kind": "process_noise"},
                "optimizer": {"optimizer": "gd", "alpha": {"kind": "constant", "value": 5e-4}}}"#,
        )
        .unwrap()
        .resolve()
        .unwrap();
        assert_eq!(cfg.init_std, Some(0.1f64.sqrt()));
        assert_eq!(cfg.eps_tol, Some(6e-8));
        assert!(matches!(cfg.mode, Mode::ProcessNoise { hi: Some(h), .. } if h == 2.3e-4));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::new(ProblemSpec::Cifar10(ImageProblem::default()))
            .with_tuned(OptimizerKind::Adam)
            .unwrap()
            .resolve()
            .unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let mut cfg = ExperimentConfig::new(ProblemSpec::Nqm {
            d: 4,
            noise_scale: 1.0,
            per_agent_noise: false,
        });
        cfg.optimizer = Some(OptimizerSpec::Hbm {
            alpha: AlphaSchedule::constant(0.1),
            momentum: 1.5,
        });
        assert!(cfg.resolve().is_err());
        cfg.optimizer = None;
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn every_setting_has_every_optimizer() {
        use Setting::*;
        for s in [Nqm, MnistFull, MnistNoise, MnistMini, CifarFull, CifarNoise, CifarMini] {
            for k in OptimizerKind::ALL {
                let spec = s.tuned(k);
                assert_eq!(spec.kind(), k);
                validate_optimizer(&spec).unwrap();
            }
        }
    }
}
