//! Experiment configuration.
//!
//! A TOML file with dotted sections. Every section is optional except
//! `[dataset]`; unknown keys anywhere are rejected.
//!
//! ```toml
//! seeds = [0, 1, 2]
//! out = "runs/ring"
//!
//! [dataset]
//! kind = "gaussian_ring"   # std_gaussian | gaussian_ring | two_moons | checkerboard | polygon_counterexample
//! n = 4096
//! seed = 7
//! modes = 8
//! radius = 4.0
//! mode_std = 0.3
//!
//! [strategy]
//! kind = "loom"            # independent | minibatch_ot | loom | phi_mix
//! m = 64
//! caches = 4
//!
//! [model]
//! hidden = [64, 64, 64]
//!
//! [train]
//! iterations = 10000
//! lr = 1e-3
//!
//! [eval]
//! solvers = ["midpoint:2", "midpoint:4", "midpoint:6", "dopri5"]
//! ```

use std::path::{Path, PathBuf};

use loomflow::coupling::{CouplingStrategy, StationaryConfig};
use loomflow::datasets::{default_polygon_offset, DatasetKind, DatasetSpec};
use loomflow::flow::CfmConfig;
use loomflow::metrics::EvalConfig;
use loomflow::model::{Activation, AdamConfig, MlpConfig, TrainConfig};
use loomflow::ode::{SolverConfig, SolverKind};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub strategy: StrategySection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub cfm: CfmConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub converge: ConvergeSection,
    #[serde(default)]
    pub sample: SampleSection,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    StdGaussian,
    GaussianRing,
    TwoMoons,
    Checkerboard,
    PolygonCounterexample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetName,
    pub n: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_modes")]
    pub modes: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_mode_std")]
    pub mode_std: f64,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default = "default_cells")]
    pub cells: usize,
    /// Defaults to a fifth of the vertex spacing.
    #[serde(default)]
    pub offset_angle: Option<f64>,
}

fn default_dim() -> usize {
    2
}
fn default_modes() -> usize {
    8
}
fn default_radius() -> f64 {
    4.0
}
fn default_mode_std() -> f64 {
    0.3
}
fn default_noise_std() -> f64 {
    0.1
}
fn default_cells() -> usize {
    4
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Independent,
    MinibatchOt,
    Loom,
    PhiMix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategySection {
    pub kind: StrategyName,
    /// Minibatch size, used for matching and for the gradient step.
    pub m: usize,
    pub caches: usize,
    pub phi: Option<f64>,
}

impl Default for StrategySection {
    fn default() -> Self {
        Self { kind: StrategyName::Loom, m: 64, caches: 1, phi: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub time_freqs: usize,
    pub max_freq: f64,
    pub activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        let base = MlpConfig::new(2);
        Self { hidden: base.hidden, time_freqs: base.time_freqs, max_freq: base.max_freq, activation: base.activation }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: usize,
    pub lr: f64,
    pub warmup: usize,
    /// Coupled minibatches per gradient step.
    pub groups: usize,
    pub ema_decay: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::default();
        Self { iterations: base.iterations, lr: base.adam.lr, warmup: base.warmup, groups: base.groups, ema_decay: base.ema_decay }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n: usize,
    /// `euler:STEPS`, `midpoint:STEPS`, `dopri5` or `dopri5:TOL`.
    pub solvers: Vec<String>,
    pub curvature_steps: usize,
    pub curvature_samples: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n: 1000,
            solvers: ["midpoint:2", "midpoint:4", "midpoint:6", "dopri5"].map(String::from).to_vec(),
            curvature_steps: 100,
            curvature_samples: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeSection {
    /// Quiet batches before stopping; defaults to ten passes over the data.
    pub patience: Option<usize>,
    pub max_iters: usize,
    pub global_cost_every: usize,
}

impl Default for ConvergeSection {
    fn default() -> Self {
        Self { patience: None, max_iters: 1_000_000, global_cost_every: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub n: usize,
    pub solver: String,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { n: 64, solver: "midpoint:50".into() }
    }
}

pub fn parse_solver(text: &str) -> Result<SolverConfig, CliError> {
    let bad = || CliError::Config(format!("solver {text:?}: expected euler:STEPS, midpoint:STEPS, dopri5 or dopri5:TOL"));
    let (name, arg) = match text.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (text, None),
    };
    let cfg = match (name, arg) {
        ("euler", Some(a)) => SolverConfig::euler(a.parse().map_err(|_| bad())?),
        ("midpoint", Some(a)) => SolverConfig::midpoint(a.parse().map_err(|_| bad())?),
        ("dopri5", None) => SolverConfig::dopri5(1e-5, 1e-5),
        ("dopri5", Some(a)) => {
            let tol = a.parse().map_err(|_| bad())?;
            SolverConfig::dopri5(tol, tol)
        }
        _ => return Err(bad()),
    };
    cfg.validate().map_err(|e| CliError::Config(format!("solver {text:?}: {e}")))?;
    Ok(cfg)
}

pub fn solver_label(cfg: &SolverConfig) -> &'static str {
    match cfg.kind {
        SolverKind::Euler => "euler",
        SolverKind::Midpoint => "midpoint",
        SolverKind::Dopri5 => "dopri5",
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section so that no work starts on a bad config.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(CliError::Config("seeds must be distinct".into()));
        }
        let spec = self.dataset_spec();
        spec.validate().map_err(config_err)?;
        self.strategy().validate().map_err(config_err)?;
        if self.strategy.m == 0 || self.strategy.m > self.dataset.n {
            return Err(CliError::Config(format!("strategy.m = {} must be in 1..={}", self.strategy.m, self.dataset.n)));
        }
        if self.strategy.caches == 0 {
            return Err(CliError::Config("strategy.caches must be >= 1".into()));
        }
        if self.strategy.phi.is_some() && self.strategy.kind != StrategyName::PhiMix {
            return Err(CliError::Config("strategy.phi only applies to phi_mix".into()));
        }
        self.mlp_config().validate().map_err(config_err)?;
        self.train_config().validate().map_err(config_err)?;
        if !(self.train.lr.is_finite() && self.train.lr >= 0.0) {
            return Err(CliError::Config(format!("train.lr = {}", self.train.lr)));
        }
        if self.eval.n == 0 || self.sample.n == 0 {
            return Err(CliError::Config("eval.n and sample.n must be >= 1".into()));
        }
        if self.eval.curvature_steps < 2 {
            return Err(CliError::Config("eval.curvature_steps must be >= 2".into()));
        }
        self.eval_solvers()?;
        parse_solver(&self.sample.solver)?;
        Ok(())
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        let d = &self.dataset;
        let kind = match d.kind {
            DatasetName::StdGaussian => DatasetKind::StdGaussian,
            DatasetName::GaussianRing => DatasetKind::GaussianRing { modes: d.modes, radius: d.radius, mode_std: d.mode_std },
            DatasetName::TwoMoons => DatasetKind::TwoMoons { noise_std: d.noise_std },
            DatasetName::Checkerboard => DatasetKind::Checkerboard { cells: d.cells },
            DatasetName::PolygonCounterexample => DatasetKind::PolygonCounterexample {
                offset_angle: d.offset_angle.unwrap_or_else(|| default_polygon_offset(d.n)),
            },
        };
        DatasetSpec { kind, n: d.n, dim: d.dim, seed: d.seed }
    }

    pub fn strategy(&self) -> CouplingStrategy {
        match self.strategy.kind {
            StrategyName::Independent => CouplingStrategy::Independent,
            StrategyName::MinibatchOt => CouplingStrategy::MinibatchOt,
            StrategyName::Loom => CouplingStrategy::Loom,
            StrategyName::PhiMix => CouplingStrategy::PhiMix { phi: self.strategy.phi.unwrap_or(0.5) },
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            dim: self.dataset.dim,
            hidden: self.model.hidden.clone(),
            time_freqs: self.model.time_freqs,
            max_freq: self.model.max_freq,
            activation: self.model.activation,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.train.iterations,
            batch_size: self.strategy.m,
            groups: self.train.groups,
            adam: AdamConfig { lr: self.train.lr, ..AdamConfig::default() },
            warmup: self.train.warmup,
            cfm: self.cfm,
            ema_decay: self.train.ema_decay,
        }
    }

    pub fn eval_solvers(&self) -> Result<Vec<SolverConfig>, CliError> {
        if self.eval.solvers.is_empty() {
            return Err(CliError::Config("eval.solvers must not be empty".into()));
        }
        self.eval.solvers.iter().map(|s| parse_solver(s)).collect()
    }

    pub fn eval_config(&self, solver: SolverConfig) -> EvalConfig {
        EvalConfig {
            n_eval: self.eval.n,
            solver,
            curvature_solver: SolverConfig::euler(self.eval.curvature_steps),
            curvature_samples: self.eval.curvature_samples,
        }
    }

    pub fn stationary_config(&self) -> StationaryConfig {
        let base = StationaryConfig::for_sizes(self.dataset.n, self.strategy.m);
        StationaryConfig {
            patience: self.converge.patience.unwrap_or(base.patience),
            max_iters: self.converge.max_iters,
            global_cost_every: self.converge.global_cost_every,
        }
    }
}

fn config_err(e: loomflow::Error) -> CliError {
    CliError::Config(e.to_string())
}
