//! Experiment configuration files (TOML).
//!
//! Every field has a default, so an empty file is a valid configuration;
//! unknown fields are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::AdaptConfig;
use crate::engine::{ExecutionMode, ProposalConfig, RunConfig, SchedulerConfig};
use crate::error::{Error, Result};
use crate::estimator::{ErrorModel, DEFAULT_C_TILDE};
use crate::policies::PolicyKind;
use crate::target::{DatasetKind, MixtureSpec, RegressionSpec, DEFAULT_BATCHES};
use crate::tree::{PredictorConfig, PredictorMode, PriorFallback};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub run: RunSpec,
    pub scheduler: SchedulerSpec,
    pub diagnostics: DiagnosticsSpec,
    pub policies: PolicySpec,
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    /// Which generator `generate` uses; ignored when `dataset` is set.
    pub kind: DatasetKind,
    /// Existing dataset (the `.json` metadata file or its stem).
    pub dataset: Option<PathBuf>,
    pub mixture: MixtureSpec,
    pub regression: RegressionSpec,
    /// Laplace rate of the regression prior.
    pub lambda: f64,
    pub n_batches: usize,
    /// Seed of the data permutation that defines the batches.
    pub permutation_seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Mixture,
            dataset: None,
            mixture: MixtureSpec::default(),
            regression: RegressionSpec::default(),
            lambda: 1.0,
            n_batches: DEFAULT_BATCHES,
            permutation_seed: 0,
        }
    }
}

/// Where chains start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Zeros,
    /// The generating parameters.
    Truth,
    /// The generating parameters plus `offset` times a standard normal
    /// vector drawn from the chain's seed, so chains start over-dispersed.
    Dispersed { offset: f64 },
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Dispersed { offset: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorChoice {
    Estimated,
    Oracle,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub iterations: u64,
    pub workers: Vec<usize>,
    pub seeds: Vec<u64>,
    pub mode: ExecutionMode,
    pub report_interval: usize,
    pub batch_cost: u64,
    pub initial: InitialState,
    pub initial_scale: f64,
    /// Robbins-Monro adaptation of the proposal scale.
    pub adapt: bool,
    pub adapt_gain: f64,
    pub adapt_offset: f64,
    pub target_rate: f64,
}

impl Default for RunSpec {
    fn default() -> Self {
        let a = AdaptConfig::default();
        Self {
            iterations: 2000,
            workers: vec![1, 2, 4, 8],
            seeds: vec![1],
            mode: ExecutionMode::Virtual,
            report_interval: 1,
            batch_cost: 1,
            initial: InitialState::default(),
            initial_scale: 0.05,
            adapt: true,
            adapt_gain: a.gain,
            adapt_offset: a.offset,
            target_rate: a.target_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSpec {
    pub predictor: PredictorChoice,
    /// Probability used by the constant predictor.
    pub constant: f64,
    pub c_tilde: f64,
    pub error_model: ErrorModel,
    pub hysteresis: f64,
    pub m_min_batches: usize,
    /// Leaves per worker the tree may hold.
    pub node_budget: usize,
    pub max_depth: Option<usize>,
    pub fallback: PriorFallback,
}

impl Default for SchedulerSpec {
    fn default() -> Self {
        Self {
            predictor: PredictorChoice::Estimated,
            constant: 0.5,
            c_tilde: DEFAULT_C_TILDE,
            error_model: ErrorModel::Difference,
            hysteresis: SchedulerConfig::default().hysteresis,
            m_min_batches: 1,
            node_budget: SchedulerConfig::default().leaf_budget,
            max_depth: None,
            fallback: PriorFallback::Alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSpec {
    pub rhat_threshold: f64,
    /// Grid spacing for burn-in detection.
    pub burn_in_step: usize,
    /// Iterations at which the speedup table is reported; empty means
    /// `{burn-in, T/2, T}`.
    pub checkpoints: Vec<u64>,
    /// Proposals sampled for the predictor-trajectory export.
    pub trajectories: usize,
    /// Row spacing of the cumulative-speedup series.
    pub speedup_stride: usize,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            rhat_threshold: 1.05,
            burn_in_step: 100,
            checkpoints: Vec::new(),
            trajectories: 8,
            speedup_stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySpec {
    pub policies: Vec<PolicyKind>,
    pub alphas: Vec<f64>,
    pub workers: Vec<usize>,
    pub iterations: u64,
    pub seed: u64,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self {
            policies: PolicyKind::ALL.to_vec(),
            alphas: vec![0.23],
            workers: vec![2, 4, 8, 16],
            iterations: 100_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration is always serialisable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.workers.is_empty() || self.run.workers.contains(&0) {
            return Err(Error::invalid("run.workers must be a non-empty list of positive counts"));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::invalid("run.seeds must not be empty"));
        }
        if self.model.n_batches == 0 {
            return Err(Error::invalid("model.n_batches must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.scheduler.constant) {
            return Err(Error::invalid("scheduler.constant must be a probability"));
        }
        if let InitialState::Dispersed { offset } = self.run.initial {
            if !(offset >= 0.0) {
                return Err(Error::invalid("initial offset must be non-negative"));
            }
        }
        if self.diagnostics.burn_in_step == 0 || self.diagnostics.speedup_stride == 0 {
            return Err(Error::invalid("diagnostics steps must be at least 1"));
        }
        for &a in &self.policies.alphas {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::invalid(format!("policy alpha {a} is not in (0, 1]")));
            }
        }
        self.run_config(1, 1).validate()
    }

    /// Engine configuration for one `(workers, seed)` cell.
    pub fn run_config(&self, workers: usize, seed: u64) -> RunConfig {
        let r = &self.run;
        let s = &self.scheduler;
        RunConfig {
            iterations: r.iterations,
            workers,
            seed,
            mode: r.mode,
            report_interval: r.report_interval,
            batch_cost: r.batch_cost,
            proposal: ProposalConfig {
                initial_scale: r.initial_scale,
                adapt: r.adapt.then_some(AdaptConfig {
                    target_rate: r.target_rate,
                    gain: r.adapt_gain,
                    offset: r.adapt_offset,
                    until: None,
                }),
                ..ProposalConfig::default()
            },
            predictor: PredictorConfig {
                mode: match s.predictor {
                    PredictorChoice::Estimated => PredictorMode::Estimated,
                    PredictorChoice::Oracle => PredictorMode::Oracle,
                    PredictorChoice::Constant => PredictorMode::Constant(s.constant),
                },
                fallback: s.fallback,
                error_model: s.error_model,
                c_tilde: s.c_tilde,
                m_min_batches: s.m_min_batches,
            },
            scheduler: SchedulerConfig {
                hysteresis: s.hysteresis,
                leaf_budget: s.node_budget,
                max_depth: s.max_depth,
            },
            ..RunConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trips() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_are_errors() {
        assert!(ExperimentConfig::from_toml("[run]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("colour = 'red'\n").is_err());
    }

    #[test]
    fn parses_overrides() {
        let cfg = ExperimentConfig::from_toml(
            r#"
[model]
kind = "regression"
n_batches = 10
[model.regression]
dim = 3
[run]
workers = [1, 4]
mode = "wallclock"
initial = { kind = "truth" }
[scheduler]
predictor = "constant"
constant = 0.25
fallback = "threshold"
"#,
        )
        .unwrap();
        assert_eq!(cfg.model.kind, DatasetKind::Regression);
        assert_eq!(cfg.model.regression.dim, 3);
        assert_eq!(cfg.run.initial, InitialState::Truth);
        let rc = cfg.run_config(4, 9);
        assert_eq!(rc.mode, ExecutionMode::Wallclock);
        assert_eq!(rc.predictor.mode, PredictorMode::Constant(0.25));
        assert_eq!(rc.predictor.fallback, PriorFallback::Threshold);
        assert_eq!((rc.workers, rc.seed), (4, 9));
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(ExperimentConfig::from_toml("[run]\nworkers = []\n").is_err());
        assert!(ExperimentConfig::from_toml("[run]\nworkers = [0]\n").is_err());
        assert!(ExperimentConfig::from_toml("[scheduler]\nconstant = 2.0\n").is_err());
        assert!(ExperimentConfig::from_toml("[scheduler]\nhysteresis = 0.5\n").is_err());
    }
}
