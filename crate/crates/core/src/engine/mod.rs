//! Serial and prefetching Metropolis-Hastings executors.
//!
//! Both executors draw every proposal and threshold from the same
//! [`DeviateStream`] and accumulate every log-posterior in batch order, so
//! for a given seed they produce bit-identical chains. The prefetching
//! executor runs a master (see [`master`]) over `J` workers, either as real
//! threads or in simulated virtual time where one batch costs a fixed
//! number of ticks.

mod master;
pub mod protocol;
pub mod scheduler;
mod threaded;
mod virtual_time;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{AcceptanceTracker, AdaptConfig, ScaleAdapter};
use crate::error::{Error, Result};
use crate::estimator::exact_indicator;
use crate::rng::DeviateStream;
use crate::target::TargetModel;
use crate::tree::{evaluate_full, propose, PredictorConfig, ProposalKind};

pub use protocol::{AssignmentId, WorkerMessage};
pub use scheduler::{scheduler_step, Candidate, Command, SchedulerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionMode {
    /// Real worker threads; times are wall-clock seconds.
    Wallclock,
    /// Simulated workers; times are integer ticks.
    #[default]
    Virtual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Seconds,
    Ticks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposalConfig {
    pub kind: ProposalKind,
    pub initial_scale: f64,
    /// Robbins-Monro scale adaptation; off when absent.
    pub adapt: Option<AdaptConfig>,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            kind: ProposalKind::RandomWalk,
            initial_scale: 0.1,
            adapt: None,
        }
    }
}

impl ProposalConfig {
    pub fn adapter(&self) -> ScaleAdapter {
        match self.adapt {
            Some(c) => ScaleAdapter::adaptive(self.initial_scale, c),
            None => ScaleAdapter::fixed(self.initial_scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub iterations: u64,
    /// Number of workers `J` (ignored by the serial executor).
    pub workers: usize,
    pub seed: u64,
    pub mode: ExecutionMode,
    /// Batches a worker computes between reports.
    pub report_interval: usize,
    /// Virtual ticks per batch.
    pub batch_cost: u64,
    pub proposal: ProposalConfig,
    pub predictor: PredictorConfig,
    pub scheduler: SchedulerConfig,
    pub tracker: AcceptanceTracker,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            workers: 4,
            seed: 1,
            mode: ExecutionMode::Virtual,
            report_interval: 1,
            batch_cost: 1,
            proposal: ProposalConfig::default(),
            predictor: PredictorConfig::default(),
            scheduler: SchedulerConfig::default(),
            tracker: AcceptanceTracker::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        if self.report_interval == 0 {
            return Err(Error::invalid("report_interval must be at least 1"));
        }
        if self.batch_cost == 0 {
            return Err(Error::invalid("batch_cost must be at least 1"));
        }
        if !(self.proposal.initial_scale > 0.0) || !self.proposal.initial_scale.is_finite() {
            return Err(Error::invalid("initial_scale must be positive and finite"));
        }
        if !(self.scheduler.hysteresis >= 1.0) {
            return Err(Error::invalid("hysteresis must be at least 1"));
        }
        Ok(())
    }
}

/// A finished chain plus its timing and work accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub dim: usize,
    /// Row-major `iterations x dim`: the state after each iteration.
    pub samples: Vec<f64>,
    pub accept_flags: Vec<bool>,
    /// Time at which each iteration's decision was made.
    pub times: Vec<f64>,
    pub time_unit: TimeUnit,
    pub total_time: f64,
    pub workers: usize,
    /// Batches computed by workers, including speculative and lost work.
    pub batches_total: u64,
    /// Batches the serial chain needs: `(iterations + 1) * n_batches`.
    pub batches_useful: u64,
    pub batches_wasted: u64,
    /// Proposal scale that would be used for the next iteration.
    pub final_scale: f64,
}

impl ChainOutput {
    pub fn iterations(&self) -> usize {
        self.accept_flags.len()
    }

    pub fn sample(&self, t: usize) -> &[f64] {
        &self.samples[t * self.dim..(t + 1) * self.dim]
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accept_flags.is_empty() {
            return 0.0;
        }
        self.accept_flags.iter().filter(|&&a| a).count() as f64 / self.accept_flags.len() as f64
    }

    /// One coordinate across all iterations.
    pub fn column(&self, d: usize) -> Vec<f64> {
        self.samples.iter().skip(d).step_by(self.dim).copied().collect()
    }

    /// Whether two chains visited the same states with the same decisions,
    /// compared bit for bit.
    pub fn same_chain(&self, other: &ChainOutput) -> bool {
        self.dim == other.dim
            && self.accept_flags == other.accept_flags
            && self.samples.len() == other.samples.len()
            && self
                .samples
                .iter()
                .zip(&other.samples)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Plain Metropolis-Hastings: one full evaluation per iteration. In virtual
/// mode an evaluation costs `n_batches * batch_cost` ticks.
pub fn run_serial(model: &TargetModel, theta0: &[f64], config: &RunConfig) -> Result<ChainOutput> {
    config.validate()?;
    let stream = DeviateStream::new(config.seed);
    let n_batches = model.n_batches() as u64;
    let eval_ticks = (n_batches * config.batch_cost) as f64;
    let start = std::time::Instant::now();
    let clock = |evals: u64| match config.mode {
        ExecutionMode::Virtual => evals as f64 * eval_ticks,
        ExecutionMode::Wallclock => start.elapsed().as_secs_f64(),
    };

    let mut state: Vec<f64> = theta0.to_vec();
    let mut current = evaluate_full(model, &state)?;
    if !current.log_posterior().is_finite() {
        return Err(Error::NonFiniteInitial(current.log_posterior()));
    }
    let mut adapter = config.proposal.adapter();
    let t_max = config.iterations;
    let mut samples = Vec::with_capacity(t_max as usize * state.len());
    let mut accept_flags = Vec::with_capacity(t_max as usize);
    let mut times = Vec::with_capacity(t_max as usize);
    for t in 0..t_max {
        let proposal = propose(config.proposal.kind, &stream, &state, t, &adapter);
        let evaluated = evaluate_full(model, &proposal)?;
        let log_r = stream.threshold_deviate(t).ln();
        let accepted = exact_indicator(log_r, current.log_posterior(), evaluated.log_posterior());
        if accepted {
            state = proposal;
            current = evaluated;
        }
        samples.extend_from_slice(&state);
        accept_flags.push(accepted);
        times.push(clock(t + 2));
        adapter.update(accepted, t + 1);
    }
    let total_time = clock(t_max + 1);
    Ok(ChainOutput {
        dim: state.len(),
        samples,
        accept_flags,
        times,
        time_unit: match config.mode {
            ExecutionMode::Virtual => TimeUnit::Ticks,
            ExecutionMode::Wallclock => TimeUnit::Seconds,
        },
        total_time,
        workers: 1,
        batches_total: (t_max + 1) * n_batches,
        batches_useful: (t_max + 1) * n_batches,
        batches_wasted: 0,
        final_scale: adapter.scale(),
    })
}

/// Prefetching Metropolis-Hastings with `config.workers` workers.
pub fn run_prefetch(model: &TargetModel, theta0: &[f64], config: &RunConfig) -> Result<ChainOutput> {
    match config.mode {
        ExecutionMode::Virtual => virtual_time::run(model, theta0, config),
        ExecutionMode::Wallclock => threaded::run(model, theta0, config),
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::target::{generate_gaussian_data, GaussianMean, MeanPrior};
    use crate::tree::PredictorMode;

    fn model(n: usize, batches: usize) -> TargetModel {
        let data = generate_gaussian_data(&[0.5, -0.5], 1.0, n, 3).unwrap();
        let lik = GaussianMean::new(data.x.clone(), 2, 1.0, MeanPrior::Flat).unwrap();
        TargetModel::new(Arc::new(lik), batches, 9).unwrap()
    }

    fn config(workers: usize) -> RunConfig {
        RunConfig {
            iterations: 200,
            workers,
            seed: 42,
            proposal: ProposalConfig {
                initial_scale: 0.05,
                adapt: Some(AdaptConfig::default()),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn serial_is_deterministic() {
        let m = model(200, 10);
        let a = run_serial(&m, &[0.0, 0.0], &config(1)).unwrap();
        let b = run_serial(&m, &[0.0, 0.0], &config(1)).unwrap();
        assert!(a.same_chain(&b));
        assert_eq!(a.iterations(), 200);
        assert!(a.acceptance_rate() > 0.0 && a.acceptance_rate() < 1.0);
        assert_eq!(a.total_time, 201.0 * 10.0);
    }

    #[test]
    fn virtual_prefetch_matches_serial() {
        let m = model(200, 10);
        let serial = run_serial(&m, &[0.0, 0.0], &config(1)).unwrap();
        for j in [1, 2, 3, 8] {
            let out = run_prefetch(&m, &[0.0, 0.0], &config(j)).unwrap();
            assert!(out.same_chain(&serial), "J = {j}");
            assert_eq!(out.final_scale.to_bits(), serial.final_scale.to_bits());
            assert!(out.batches_total >= out.batches_useful);
        }
    }

    #[test]
    fn single_worker_costs_serial_time() {
        let m = model(100, 5);
        let serial = run_serial(&m, &[0.0, 0.0], &config(1)).unwrap();
        let out = run_prefetch(&m, &[0.0, 0.0], &config(1)).unwrap();
        assert_eq!(out.total_time, serial.total_time);
        assert_eq!(out.batches_wasted, 0);
    }

    #[test]
    fn threaded_prefetch_matches_serial() {
        let m = model(200, 10);
        let serial = run_serial(&m, &[0.0, 0.0], &config(1)).unwrap();
        let mut cfg = config(3);
        cfg.mode = ExecutionMode::Wallclock;
        let out = run_prefetch(&m, &[0.0, 0.0], &cfg).unwrap();
        assert!(out.same_chain(&serial));
        assert_eq!(out.time_unit, TimeUnit::Seconds);
    }

    #[test]
    fn oracle_and_constant_predictors_preserve_the_chain() {
        let m = model(100, 4);
        let serial = run_serial(&m, &[0.0, 0.0], &config(1)).unwrap();
        for mode in [PredictorMode::Oracle, PredictorMode::Constant(0.5), PredictorMode::Constant(0.0)] {
            let mut cfg = config(4);
            cfg.predictor.mode = mode;
            let out = run_prefetch(&m, &[0.0, 0.0], &cfg).unwrap();
            assert!(out.same_chain(&serial), "{mode:?}");
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let m = model(10, 2);
        let mut cfg = config(2);
        cfg.workers = 0;
        assert!(run_prefetch(&m, &[0.0, 0.0], &cfg).is_err());
        assert!(matches!(
            run_serial(&m, &[0.0], &config(1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
