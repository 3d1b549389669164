//! Baseline prefetching policies and their expected speedups.
//!
//! Every policy is the prefetching engine with a particular predictor:
//! naive breadth-first prefetching assumes every branch is a coin flip,
//! speculative moves assume every proposal is rejected, static prefetching
//! assumes a fixed acceptance rate, and predictive prefetching uses the real
//! (or, for simulations, the oracle) predictor. Measured speedups come from
//! the virtual-time engine on a synthetic target whose accept decisions are
//! independent Bernoulli(alpha) draws.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{run_prefetch, ExecutionMode, ProposalConfig, RunConfig};
use crate::error::{Error, Result};
use crate::target::{Likelihood, TargetModel};
use crate::tree::{PredictorMode, ProposalKind};

/// Probability mass below which the speculative-moves series is truncated.
const SERIES_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    NaiveBreadthFirst,
    SpeculativeMoves,
    StaticAlpha,
    Predictive,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::NaiveBreadthFirst,
        PolicyKind::SpeculativeMoves,
        PolicyKind::StaticAlpha,
        PolicyKind::Predictive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::NaiveBreadthFirst => "naive_breadth_first",
            PolicyKind::SpeculativeMoves => "speculative_moves",
            PolicyKind::StaticAlpha => "static_alpha",
            PolicyKind::Predictive => "predictive",
        }
    }

    /// The predictor this policy schedules with when the true acceptance
    /// rate is `alpha`. Predictive prefetching is simulated with oracle
    /// predictors.
    pub fn predictor(self, alpha: f64) -> PredictorMode {
        match self {
            PolicyKind::NaiveBreadthFirst => PredictorMode::Constant(0.5),
            PolicyKind::SpeculativeMoves => PredictorMode::Constant(0.0),
            PolicyKind::StaticAlpha => PredictorMode::Constant(alpha),
            PolicyKind::Predictive => PredictorMode::Oracle,
        }
    }

    /// Depth limit of the speculative tree. Naive prefetching only ever
    /// evaluates complete levels, so workers beyond `2^d - 1` stay idle.
    pub fn max_depth(self, j: usize) -> Option<usize> {
        match self {
            PolicyKind::NaiveBreadthFirst => Some(expected_speedup_naive(j) as usize - 1),
            _ => None,
        }
    }

    /// Applies this policy's predictor and tree shape to a run
    /// configuration.
    pub fn configure(self, alpha: f64, config: &mut RunConfig) {
        config.predictor.mode = self.predictor(alpha);
        config.scheduler.max_depth = self.max_depth(config.workers);
    }

    /// Expected speedup under this policy (see the individual functions).
    pub fn expected_speedup(self, alpha: f64, j: usize) -> f64 {
        match self {
            PolicyKind::NaiveBreadthFirst => expected_speedup_naive(j),
            PolicyKind::SpeculativeMoves => expected_speedup_speculative_moves(alpha, j),
            PolicyKind::StaticAlpha => expected_speedup_static_alpha(alpha, j),
            PolicyKind::Predictive => j as f64,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s || (s == "naive" && *p == PolicyKind::NaiveBreadthFirst))
            .ok_or_else(|| Error::invalid(format!("unknown policy '{s}'")))
    }
}

/// `1 + E[min(k, j - 1)]` where `k` counts the rejections before the first
/// acceptance: `sum_{i=0}^{j-1} (1 - alpha)^i`. `j = usize::MAX` gives the
/// unlimited-core value `1/alpha` (the series is cut once the remaining
/// mass drops below `1e-12`).
pub fn expected_speedup_speculative_moves(alpha: f64, j: usize) -> f64 {
    assert!(alpha > 0.0 && alpha <= 1.0, "alpha must be in (0, 1]");
    assert!(j >= 1, "need at least one core");
    let reject = 1.0 - alpha;
    let mut total = 0.0;
    let mut term = 1.0;
    for _ in 0..j {
        total += term;
        term *= reject;
        if term < SERIES_CUTOFF {
            break;
        }
    }
    total
}

/// Iterations resolved per round by naive breadth-first prefetching: `j`
/// workers cover the complete levels of the tree, so the convention is
/// `floor(log2(j + 1))` (1 for one core, 2 for three, 6 for 64).
pub fn expected_speedup_naive(j: usize) -> f64 {
    assert!(j >= 1, "need at least one core");
    ((j as u64 + 1).ilog2()) as f64
}

/// Round-synchronous expected speedup of static prefetching: the `j`
/// nodes with the highest path probability under a fixed `alpha` are
/// evaluated, and the expected number of iterations resolved per round is
/// the sum of those probabilities.
pub fn expected_speedup_static_alpha(alpha: f64, j: usize) -> f64 {
    assert!((0.0..=1.0).contains(&alpha), "alpha must be in [0, 1]");
    // Best-first enumeration of path probabilities; the frontier only ever
    // needs the children of selected nodes.
    let mut frontier = vec![1.0f64];
    let mut total = 0.0;
    for _ in 0..j {
        let (i, &p) = frontier
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("frontier never empties");
        frontier.swap_remove(i);
        total += p;
        frontier.push(p * alpha);
        frontier.push(p * (1.0 - alpha));
    }
    total
}

/// A target whose accept probability is exactly `alpha` at every step when
/// paired with increment proposals: `log pi(theta) = theta_0 ln(alpha)` and
/// a single datum with zero log-likelihood.
#[derive(Debug, Clone)]
pub struct ConstantRatio {
    log_alpha: f64,
}

impl ConstantRatio {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must be in (0, 1], got {alpha}")));
        }
        Ok(Self { log_alpha: alpha.ln() })
    }
}

impl Likelihood for ConstantRatio {
    fn dim(&self) -> usize {
        1
    }

    fn n_data(&self) -> usize {
        1
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        theta[0] * self.log_alpha
    }

    fn log_term(&self, _theta: &[f64], _datum: usize) -> f64 {
        0.0
    }

    fn kind(&self) -> &'static str {
        "constant_ratio"
    }
}

/// Virtual-time speedup (serial time over parallel time) of `policy` with
/// `j` workers for `t` iterations of the Bernoulli(`alpha`) workload.
pub fn simulate_policy(policy: PolicyKind, alpha: f64, j: usize, t: u64, seed: u64) -> Result<f64> {
    let mut config = synthetic_config(j, t, seed);
    policy.configure(alpha, &mut config);
    Ok(simulate_report(&config, alpha)?.speedup)
}

/// Like [`simulate_policy`] with an explicit predictor and no depth limit.
pub fn simulate_with_predictor(predictor: PredictorMode, alpha: f64, j: usize, t: u64, seed: u64) -> Result<f64> {
    let mut config = synthetic_config(j, t, seed);
    config.predictor.mode = predictor;
    Ok(simulate_report(&config, alpha)?.speedup)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationReport {
    pub speedup: f64,
    pub acceptance_rate: f64,
    pub batches_total: u64,
    pub batches_useful: u64,
    pub batches_wasted: u64,
}

/// Run configuration for the synthetic workload: increment proposals and
/// one batch of cost one per evaluation.
pub fn synthetic_config(j: usize, t: u64, seed: u64) -> RunConfig {
    RunConfig {
        iterations: t,
        workers: j,
        seed,
        mode: ExecutionMode::Virtual,
        proposal: ProposalConfig {
            kind: ProposalKind::Increment,
            initial_scale: 1.0,
            adapt: None,
        },
        ..RunConfig::default()
    }
}

/// Runs `config` on the Bernoulli(`alpha`) workload.
pub fn simulate_report(config: &RunConfig, alpha: f64) -> Result<SimulationReport> {
    let model = TargetModel::unshuffled(Arc::new(ConstantRatio::new(alpha)?), 1)?;
    let out = run_prefetch(&model, &[0.0], config)?;
    // One evaluation per iteration plus the initial state.
    let serial = ((config.iterations + 1) * config.batch_cost) as f64;
    Ok(SimulationReport {
        speedup: serial / out.total_time,
        acceptance_rate: out.acceptance_rate(),
        batches_total: out.batches_total,
        batches_useful: out.batches_useful,
        batches_wasted: out.batches_wasted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: PolicyKind,
    pub alpha: f64,
    pub j: usize,
    pub expected: f64,
    pub measured: f64,
}

/// Expected and measured speedups for every combination.
pub fn compare_policies(
    policies: &[PolicyKind],
    alphas: &[f64],
    workers: &[usize],
    t: u64,
    seed: u64,
) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::new();
    for &policy in policies {
        for &alpha in alphas {
            for &j in workers {
                rows.push(ComparisonRow {
                    policy,
                    alpha,
                    j,
                    expected: policy.expected_speedup(alpha, j),
                    measured: simulate_policy(policy, alpha, j, t, seed)?,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    crate::output::write_csv(path, rows)
}
