//! Subsample estimates of the acceptance decision.
//!
//! Workers accumulate running totals of the first `m` log-likelihood terms at
//! a state. From two such totals (current state and proposal, over the same
//! subsample) the master forms a normal model of `L(theta') - L(theta)` and
//! reads the upper-tail probability above the precomputed log threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::target::{BatchStats, TargetModel};

pub const DEFAULT_C_TILDE: f64 = 0.9999;
/// z-scores are clamped to this magnitude before `erf`.
pub const Z_CLAMP: f64 = 37.0;

/// Running statistics of the first `m` log-likelihood terms at one state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PartialEvaluation {
    pub m: usize,
    pub sum: f64,
    pub sum_sq: f64,
    pub log_prior: f64,
    pub batches_done: usize,
}

impl PartialEvaluation {
    pub fn new(log_prior: f64) -> Self {
        Self {
            log_prior,
            ..Self::default()
        }
    }

    /// Folds in the next batch. The accumulation order is the batch order,
    /// so two evaluations of one state always produce identical bits.
    pub fn absorb(&mut self, batch: &BatchStats) {
        self.m += batch.count;
        self.sum += batch.sum;
        self.sum_sq += batch.sum_sq;
        self.batches_done += 1;
    }

    /// Rebuilds the totals of the first `batches` batches from per-batch
    /// statistics.
    pub fn from_prefix(log_prior: f64, batches: &[BatchStats]) -> Self {
        let mut pe = Self::new(log_prior);
        for b in batches {
            pe.absorb(b);
        }
        pe
    }

    pub fn is_complete(&self, n_total: usize) -> bool {
        self.m == n_total
    }

    /// `log pi_0 + sum`; the exact log-posterior (up to a constant) once all
    /// terms are in.
    pub fn log_posterior(&self) -> f64 {
        self.log_prior + self.sum
    }

    /// Empirical standard deviation of the terms with an `m - 1`
    /// denominator; zero when `m < 2`.
    pub fn sample_sd(&self) -> f64 {
        if self.m < 2 {
            return 0.0;
        }
        let m = self.m as f64;
        let mean = self.sum / m;
        let var = (self.sum_sq - m * mean * mean) / (m - 1.0);
        var.max(0.0).sqrt()
    }
}

/// `G_m(theta) = log pi_0(theta) + (N/m) * sum`.
pub fn g_value(pe: &PartialEvaluation, n_total: usize) -> Result<f64> {
    if pe.m == 0 {
        return Err(Error::invalid("g_value needs at least one term"));
    }
    Ok(pe.log_prior + (n_total as f64 / pe.m as f64) * pe.sum)
}

/// Estimate of `L(theta') - L(theta)` from two `G_m` values at equal `m`.
pub fn mu_hat(g_proposal: f64, g_current: f64) -> f64 {
    g_proposal - g_current
}

/// Standard deviation of the per-datum differences given the per-state
/// standard deviations and their assumed correlation.
pub fn s_combined(s_current: f64, s_proposal: f64, c_tilde: f64) -> f64 {
    let v = s_current * s_current + s_proposal * s_proposal - 2.0 * c_tilde * s_current * s_proposal;
    v.max(0.0).sqrt()
}

/// Error of the scaled subsample sum with the finite population
/// correction: `s_m * sqrt(N (N - m) / m)`.
pub fn sigma_hat(s_m: f64, n_total: usize, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("sigma_hat needs m >= 1"));
    }
    if m > n_total {
        return Err(Error::invalid(format!("m = {m} exceeds N = {n_total}")));
    }
    let (n, m) = (n_total as f64, m as f64);
    Ok(s_m * (n * (n - m) / m).sqrt())
}

/// `P(Z > log_r)` for `Z ~ Normal(mu, sigma^2)`; the exact indicator
/// `log_r < mu` when `sigma` is zero. NaN inputs yield 0.
pub fn predictor_probability(mu: f64, sigma: f64, log_r: f64) -> f64 {
    if sigma == 0.0 {
        return if log_r < mu { 1.0 } else { 0.0 };
    }
    let z = (mu - log_r) / (std::f64::consts::SQRT_2 * sigma);
    if z.is_nan() {
        return 0.0;
    }
    let z = z.clamp(-Z_CLAMP, Z_CLAMP);
    (0.5 * (1.0 + libm::erf(z))).clamp(0.0, 1.0)
}

/// The accept decision itself: `log_r < L(theta') - L(theta)`.
pub fn exact_indicator(log_r: f64, current: f64, proposal: f64) -> bool {
    log_r < proposal - current
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorModel {
    /// Model the per-datum differences (correlated states).
    #[default]
    Difference,
    /// Model each state separately, ignoring their correlation.
    Independent,
}

/// Everything the master needs to evaluate one node's predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorInputs {
    pub g_current: f64,
    pub g_proposal: f64,
    pub s_current: f64,
    pub s_proposal: f64,
    pub m: usize,
    pub n_total: usize,
    pub c_tilde: f64,
    pub log_r: f64,
}

impl PredictorInputs {
    /// Builds inputs from two partial evaluations over the same subsample.
    pub fn from_partials(
        current: &PartialEvaluation,
        proposal: &PartialEvaluation,
        n_total: usize,
        c_tilde: f64,
        log_r: f64,
    ) -> Result<Self> {
        if current.m != proposal.m {
            return Err(Error::invalid(format!(
                "partial evaluations cover different subsamples ({} vs {})",
                current.m, proposal.m
            )));
        }
        Ok(Self {
            g_current: g_value(current, n_total)?,
            g_proposal: g_value(proposal, n_total)?,
            s_current: current.sample_sd(),
            s_proposal: proposal.sample_sd(),
            m: current.m,
            n_total,
            c_tilde,
            log_r,
        })
    }

    pub fn mu(&self) -> f64 {
        mu_hat(self.g_proposal, self.g_current)
    }

    pub fn sigma(&self) -> Result<f64> {
        let s = s_combined(self.s_current, self.s_proposal, self.c_tilde);
        sigma_hat(s, self.n_total, self.m)
    }

    pub fn probability(&self) -> Result<f64> {
        Ok(predictor_probability(self.mu(), self.sigma()?, self.log_r))
    }
}

/// One point of a predictor trajectory: the estimate after `batches` batches
/// (`m` terms) on both sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub batches: usize,
    pub m: usize,
    pub mu: f64,
    pub sigma: f64,
    pub psi: f64,
}

/// Predictor estimates for a single comparison as the subsample grows one
/// batch at a time, ending at the exact indicator.
pub fn predictor_trajectory(
    model: &TargetModel,
    current: &[f64],
    proposal: &[f64],
    log_r: f64,
    c_tilde: f64,
) -> Result<Vec<TrajectoryPoint>> {
    let n = model.n_data();
    let mut cur = PartialEvaluation::new(model.log_prior(current)?);
    let mut prop = PartialEvaluation::new(model.log_prior(proposal)?);
    let mut out = Vec::with_capacity(model.n_batches());
    for b in 0..model.n_batches() {
        cur.absorb(&model.batch_log_likelihood(current, b)?);
        prop.absorb(&model.batch_log_likelihood(proposal, b)?);
        let inputs = PredictorInputs::from_partials(&cur, &prop, n, c_tilde, log_r)?;
        let sigma = inputs.sigma()?;
        out.push(TrajectoryPoint {
            batches: b + 1,
            m: cur.m,
            mu: inputs.mu(),
            sigma,
            psi: predictor_probability(inputs.mu(), sigma, log_r),
        });
    }
    Ok(out)
}
