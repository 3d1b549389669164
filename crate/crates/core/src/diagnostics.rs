//! Acceptance tracking, proposal-scale adaptation and convergence
//! diagnostics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticError {
    #[error("need at least {needed} chains, got {got}")]
    TooFewChains { needed: usize, got: usize },
    #[error("chains have unequal lengths")]
    UnequalLengths,
    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("within-chain variance is zero; the diagnostic is undefined")]
    ZeroWithinVariance,
    #[error("samples have zero variance")]
    ZeroVariance,
}

/// Exponentially weighted estimate of the recent acceptance probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceTracker {
    pub alpha_hat: f64,
    pub decay: f64,
    pub floor: f64,
    pub ceiling: f64,
}

impl Default for AcceptanceTracker {
    fn default() -> Self {
        Self {
            alpha_hat: 0.234,
            decay: 0.99,
            floor: 0.01,
            ceiling: 0.99,
        }
    }
}

impl AcceptanceTracker {
    pub fn update(&mut self, accepted: bool) {
        let hit = if accepted { 1.0 } else { 0.0 };
        self.alpha_hat = (self.decay * self.alpha_hat + (1.0 - self.decay) * hit).clamp(self.floor, self.ceiling);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub target_rate: f64,
    /// Gain numerator `c` in `c / (t + t0)`.
    pub gain: f64,
    pub offset: f64,
    /// Adaptation stops after this iteration when set.
    pub until: Option<u64>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            target_rate: 0.234,
            gain: 10.0,
            offset: 100.0,
            until: None,
        }
    }
}

/// Robbins-Monro adaptation of the log proposal scale.
///
/// The update only looks at `(accepted, t)`, so any executor that replays
/// the same accept flags reproduces the same scales bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleAdapter {
    pub log_scale: f64,
    pub config: Option<AdaptConfig>,
}

impl ScaleAdapter {
    pub fn fixed(scale: f64) -> Self {
        Self {
            log_scale: scale.ln(),
            config: None,
        }
    }

    pub fn adaptive(scale: f64, config: AdaptConfig) -> Self {
        Self {
            log_scale: scale.ln(),
            config: Some(config),
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn gain(&self, t: u64) -> f64 {
        match self.config {
            Some(c) => c.gain / (t as f64 + c.offset),
            None => 0.0,
        }
    }

    /// Applies the outcome of iteration `t - 1` (so `t >= 1`).
    pub fn update(&mut self, accepted: bool, t: u64) {
        let Some(c) = self.config else { return };
        if c.until.is_some_and(|u| t > u) {
            return;
        }
        let hit = if accepted { 1.0 } else { 0.0 };
        self.log_scale += self.gain(t) * (hit - c.target_rate);
    }

    pub fn updated(mut self, accepted: bool, t: u64) -> Self {
        self.update(accepted, t);
        self
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Potential scale reduction of one scalar across chains:
/// `sqrt((n-1)/n + B / (n W))` with `B = n * var(chain means)` and `W` the
/// mean within-chain variance.
pub fn gelman_rubin(chains: &[&[f64]]) -> Result<f64, DiagnosticError> {
    if chains.len() < 2 {
        return Err(DiagnosticError::TooFewChains {
            needed: 2,
            got: chains.len(),
        });
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(DiagnosticError::UnequalLengths);
    }
    if n < 4 {
        return Err(DiagnosticError::TooShort { needed: 4, got: n });
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| sample_var(c)).sum::<f64>() / chains.len() as f64;
    if !(w > 0.0) {
        return Err(DiagnosticError::ZeroWithinVariance);
    }
    let nf = n as f64;
    let b = nf * sample_var(&means);
    Ok(((nf - 1.0) / nf + b / (nf * w)).sqrt())
}

/// Per-dimension R-hat over iterations `start..end` of flat row-major
/// chains (`chain[t * dim + d]`).
pub fn rhat_window(chains: &[&[f64]], dim: usize, start: usize, end: usize) -> Result<Vec<f64>, DiagnosticError> {
    if chains.len() < 2 {
        return Err(DiagnosticError::TooFewChains {
            needed: 2,
            got: chains.len(),
        });
    }
    if chains.iter().any(|c| c.len() < end * dim) {
        return Err(DiagnosticError::UnequalLengths);
    }
    (0..dim)
        .map(|d| {
            let cols: Vec<Vec<f64>> = chains
                .iter()
                .map(|c| (start..end).map(|t| c[t * dim + d]).collect())
                .collect();
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            gelman_rubin(&refs)
        })
        .collect()
}

/// First iteration `i` on the grid `step, 2 step, ...` at which every
/// dimension has R-hat below `threshold`, computed on iterations
/// `i/2..i`.
pub fn detect_burn_in(chains: &[&[f64]], dim: usize, step: usize, threshold: f64) -> Option<usize> {
    let len = chains.iter().map(|c| c.len() / dim.max(1)).min()?;
    (1..=len / step.max(1)).map(|k| k * step.max(1)).find(|&i| {
        rhat_window(chains, dim, i / 2, i)
            .map(|r| r.iter().all(|&x| x < threshold))
            .unwrap_or(false)
    })
}

/// Lag-`k` autocorrelation with the biased (`1/n`) estimator.
fn autocorrelation(centered: &[f64], var_n: f64, k: usize) -> f64 {
    let n = centered.len();
    let acov: f64 = (0..n - k).map(|i| centered[i] * centered[i + k]).sum();
    acov / var_n
}

/// Effective sample size `n / (1 + 2 sum_k rho_k)` using the initial
/// positive sequence: autocorrelations are summed in pairs
/// `rho_{2m} + rho_{2m+1}` until the first negative pair. The result is
/// capped at `n`.
pub fn effective_sample_size(samples: &[f64]) -> Result<f64, DiagnosticError> {
    let n = samples.len();
    if n < 10 {
        return Err(DiagnosticError::TooShort { needed: 10, got: n });
    }
    let m = mean(samples);
    let centered: Vec<f64> = samples.iter().map(|x| x - m).collect();
    let var_n: f64 = centered.iter().map(|x| x * x).sum();
    if !(var_n > 0.0) {
        return Err(DiagnosticError::ZeroVariance);
    }
    // tau = -1 + 2 * sum_m (rho_{2m} + rho_{2m+1}), rho_0 = 1.
    let mut tau = -1.0;
    let mut k = 0;
    while k + 1 < n {
        let pair = autocorrelation(&centered, var_n, k) + autocorrelation(&centered, var_n, k + 1);
        if pair < 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 2;
    }
    let ess = n as f64 / tau.max(1.0);
    Ok(ess.min(n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let m = mean(xs);
        let sd = if xs.len() > 1 { sample_var(xs).sqrt() } else { 0.0 };
        Some(Self {
            mean: m,
            sd,
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tracker_clamps() {
        let mut t = AcceptanceTracker::default();
        for _ in 0..2000 {
            t.update(true);
        }
        assert_eq!(t.alpha_hat, 0.99);
        for _ in 0..2000 {
            t.update(false);
        }
        assert_eq!(t.alpha_hat, 0.01);
    }

    #[test]
    fn gain_schedule() {
        let a = ScaleAdapter::adaptive(
            1.0,
            AdaptConfig {
                gain: 1.0,
                offset: 100.0,
                ..Default::default()
            },
        );
        assert!((a.gain(900) - 0.001).abs() < 1e-18);
        assert_eq!(ScaleAdapter::fixed(2.0).gain(1), 0.0);
    }

    #[test]
    fn scale_moves_with_acceptance() {
        let mut a = ScaleAdapter::adaptive(1.0, AdaptConfig::default());
        let before = a.scale();
        a.update(true, 1);
        assert!(a.scale() > before);
        let mid = a.scale();
        a.update(false, 2);
        assert!(a.scale() < mid);
        let frozen = AdaptConfig {
            until: Some(5),
            ..Default::default()
        };
        let mut f = ScaleAdapter::adaptive(1.0, frozen);
        f.update(true, 6);
        assert_eq!(f.scale(), 1.0);
    }

    #[test]
    fn identical_chains() {
        let c: Vec<f64> = (0..101).map(|i| ((i * 37) % 11) as f64).collect();
        let r = gelman_rubin(&[&c, &c]).unwrap();
        assert_eq!(r, (100.0f64 / 101.0).sqrt());
    }

    #[test]
    fn constant_chains_are_undefined() {
        let a = vec![0.0; 10];
        let b = vec![1.0; 10];
        assert_eq!(gelman_rubin(&[&a, &b]), Err(DiagnosticError::ZeroWithinVariance));
        assert!(matches!(gelman_rubin(&[&a]), Err(DiagnosticError::TooFewChains { .. })));
        assert_eq!(gelman_rubin(&[&a, &b[..5]]), Err(DiagnosticError::UnequalLengths));
    }

    #[test]
    fn ess_errors() {
        assert!(matches!(effective_sample_size(&[1.0; 5]), Err(DiagnosticError::TooShort { .. })));
        assert_eq!(effective_sample_size(&[2.0; 50]), Err(DiagnosticError::ZeroVariance));
    }

    #[test]
    fn summary() {
        let s = Summary::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.sd, s.min, s.max), (2.0, 1.0, 1.0, 3.0));
        assert!(Summary::of(&[]).is_none());
    }

    proptest! {
        #[test]
        fn ess_bounds_and_shift(xs in proptest::collection::vec(-10.0f64..10.0, 10..200), shift in -100.0f64..100.0) {
            prop_assume!(xs.iter().any(|x| (x - xs[0]).abs() > 1e-3));
            let e = effective_sample_size(&xs).unwrap();
            prop_assert!(e > 0.0 && e <= xs.len() as f64);
            let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
            let e2 = effective_sample_size(&shifted).unwrap();
            prop_assert!((e - e2).abs() <= 1e-6 * e);
        }
    }
}
