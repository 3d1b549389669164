//! Convergence diagnostics on chains with known behaviour, and scale
//! adaptation on a target with a known optimum.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use prefetch_mcmc::diagnostics::{detect_burn_in, effective_sample_size, gelman_rubin, AdaptConfig};
use prefetch_mcmc::engine::ProposalConfig;
use prefetch_mcmc::experiment::chain_diagnostics;
use prefetch_mcmc::target::{GaussianMean, MeanPrior};
use prefetch_mcmc::{run_serial, RunConfig, TargetModel};

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn ar1(n: usize, rho: f64, seed: u64) -> Vec<f64> {
    let eps = normals(n, seed);
    let mut x = Vec::with_capacity(n);
    let mut prev = eps[0] / (1.0 - rho * rho).sqrt();
    x.push(prev);
    for e in &eps[1..] {
        prev = rho * prev + e;
        x.push(prev);
    }
    x
}

#[test]
fn identical_chains_give_the_floor() {
    let a = normals(500, 1);
    let r = gelman_rubin(&[&a, &a]).unwrap();
    assert_eq!(r, (499.0f64 / 500.0).sqrt());
}

#[test]
fn iid_chains_are_converged_and_fully_efficient() {
    let n = 10_000;
    let (a, b) = (normals(n, 2), normals(n, 3));
    let r = gelman_rubin(&[&a, &b]).unwrap();
    assert!((0.98..=1.02).contains(&r), "R-hat {r}");
    for c in [&a, &b] {
        let ess = effective_sample_size(c).unwrap();
        assert!(ess >= 0.9 * n as f64 && ess <= 1.1 * n as f64, "ESS {ess}");
    }
}

#[test]
fn ar1_effective_sample_size() {
    let n = 100_000;
    let ess = effective_sample_size(&ar1(n, 0.9, 4)).unwrap();
    let expected = n as f64 / 19.0;
    assert!((ess / expected - 1.0).abs() < 0.2, "ESS {ess} vs {expected}");
}

#[test]
fn burn_in_detection_finds_the_transient() {
    // Two chains that start at +-20 and decay geometrically onto iid noise.
    let n = 4000;
    let mk = |start: f64, seed: u64| -> Vec<f64> {
        normals(n, seed)
            .iter()
            .enumerate()
            .map(|(t, z)| start * 0.99f64.powi(t as i32) + z)
            .collect()
    };
    let (a, b) = (mk(20.0, 5), mk(-20.0, 6));
    let burn = detect_burn_in(&[&a, &b], 1, 50, 1.05).unwrap();
    assert!(burn > 200 && burn < 2000, "burn-in {burn}");
    let (found, dims) = chain_diagnostics(&[&a, &b], 1, 50, 1.05);
    assert_eq!(found, Some(burn));
    assert!(dims[0].rhat.unwrap() < 1.05);
    assert!(dims[0].ess.unwrap() > 1000.0);
}

#[test]
fn chains_that_never_mix_have_no_burn_in() {
    let a: Vec<f64> = normals(2000, 7).iter().map(|z| z + 5.0).collect();
    let b = normals(2000, 8);
    assert_eq!(detect_burn_in(&[&a, &b], 1, 100, 1.05), None);
}

#[test]
fn adaptation_reaches_the_target_rate() {
    // One datum at zero with unit noise and a flat prior: a standard normal
    // posterior.
    let lik = GaussianMean::new(vec![0.0], 1, 1.0, MeanPrior::Flat).unwrap();
    let model = TargetModel::new(Arc::new(lik), 1, 0).unwrap();
    let cfg = RunConfig {
        iterations: 50_000,
        seed: 21,
        proposal: ProposalConfig {
            initial_scale: 0.05,
            adapt: Some(AdaptConfig::default()),
            ..ProposalConfig::default()
        },
        ..RunConfig::default()
    };
    let out = run_serial(&model, &[3.0], &cfg).unwrap();
    assert!((out.acceptance_rate() - 0.234).abs() < 0.05, "rate {}", out.acceptance_rate());
    // The optimal one-dimensional random-walk scale is about 2.4.
    assert!(out.final_scale > 1.0 && out.final_scale < 6.0, "scale {}", out.final_scale);
}
