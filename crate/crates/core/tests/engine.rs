//! Serial equivalence and virtual-time accounting of the prefetching engine.

use std::sync::Arc;

use proptest::prelude::*;

use prefetch_mcmc::diagnostics::AdaptConfig;
use prefetch_mcmc::engine::ProposalConfig;
use prefetch_mcmc::target::{
    generate_gaussian_data, generate_mixture_data, generate_regression_data, GaussianMean, MeanPrior,
    MixtureSpec, RegressionSpec,
};
use prefetch_mcmc::tree::{PredictorMode, PriorFallback};
use prefetch_mcmc::{run_prefetch, run_serial, ExecutionMode, RunConfig, TargetModel};

fn gaussian_model(n: usize, batches: usize) -> TargetModel {
    let ds = generate_gaussian_data(&[0.2, -0.4, 0.1], 1.0, n, 6).unwrap();
    TargetModel::new(Arc::new(GaussianMean::new(ds.x, 3, 1.0, MeanPrior::Flat).unwrap()), batches, 1).unwrap()
}

fn config(workers: usize, iterations: u64, seed: u64) -> RunConfig {
    RunConfig {
        iterations,
        workers,
        seed,
        proposal: ProposalConfig {
            initial_scale: 0.1,
            adapt: Some(AdaptConfig::default()),
            ..ProposalConfig::default()
        },
        ..RunConfig::default()
    }
}

#[test]
fn mixture_chains_are_identical_for_every_worker_count() {
    let ds = generate_mixture_data(&MixtureSpec {
        components: 3,
        dim: 2,
        n: 600,
        ..MixtureSpec::default()
    })
    .unwrap();
    let model = TargetModel::new(ds.likelihood(1.0).unwrap(), 20, 4).unwrap();
    let theta0: Vec<f64> = ds.true_parameters().iter().map(|v| v + 0.3).collect();
    let serial = run_serial(&model, &theta0, &config(1, 300, 5)).unwrap();
    for j in [1, 2, 3, 5, 8] {
        let par = run_prefetch(&model, &theta0, &config(j, 300, 5)).unwrap();
        assert!(par.same_chain(&serial), "J = {j}");
        assert_eq!(par.final_scale.to_bits(), serial.final_scale.to_bits());
    }
}

#[test]
fn lasso_chains_are_identical_with_threshold_fallback() {
    let ds = generate_regression_data(&RegressionSpec {
        dim: 6,
        n: 500,
        ..RegressionSpec::default()
    })
    .unwrap();
    let model = TargetModel::new(ds.likelihood(1.0).unwrap(), 25, 2).unwrap();
    let theta0 = vec![0.0; 6];
    let serial = run_serial(&model, &theta0, &config(1, 250, 9)).unwrap();
    for j in [2, 4, 7] {
        let mut cfg = config(j, 250, 9);
        cfg.predictor.fallback = PriorFallback::Threshold;
        cfg.report_interval = 3;
        let par = run_prefetch(&model, &theta0, &cfg).unwrap();
        assert!(par.same_chain(&serial), "J = {j}");
    }
}

#[test]
fn wallclock_workers_reproduce_the_serial_chain() {
    let model = gaussian_model(400, 10);
    let theta0 = [1.0, 1.0, -1.0];
    let serial = run_serial(&model, &theta0, &config(1, 200, 3)).unwrap();
    for j in [1, 3, 6] {
        let mut cfg = config(j, 200, 3);
        cfg.mode = ExecutionMode::Wallclock;
        let par = run_prefetch(&model, &theta0, &cfg).unwrap();
        assert!(par.same_chain(&serial), "J = {j}");
        assert!(par.times.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn oracle_predictors_give_linear_speedup_without_waste() {
    let model = gaussian_model(500, 20);
    let theta0 = [0.5, 0.5, 0.5];
    let serial = run_serial(&model, &theta0, &config(1, 400, 12)).unwrap();
    for j in [2, 4, 8] {
        let mut cfg = config(j, 400, 12);
        cfg.predictor.mode = PredictorMode::Oracle;
        let par = run_prefetch(&model, &theta0, &cfg).unwrap();
        assert!(par.same_chain(&serial));
        assert_eq!(par.batches_wasted, 0, "J = {j}");
        let speedup = serial.total_time / par.total_time;
        assert!((speedup / j as f64 - 1.0).abs() < 0.02, "J = {j}: speedup {speedup}");
    }
}

#[test]
fn accounting_is_exact() {
    let model = gaussian_model(300, 12);
    let theta0 = [0.0; 3];
    for j in [1, 2, 5] {
        for mode in [PredictorMode::Estimated, PredictorMode::Constant(0.5)] {
            let mut cfg = config(j, 150, 1);
            cfg.predictor.mode = mode;
            let out = run_prefetch(&model, &theta0, &cfg).unwrap();
            assert_eq!(out.batches_useful, 151 * 12);
            assert_eq!(out.batches_total, out.batches_useful + out.batches_wasted);
            if j == 1 {
                assert_eq!(out.batches_wasted, 0);
            }
        }
    }
}

#[test]
fn one_worker_costs_exactly_serial_time() {
    let model = gaussian_model(300, 12);
    let serial = run_serial(&model, &[0.0; 3], &config(1, 100, 2)).unwrap();
    let one = run_prefetch(&model, &[0.0; 3], &config(1, 100, 2)).unwrap();
    assert_eq!(one.times, serial.times);
    assert_eq!(one.total_time, serial.total_time);
}

#[test]
fn parallel_is_never_slower_than_serial() {
    let model = gaussian_model(300, 12);
    let serial = run_serial(&model, &[0.0; 3], &config(1, 200, 4)).unwrap();
    for j in [2, 4, 8] {
        let par = run_prefetch(&model, &[0.0; 3], &config(j, 200, 4)).unwrap();
        assert!(par.times.iter().zip(&serial.times).all(|(p, s)| p <= s), "J = {j}");
    }
}

#[test]
fn invalid_starts_are_rejected() {
    let model = gaussian_model(50, 5);
    assert!(run_prefetch(&model, &[f64::NAN, 0.0, 0.0], &config(2, 10, 1)).is_err());
    assert!(run_prefetch(&model, &[0.0, 0.0], &config(2, 10, 1)).is_err());
    assert!(run_serial(&model, &[f64::INFINITY, 0.0, 0.0], &config(1, 10, 1)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_configuration_reproduces_the_serial_chain(
        seed in any::<u64>(),
        workers in 1usize..10,
        batches in 1usize..15,
        report_interval in 1usize..5,
        hysteresis in 1.0f64..3.0,
        leaf_budget in 1usize..6,
        scale in 0.01f64..2.0,
    ) {
        let model = gaussian_model(60, batches);
        let theta0 = [0.3, -0.2, 0.0];
        let mut cfg = config(workers, 60, seed);
        cfg.proposal.initial_scale = scale;
        cfg.report_interval = report_interval;
        cfg.scheduler.hysteresis = hysteresis;
        cfg.scheduler.leaf_budget = leaf_budget;
        let serial = run_serial(&model, &theta0, &cfg).unwrap();
        let par = run_prefetch(&model, &theta0, &cfg).unwrap();
        prop_assert!(par.same_chain(&serial));
        prop_assert_eq!(par.batches_total, par.batches_useful + par.batches_wasted);
        prop_assert!(par.total_time <= serial.total_time);
    }
}
