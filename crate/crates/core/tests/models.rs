//! Posterior densities against independent closed-form computations, and
//! dataset generation and persistence.

use std::f64::consts::PI;

use prefetch_mcmc::target::{
    generate_mixture_data, generate_regression_data, Dataset, GroundTruth, MixtureSpec, RegressionSpec,
};
use prefetch_mcmc::tree::evaluate_full;
use prefetch_mcmc::{Error, TargetModel};

fn regression(dim: usize, n: usize) -> Dataset {
    generate_regression_data(&RegressionSpec {
        dim,
        n,
        ..RegressionSpec::default()
    })
    .unwrap()
}

#[test]
fn lasso_posterior_is_penalised_least_squares() {
    let ds = regression(5, 300);
    let lambda = 0.8;
    let noise_sd = match &ds.meta.truth {
        GroundTruth::Regression { noise_sd, .. } => *noise_sd,
        other => panic!("unexpected truth {other:?}"),
    };
    let model = TargetModel::new(ds.likelihood(lambda).unwrap(), 7, 2).unwrap();
    let y = ds.y.as_ref().unwrap();
    for w in [vec![0.0; 5], ds.true_parameters(), vec![0.3, -1.0, 2.0, 0.0, -0.1]] {
        let rss: f64 = (0..ds.n())
            .map(|i| {
                let fit: f64 = ds.row(i).iter().zip(&w).map(|(a, b)| a * b).sum();
                (y[i] - fit).powi(2)
            })
            .sum();
        let l1: f64 = w.iter().map(|v| v.abs()).sum();
        let oracle = -rss / (2.0 * noise_sd * noise_sd) - 0.5 * ds.n() as f64 * (2.0 * PI * noise_sd * noise_sd).ln()
            + 5.0 * (lambda / 2.0).ln()
            - lambda * l1;
        let got = evaluate_full(&model, &w).unwrap().log_posterior();
        assert!((got - oracle).abs() < 1e-8 * oracle.abs().max(1.0), "{got} vs {oracle}");
    }
}

#[test]
fn lasso_mode_is_near_truth() {
    let ds = regression(4, 2000);
    let model = TargetModel::new(ds.likelihood(1.0).unwrap(), 10, 0).unwrap();
    let truth = ds.true_parameters();
    let at_truth = evaluate_full(&model, &truth).unwrap().log_posterior();
    for d in 0..4 {
        let mut off = truth.clone();
        off[d] += 0.5;
        assert!(evaluate_full(&model, &off).unwrap().log_posterior() < at_truth);
    }
}

#[test]
fn mixture_posterior_matches_direct_sum() {
    let ds = generate_mixture_data(&MixtureSpec {
        components: 3,
        dim: 2,
        n: 200,
        ..MixtureSpec::default()
    })
    .unwrap();
    let (weights, sds) = match &ds.meta.truth {
        GroundTruth::Mixture { weights, sds, .. } => (weights.clone(), sds.clone()),
        other => panic!("unexpected truth {other:?}"),
    };
    let model = TargetModel::new(ds.likelihood(1.0).unwrap(), 9, 5).unwrap();
    let theta: Vec<f64> = ds.true_parameters().iter().map(|v| v + 0.1).collect();
    let oracle: f64 = (0..ds.n())
        .map(|i| {
            let x = ds.row(i);
            let dens: f64 = (0..3)
                .map(|c| {
                    let mu = &theta[c * 2..c * 2 + 2];
                    let sq: f64 = x.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum();
                    weights[c] * (-sq / (2.0 * sds[c] * sds[c])).exp() / (2.0 * PI * sds[c] * sds[c])
                })
                .sum();
            dens.ln()
        })
        .sum();
    let got = evaluate_full(&model, &theta).unwrap().log_posterior();
    assert!((got - oracle).abs() < 1e-8 * oracle.abs(), "{got} vs {oracle}");
}

#[test]
fn generation_is_deterministic_and_hashed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = MixtureSpec::default();
    let mut a = generate_mixture_data(&spec).unwrap();
    let mut b = generate_mixture_data(&spec).unwrap();
    a.save(&dir.path().join("a")).unwrap();
    b.save(&dir.path().join("b")).unwrap();
    assert_eq!(a.content_hash(), b.content_hash());
    assert_eq!(a.content_hash().len(), 64);
    assert_eq!((a.dim(), a.n(), a.true_parameters().len()), (8, 10_000, 64));

    let mut c = generate_mixture_data(&MixtureSpec { seed: 2, ..spec }).unwrap();
    c.save(&dir.path().join("c")).unwrap();
    assert_ne!(a.content_hash(), c.content_hash());
}

#[test]
fn regression_metadata_reports_shape() {
    let ds = regression(56, 10_000);
    assert_eq!((ds.meta.dim, ds.meta.n), (56, 10_000));
    assert_eq!(ds.y.as_ref().unwrap().len(), 10_000);
}

#[test]
fn empty_datasets_are_rejected() {
    assert!(generate_mixture_data(&MixtureSpec { n: 0, ..MixtureSpec::default() }).is_err());
    assert!(generate_regression_data(&RegressionSpec { n: 0, ..RegressionSpec::default() }).is_err());
}

#[test]
fn saved_datasets_round_trip_and_detect_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = regression(3, 50);
    let path = ds.save(&dir.path().join("r")).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, ds);
    let bin = path.with_extension("bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x01;
    std::fs::write(&bin, bytes).unwrap();
    assert!(matches!(Dataset::load(&path), Err(Error::HashMismatch { .. })));
}
