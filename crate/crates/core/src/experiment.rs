//! End-to-end experiment commands: data generation, chain runs, policy
//! comparison and diagnostics. The CLI is a thin wrapper around these.
//!
//! Layout of an output directory:
//!
//! ```text
//! dataset.json / dataset.bin        generated data (unless the config names one)
//! chains/serial_s<seed>.{json,bin}  serial reference chain per seed
//! chains/j<J>_s<seed>.{json,bin}    prefetching chain per (J, seed)
//! timing/<chain>.csv                per-iteration decision times
//! cumulative_speedup.csv            speedup series for every parallel run
//! manifest.json                     config echo, dataset hash, run index
//! diagnostics.json / .csv           written by `diagnose`
//! speedup_table.csv                 written by `diagnose`
//! predictor_trajectories.csv        written by `diagnose`
//! policies.csv                      written by `compare_policies`
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, InitialState, ModelSpec};
use crate::diagnostics::{detect_burn_in, effective_sample_size, rhat_window, Summary};
use crate::engine::{run_prefetch, run_serial, ChainOutput, RunConfig};
use crate::error::{Error, Result};
use crate::estimator::predictor_trajectory;
use crate::output::{
    cumulative_speedup, read_json, read_samples, speedup_at, timing_rows, write_csv, write_json,
    write_samples, SampleFile, SpeedupRow, TimingRow, CSV_SCHEMA_VERSION,
};
use crate::policies::{compare_policies, write_comparison_csv, ComparisonRow};
use crate::rng::{DeviateStream, Purpose};
use crate::target::{
    generate_mixture_data, generate_regression_data, Dataset, DatasetKind, TargetModel,
};
use crate::tree::propose;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Generates the dataset described by `spec`.
pub fn generate_dataset(spec: &ModelSpec) -> Result<Dataset> {
    match spec.kind {
        DatasetKind::Mixture => generate_mixture_data(&spec.mixture),
        DatasetKind::Regression => generate_regression_data(&spec.regression),
        DatasetKind::Gaussian => Err(Error::invalid(
            "gaussian datasets have no generator settings; supply model.dataset instead",
        )),
    }
}

/// Loads `cfg.model.dataset` if set, otherwise generates a dataset and saves
/// it under `out`. Returns the dataset and its metadata path.
pub fn load_or_generate(cfg: &ExperimentConfig, out: &Path) -> Result<(Dataset, PathBuf)> {
    match &cfg.model.dataset {
        Some(path) => {
            let path = path.with_extension("json");
            Ok((Dataset::load(&path)?, path))
        }
        None => {
            let mut ds = generate_dataset(&cfg.model)?;
            let path = ds.save(&out.join("dataset"))?;
            Ok((ds, path))
        }
    }
}

pub fn build_model(ds: &Dataset, spec: &ModelSpec) -> Result<TargetModel> {
    TargetModel::new(ds.likelihood(spec.lambda)?, spec.n_batches, spec.permutation_seed)
}

/// Starting point of the chain with seed `seed`.
pub fn initial_state(ds: &Dataset, init: InitialState, seed: u64) -> Vec<f64> {
    let truth = ds.true_parameters();
    match init {
        InitialState::Zeros => vec![0.0; truth.len()],
        InitialState::Truth => truth,
        InitialState::Dispersed { offset } => {
            let mut z = Vec::new();
            DeviateStream::new(seed).fill_normals(0, Purpose::Auxiliary, &mut z, truth.len());
            truth.iter().zip(z).map(|(t, z)| t + offset * z).collect()
        }
    }
}

/// The serial reference and every prefetching run for one seed.
#[derive(Debug, Clone)]
pub struct SeedRuns {
    pub seed: u64,
    pub serial: ChainOutput,
    pub parallel: Vec<ChainOutput>,
}

pub fn run_seed(model: &TargetModel, theta0: &[f64], cfg: &ExperimentConfig, seed: u64) -> Result<SeedRuns> {
    let serial = run_serial(model, theta0, &cfg.run_config(1, seed))?;
    let parallel = cfg
        .run
        .workers
        .iter()
        .map(|&j| run_prefetch(model, theta0, &cfg.run_config(j, seed)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedRuns { seed, serial, parallel })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    /// Metadata path, relative to the output directory when possible.
    pub path: PathBuf,
    pub content_hash: String,
    pub kind: DatasetKind,
    pub n: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEntry {
    pub seed: u64,
    /// 0 for the serial reference.
    pub workers: usize,
    pub samples: PathBuf,
    pub timing: PathBuf,
    pub total_time: f64,
    pub acceptance_rate: f64,
    pub batches_total: u64,
    pub batches_wasted: u64,
    /// Whether the chain is bit-identical to the serial one (parallel runs).
    pub identical_to_serial: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub csv_schema_version: u32,
    pub config: ExperimentConfig,
    pub dataset: DatasetRef,
    pub n_batches: usize,
    pub runs: Vec<RunEntry>,
}

impl Manifest {
    pub fn load(out: &Path) -> Result<Self> {
        let m: Self = read_json(&out.join(MANIFEST_FILE))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Format {
                path: out.join(MANIFEST_FILE),
                reason: format!("unsupported schema version {}", m.schema_version),
            });
        }
        Ok(m)
    }

    pub fn all_identical(&self) -> bool {
        self.runs.iter().all(|r| r.identical_to_serial != Some(false))
    }

    fn dataset_path(&self, out: &Path) -> PathBuf {
        if self.dataset.path.is_absolute() {
            self.dataset.path.clone()
        } else {
            out.join(&self.dataset.path)
        }
    }
}

fn relative(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

fn chain_name(workers: usize, seed: u64) -> String {
    if workers == 0 {
        format!("serial_s{seed}")
    } else {
        format!("j{workers}_s{seed}")
    }
}

/// `generate`: writes the dataset and returns its metadata path.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let mut ds = generate_dataset(&cfg.model)?;
    ds.save(&out.join("dataset"))
}

fn write_chain(out: &Path, chain: &ChainOutput, seed: u64, workers: usize, identical: Option<bool>) -> Result<RunEntry> {
    let name = chain_name(workers, seed);
    let samples = write_samples(&out.join("chains").join(&name), chain, seed, workers)?;
    let timing = out.join("timing").join(format!("{name}.csv"));
    write_csv(&timing, &timing_rows(chain))?;
    Ok(RunEntry {
        seed,
        workers,
        samples: relative(&samples, out),
        timing: relative(&timing, out),
        total_time: chain.total_time,
        acceptance_rate: chain.acceptance_rate(),
        batches_total: chain.batches_total,
        batches_wasted: chain.batches_wasted,
        identical_to_serial: identical,
    })
}

/// `run`: the serial reference and all prefetching chains for every seed.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let (ds, ds_path) = load_or_generate(cfg, out)?;
    let model = build_model(&ds, &cfg.model)?;
    let mut runs = Vec::new();
    let mut speedups: Vec<SpeedupRow> = Vec::new();
    for &seed in &cfg.run.seeds {
        let theta0 = initial_state(&ds, cfg.run.initial, seed);
        let r = run_seed(&model, &theta0, cfg, seed)?;
        runs.push(write_chain(out, &r.serial, seed, 0, None)?);
        for p in &r.parallel {
            runs.push(write_chain(out, p, seed, p.workers, Some(p.same_chain(&r.serial)))?);
            speedups.extend(cumulative_speedup(&r.serial, p, seed, cfg.diagnostics.speedup_stride));
        }
    }
    write_csv(&out.join("cumulative_speedup.csv"), &speedups)?;
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        csv_schema_version: CSV_SCHEMA_VERSION,
        config: cfg.clone(),
        dataset: DatasetRef {
            path: relative(&ds_path, out),
            content_hash: ds.content_hash().to_string(),
            kind: ds.meta.kind,
            n: ds.n(),
            dim: ds.dim(),
        },
        n_batches: model.n_batches(),
        runs,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// `compare-policies`: simulated speedup of every policy; writes
/// `policies.csv`.
pub fn cmd_compare_policies(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<ComparisonRow>> {
    cfg.validate()?;
    let p = &cfg.policies;
    let rows = compare_policies(&p.policies, &p.alphas, &p.workers, p.iterations, p.seed)?;
    write_comparison_csv(&out.join("policies.csv"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimDiagnostics {
    pub dim: usize,
    pub rhat: Option<f64>,
    /// Summed over seeds, after burn-in.
    pub ess: Option<f64>,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub seed: u64,
    pub workers: usize,
    /// `burn_in`, `half`, `end` or `custom`.
    pub checkpoint: String,
    pub iteration: usize,
    pub serial_time: f64,
    pub parallel_time: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub schema_version: u32,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub rhat_threshold: f64,
    /// First grid iteration at which every dimension's R-hat is below the
    /// threshold; `None` if never reached or fewer than two seeds.
    pub burn_in: Option<usize>,
    pub dims: Vec<DimDiagnostics>,
    pub speedups: Vec<CheckpointRow>,
    pub identical_to_serial: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub iteration: u64,
    pub batches: usize,
    pub m: usize,
    pub mu: f64,
    pub sigma: f64,
    pub psi: f64,
    /// Exact outcome of the comparison.
    pub accepted: u8,
}

/// Convergence diagnostics over per-seed chains (row-major, equal length).
pub fn chain_diagnostics(
    chains: &[&[f64]],
    dim: usize,
    burn_in_step: usize,
    threshold: f64,
) -> (Option<usize>, Vec<DimDiagnostics>) {
    let len = chains.iter().map(|c| c.len() / dim.max(1)).min().unwrap_or(0);
    let burn_in = if chains.len() >= 2 {
        detect_burn_in(chains, dim, burn_in_step, threshold)
    } else {
        None
    };
    let start = burn_in.unwrap_or(len / 2).min(len);
    let rhat = rhat_window(chains, dim, start.max(len / 2), len).ok();
    let dims = (0..dim)
        .map(|d| {
            let cols: Vec<Vec<f64>> = chains
                .iter()
                .map(|c| (start..len).map(|t| c[t * dim + d]).collect())
                .collect();
            let ess = cols
                .iter()
                .map(|c| effective_sample_size(c).ok())
                .sum::<Option<f64>>();
            let pooled: Vec<f64> = cols.concat();
            let s = Summary::of(&pooled).unwrap_or(Summary {
                mean: f64::NAN,
                sd: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            });
            DimDiagnostics {
                dim: d,
                rhat: rhat.as_ref().map(|r| r[d]),
                ess,
                mean: s.mean,
                sd: s.sd,
                min: s.min,
                max: s.max,
            }
        })
        .collect();
    (burn_in, dims)
}

fn read_timing(path: &Path) -> Result<Vec<TimingRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn times_to_chain(rows: &[TimingRow], workers: usize) -> ChainOutput {
    ChainOutput {
        dim: 0,
        samples: Vec::new(),
        accept_flags: rows.iter().map(|r| r.accepted == 1).collect(),
        times: rows.iter().map(|r| r.time).collect(),
        time_unit: crate::engine::TimeUnit::Ticks,
        total_time: rows.last().map_or(0.0, |r| r.time),
        workers,
        batches_total: 0,
        batches_useful: 0,
        batches_wasted: 0,
        final_scale: 0.0,
    }
}

/// Predictor trajectories for `count` evenly spaced iterations of a serial
/// chain, replaying the proposal scale from its accept flags.
pub fn chain_trajectories(
    model: &TargetModel,
    theta0: &[f64],
    chain: &SampleFile,
    run: &RunConfig,
    count: usize,
) -> Result<Vec<TrajectoryRow>> {
    let t_max = chain.meta.iterations;
    let dim = chain.meta.dim;
    if count == 0 || t_max == 0 {
        return Ok(Vec::new());
    }
    let stride = (t_max / count).max(1);
    let stream = DeviateStream::new(run.seed);
    let flags = chain.accept_flags();
    let mut adapter = run.proposal.adapter();
    let mut rows = Vec::new();
    for t in 0..t_max {
        if t % stride == 0 && rows.len() < count * model.n_batches() {
            let state = if t == 0 { theta0 } else { &chain.samples[(t - 1) * dim..t * dim] };
            let proposal = propose(run.proposal.kind, &stream, state, t as u64, &adapter);
            let log_r = stream.threshold_deviate(t as u64).ln();
            for p in predictor_trajectory(model, state, &proposal, log_r, run.predictor.c_tilde)? {
                rows.push(TrajectoryRow {
                    iteration: t as u64,
                    batches: p.batches,
                    m: p.m,
                    mu: p.mu,
                    sigma: p.sigma,
                    psi: p.psi,
                    accepted: u8::from(flags[t]),
                });
            }
        }
        adapter.update(flags[t], t as u64 + 1);
    }
    Ok(rows)
}

/// `diagnose`: reloads the dataset (failing on a hash mismatch with the
/// manifest), computes convergence diagnostics, the speedup table at
/// `{burn-in, T/2, T}` (or the configured checkpoints) and predictor
/// trajectories.
pub fn cmd_diagnose(out: &Path) -> Result<DiagnosticsReport> {
    let manifest = Manifest::load(out)?;
    let cfg = &manifest.config;
    let ds = Dataset::load(&manifest.dataset_path(out))?;
    if ds.content_hash() != manifest.dataset.content_hash {
        return Err(Error::HashMismatch {
            expected: manifest.dataset.content_hash.clone(),
            found: ds.content_hash().to_string(),
        });
    }
    let model = build_model(&ds, &cfg.model)?;

    let serial: Vec<(&RunEntry, SampleFile)> = manifest
        .runs
        .iter()
        .filter(|r| r.workers == 0)
        .map(|r| Ok((r, read_samples(&out.join(&r.samples))?)))
        .collect::<Result<_>>()?;
    let first = serial
        .first()
        .ok_or_else(|| Error::invalid("manifest lists no serial chains"))?;
    let dim = first.1.meta.dim;
    let iterations = first.1.meta.iterations;
    if serial.iter().any(|(_, s)| s.meta.iterations != iterations || s.meta.dim != dim) {
        return Err(Error::invalid("serial chains have unequal lengths or dimensions"));
    }
    let chains: Vec<&[f64]> = serial.iter().map(|(_, s)| &s.samples[..iterations * dim]).collect();
    let d = &cfg.diagnostics;
    let (burn_in, dims) = chain_diagnostics(&chains, dim, d.burn_in_step, d.rhat_threshold);

    let mut checkpoints: Vec<(String, usize)> = if d.checkpoints.is_empty() {
        let mut c = Vec::new();
        if let Some(b) = burn_in {
            c.push(("burn_in".to_string(), b));
        }
        c.push(("half".to_string(), iterations / 2));
        c.push(("end".to_string(), iterations));
        c
    } else {
        d.checkpoints.iter().map(|&i| ("custom".to_string(), i as usize)).collect()
    };
    checkpoints.retain(|(_, i)| *i >= 1 && *i <= iterations);

    let mut speedups = Vec::new();
    for (s_entry, _) in &serial {
        let s_chain = times_to_chain(&read_timing(&out.join(&s_entry.timing))?, 1);
        for p_entry in manifest.runs.iter().filter(|r| r.workers > 0 && r.seed == s_entry.seed) {
            let p_chain = times_to_chain(&read_timing(&out.join(&p_entry.timing))?, p_entry.workers);
            for (label, i) in &checkpoints {
                let row = speedup_at(&s_chain, &p_chain, s_entry.seed, *i);
                speedups.push(CheckpointRow {
                    seed: row.seed,
                    workers: row.workers,
                    checkpoint: label.clone(),
                    iteration: row.iteration,
                    serial_time: row.serial_time,
                    parallel_time: row.parallel_time,
                    speedup: row.speedup,
                });
            }
        }
    }

    let (entry, chain) = first;
    let theta0 = initial_state(&ds, cfg.run.initial, entry.seed);
    let trajectories = chain_trajectories(&model, &theta0, chain, &cfg.run_config(1, entry.seed), d.trajectories)?;
    write_csv(&out.join("predictor_trajectories.csv"), &trajectories)?;

    let report = DiagnosticsReport {
        schema_version: MANIFEST_SCHEMA_VERSION,
        iterations,
        seeds: serial.iter().map(|(r, _)| r.seed).collect(),
        rhat_threshold: d.rhat_threshold,
        burn_in,
        dims,
        speedups,
        identical_to_serial: manifest.all_identical(),
    };
    write_json(&out.join("diagnostics.json"), &report)?;
    write_csv(&out.join("diagnostics.csv"), &report.dims)?;
    write_csv(&out.join("speedup_table.csv"), &report.speedups)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::{MixtureSpec, RegressionSpec};

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.model.kind = DatasetKind::Regression;
        cfg.model.regression = RegressionSpec {
            dim: 3,
            n: 400,
            ..RegressionSpec::default()
        };
        cfg.model.n_batches = 10;
        cfg.run.iterations = 300;
        cfg.run.workers = vec![1, 3];
        cfg.run.seeds = vec![1, 2];
        cfg.diagnostics.burn_in_step = 50;
        cfg.diagnostics.trajectories = 2;
        cfg
    }

    #[test]
    fn initial_states() {
        let ds = generate_mixture_data(&MixtureSpec {
            components: 2,
            dim: 2,
            n: 50,
            ..MixtureSpec::default()
        })
        .unwrap();
        let truth = ds.true_parameters();
        assert_eq!(initial_state(&ds, InitialState::Truth, 1), truth);
        assert_eq!(initial_state(&ds, InitialState::Zeros, 1), vec![0.0; 4]);
        let a = initial_state(&ds, InitialState::Dispersed { offset: 1.0 }, 1);
        let b = initial_state(&ds, InitialState::Dispersed { offset: 1.0 }, 2);
        assert_ne!(a, b);
        assert_eq!(a, initial_state(&ds, InitialState::Dispersed { offset: 1.0 }, 1));
    }

    #[test]
    fn run_then_diagnose() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let manifest = cmd_run(&cfg, dir.path()).unwrap();
        assert_eq!(manifest.runs.len(), 6);
        assert!(manifest.all_identical());
        let report = cmd_diagnose(dir.path()).unwrap();
        assert_eq!(report.dims.len(), 3);
        assert!(report.identical_to_serial);
        assert!(report.dims.iter().all(|d| d.rhat.is_some()));
        assert!(report.speedups.iter().all(|r| r.speedup >= 1.0 - 1e-12));
        for f in ["diagnostics.csv", "speedup_table.csv", "predictor_trajectories.csv", "cumulative_speedup.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn diagnose_rejects_modified_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.run.workers = vec![2];
        cfg.run.iterations = 50;
        cmd_run(&cfg, dir.path()).unwrap();
        let bin = dir.path().join("dataset.bin");
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes[3] ^= 0x10;
        std::fs::write(&bin, bytes).unwrap();
        assert!(matches!(cmd_diagnose(dir.path()), Err(Error::HashMismatch { .. })));
    }

    #[test]
    fn diagnose_rejects_substituted_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.run.workers = vec![2];
        cfg.run.iterations = 50;
        cmd_run(&cfg, dir.path()).unwrap();
        let mut other = cfg.clone();
        other.model.regression.seed = 99;
        cmd_generate(&other, dir.path()).unwrap();
        assert!(matches!(cmd_diagnose(dir.path()), Err(Error::HashMismatch { .. })));
    }
}
