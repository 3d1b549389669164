//! C ABI for the prefetching Metropolis-Hastings sampler.
//!
//! Objects cross the boundary as opaque handles created by `pm_*_new` /
//! `pm_*_load` / `pm_run_*` and released with the matching `pm_*_free`.
//! Every fallible function returns a [`PmStatus`]; on failure a description
//! is available from [`pm_last_error_message`] on the same thread. Panics
//! never unwind into C: they are reported as `PM_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use prefetch_mcmc::config::ExperimentConfig;
use prefetch_mcmc::target::{Dataset, GaussianMean, MeanPrior};
use prefetch_mcmc::tree::PredictorMode;
use prefetch_mcmc::{run_prefetch, run_serial, ChainOutput, Error, ExecutionMode, RunConfig, TargetModel};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFiniteInitial = 4,
    Io = 5,
    HashMismatch = 6,
    Format = 7,
    WorkerFailed = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Execution back-end of the prefetching sampler.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmMode {
    /// Deterministic discrete-event simulation; times are in batch ticks.
    Virtual = 0,
    /// Real worker threads; times are in seconds.
    Wallclock = 1,
}

/// How the scheduler predicts branch probabilities.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmPredictor {
    /// Subsample estimates (the default).
    Estimated = 0,
    /// Exact outcomes from full evaluations (for benchmarking).
    Oracle = 1,
    /// A fixed acceptance probability set with `pm_config_set_constant`.
    Constant = 2,
}

/// A posterior with its fixed batch partition.
pub struct PmModel {
    inner: TargetModel,
}

/// Sampler settings.
pub struct PmConfig {
    inner: RunConfig,
    constant: f64,
}

/// A finished chain.
pub struct PmChain {
    inner: ChainOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PmStatus {
    match e {
        Error::DimensionMismatch { .. } => PmStatus::DimensionMismatch,
        Error::BatchOutOfRange { .. } | Error::InvalidArgument(_) => PmStatus::InvalidArgument,
        Error::NonFiniteInitial(_) => PmStatus::NonFiniteInitial,
        Error::WorkerFailed { .. } => PmStatus::WorkerFailed,
        Error::HashMismatch { .. } => PmStatus::HashMismatch,
        Error::Format { .. } | Error::Json(_) | Error::Csv(_) => PmStatus::Format,
        Error::Io { .. } => PmStatus::Io,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (PmStatus, String)>) -> PmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PmStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(format!("panic: {msg}"));
            PmStatus::Panic
        }
    }
}

fn lift(e: Error) -> (PmStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (PmStatus, String) {
    (PmStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (PmStatus, String) {
    (PmStatus::InvalidArgument, msg.into())
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (PmStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (PmStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (PmStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (PmStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (PmStatus, String)> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// always NUL-terminated when `len > 0`). Returns the full message length in
/// bytes, excluding the terminator; 0 means no error.
#[no_mangle]
pub unsafe extern "C" fn pm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Gaussian-mean posterior (flat prior, known `sd`) over `n` row-major
/// observations of dimension `dim`.
#[no_mangle]
pub unsafe extern "C" fn pm_model_gaussian(
    data: *const f64,
    n: usize,
    dim: usize,
    sd: f64,
    n_batches: usize,
    permutation_seed: u64,
    out: *mut *mut PmModel,
) -> PmStatus {
    guard(|| {
        let len = n.checked_mul(dim).ok_or_else(|| invalid("n * dim overflows"))?;
        let data = slice(data, len, "data")?.to_vec();
        let lik = GaussianMean::new(data, dim, sd, MeanPrior::Flat).map_err(lift)?;
        let inner = TargetModel::new(Arc::new(lik), n_batches, permutation_seed).map_err(lift)?;
        put(out, PmModel { inner })
    })
}

/// Loads a dataset written by the `generate` command (the `.json` metadata
/// path), verifying its content hash, and builds its posterior.
#[no_mangle]
pub unsafe extern "C" fn pm_model_load(
    path: *const c_char,
    lambda: f64,
    n_batches: usize,
    permutation_seed: u64,
    out: *mut *mut PmModel,
) -> PmStatus {
    guard(|| {
        let ds = Dataset::load(&path_arg(path)?).map_err(lift)?;
        let lik = ds.likelihood(lambda).map_err(lift)?;
        let inner = TargetModel::new(lik, n_batches, permutation_seed).map_err(lift)?;
        put(out, PmModel { inner })
    })
}

/// Parameter dimension of the model, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pm_model_dim(model: *const PmModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.dim())
}

/// Number of batches the data is split into, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pm_model_n_batches(model: *const PmModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n_batches())
}

#[no_mangle]
pub unsafe extern "C" fn pm_model_free(model: *mut PmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Default sampler settings.
#[no_mangle]
pub extern "C" fn pm_config_new() -> *mut PmConfig {
    Box::into_raw(Box::new(PmConfig {
        inner: RunConfig::default(),
        constant: 0.5,
    }))
}

/// Sampler settings from a TOML experiment file; `workers` and `seed`
/// select one cell of its grid.
#[no_mangle]
pub unsafe extern "C" fn pm_config_load(
    path: *const c_char,
    workers: usize,
    seed: u64,
    out: *mut *mut PmConfig,
) -> PmStatus {
    guard(|| {
        let cfg = ExperimentConfig::load(&path_arg(path)?).map_err(lift)?;
        let inner = cfg.run_config(workers, seed);
        inner.validate().map_err(lift)?;
        put(out, PmConfig { inner, constant: cfg.scheduler.constant })
    })
}

#[no_mangle]
pub unsafe extern "C" fn pm_config_free(config: *mut PmConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

#[no_mangle]
pub unsafe extern "C" fn pm_config_set_iterations(config: *mut PmConfig, iterations: u64) -> PmStatus {
    guard(|| {
        if iterations == 0 {
            return Err(invalid("iterations must be at least 1"));
        }
        deref_mut(config, "config")?.inner.iterations = iterations;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pm_config_set_workers(config: *mut PmConfig, workers: usize) -> PmStatus {
    guard(|| {
        if workers == 0 {
            return Err(invalid("workers must be at least 1"));
        }
        deref_mut(config, "config")?.inner.workers = workers;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pm_config_set_seed(config: *mut PmConfig, seed: u64) -> PmStatus {
    guard(|| {
        deref_mut(config, "config")?.inner.seed = seed;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pm_config_set_mode(config: *mut PmConfig, mode: PmMode) -> PmStatus {
    guard(|| {
        deref_mut(config, "config")?.inner.mode = match mode {
            PmMode::Virtual => ExecutionMode::Virtual,
            PmMode::Wallclock => ExecutionMode::Wallclock,
        };
        Ok(())
    })
}

/// Standard deviation of the random-walk proposal.
#[no_mangle]
pub unsafe extern "C" fn pm_config_set_scale(config: *mut PmConfig, scale: f64) -> PmStatus {
    guard(|| {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid("scale must be positive and finite"));
        }
        deref_mut(config, "config")?.inner.proposal.initial_scale = scale;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pm_config_set_predictor(config: *mut PmConfig, predictor: PmPredictor) -> PmStatus {
    guard(|| {
        let c = deref_mut(config, "config")?;
        c.inner.predictor.mode = match predictor {
            PmPredictor::Estimated => PredictorMode::Estimated,
            PmPredictor::Oracle => PredictorMode::Oracle,
            PmPredictor::Constant => PredictorMode::Constant(c.constant),
        };
        Ok(())
    })
}

/// Probability used by `PM_PREDICTOR_CONSTANT`.
#[no_mangle]
pub unsafe extern "C" fn pm_config_set_constant(config: *mut PmConfig, probability: f64) -> PmStatus {
    guard(|| {
        if !(0.0..=1.0).contains(&probability) {
            return Err(invalid("probability must lie in [0, 1]"));
        }
        let c = deref_mut(config, "config")?;
        c.constant = probability;
        if let PredictorMode::Constant(_) = c.inner.predictor.mode {
            c.inner.predictor.mode = PredictorMode::Constant(probability);
        }
        Ok(())
    })
}

unsafe fn run_with(
    model: *const PmModel,
    config: *const PmConfig,
    theta0: *const f64,
    dim: usize,
    out: *mut *mut PmChain,
    f: fn(&TargetModel, &[f64], &RunConfig) -> prefetch_mcmc::Result<ChainOutput>,
) -> PmStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let c = deref(config, "config")?;
        if dim != m.inner.dim() {
            return Err(lift(Error::DimensionMismatch {
                expected: m.inner.dim(),
                got: dim,
            }));
        }
        let theta0 = slice(theta0, dim, "theta0")?;
        let inner = f(&m.inner, theta0, &c.inner).map_err(lift)?;
        put(out, PmChain { inner })
    })
}

/// Plain serial Metropolis-Hastings from `theta0` (length `dim`).
#[no_mangle]
pub unsafe extern "C" fn pm_run_serial(
    model: *const PmModel,
    config: *const PmConfig,
    theta0: *const f64,
    dim: usize,
    out: *mut *mut PmChain,
) -> PmStatus {
    run_with(model, config, theta0, dim, out, run_serial)
}

/// Prefetching Metropolis-Hastings; the chain equals `pm_run_serial`'s for
/// the same seed.
#[no_mangle]
pub unsafe extern "C" fn pm_run_prefetch(
    model: *const PmModel,
    config: *const PmConfig,
    theta0: *const f64,
    dim: usize,
    out: *mut *mut PmChain,
) -> PmStatus {
    run_with(model, config, theta0, dim, out, run_prefetch)
}

#[no_mangle]
pub unsafe extern "C" fn pm_chain_free(chain: *mut PmChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

#[no_mangle]
pub unsafe extern "C" fn pm_chain_iterations(chain: *const PmChain) -> usize {
    chain.as_ref().map_or(0, |c| c.inner.iterations())
}

#[no_mangle]
pub unsafe extern "C" fn pm_chain_dim(chain: *const PmChain) -> usize {
    chain.as_ref().map_or(0, |c| c.inner.dim)
}

/// Copies the `iterations * dim` row-major samples into `buf`.
#[no_mangle]
pub unsafe extern "C" fn pm_chain_samples(chain: *const PmChain, buf: *mut f64, len: usize) -> PmStatus {
    guard(|| {
        let src = &deref(chain, "chain")?.inner.samples;
        copy_out(src, buf, len)
    })
}

/// Copies one byte per iteration (1 = accepted) into `buf`.
#[no_mangle]
pub unsafe extern "C" fn pm_chain_accept_flags(chain: *const PmChain, buf: *mut u8, len: usize) -> PmStatus {
    guard(|| {
        let src: Vec<u8> = deref(chain, "chain")?.inner.accept_flags.iter().map(|&a| u8::from(a)).collect();
        copy_out(&src, buf, len)
    })
}

/// Copies the per-iteration decision times into `buf`.
#[no_mangle]
pub unsafe extern "C" fn pm_chain_times(chain: *const PmChain, buf: *mut f64, len: usize) -> PmStatus {
    guard(|| {
        let src = &deref(chain, "chain")?.inner.times;
        copy_out(src, buf, len)
    })
}

unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, len: usize) -> Result<(), (PmStatus, String)> {
    if len < src.len() {
        return Err((
            PmStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        return Err(null("buffer"));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Total run time (ticks in virtual mode, seconds otherwise).
#[no_mangle]
pub unsafe extern "C" fn pm_chain_total_time(chain: *const PmChain) -> f64 {
    chain.as_ref().map_or(f64::NAN, |c| c.inner.total_time)
}

/// Batch evaluation counts; any output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn pm_chain_batches(
    chain: *const PmChain,
    total: *mut u64,
    useful: *mut u64,
    wasted: *mut u64,
) -> PmStatus {
    guard(|| {
        let c = &deref(chain, "chain")?.inner;
        for (p, v) in [(total, c.batches_total), (useful, c.batches_useful), (wasted, c.batches_wasted)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// 1 if both chains hold bit-identical samples and accept flags, 0 if not,
/// -1 if either handle is null.
#[no_mangle]
pub unsafe extern "C" fn pm_chain_identical(a: *const PmChain, b: *const PmChain) -> i32 {
    match (a.as_ref(), b.as_ref()) {
        (Some(a), Some(b)) => i32::from(a.inner.same_chain(&b.inner)),
        _ => -1,
    }
}
