//! Parallel predictive prefetching for Metropolis-Hastings.
//!
//! A master speculatively evaluates future chain states on `J` workers,
//! prioritising the branches of the accept/reject tree that subsample
//! estimates say are most likely. The resulting chain is bit-identical to
//! the serial sampler with the same seed.

pub mod config;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod output;
pub mod policies;
pub mod rng;
pub mod target;
pub mod tree;

pub use engine::{run_prefetch, run_serial, ChainOutput, ExecutionMode, RunConfig};
pub use error::{Error, Result};
pub use rng::DeviateStream;
pub use target::TargetModel;
