use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use prefetch_mcmc::config::ExperimentConfig;
use prefetch_mcmc::experiment::{cmd_compare_policies, cmd_diagnose, cmd_generate, cmd_run};
use prefetch_mcmc::ExecutionMode;

/// Parallel predictive prefetching for Metropolis-Hastings.
#[derive(Debug, Parser)]
#[command(name = "prefetch-mcmc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate(Common),
    /// Run the serial reference and prefetching chains.
    Run(Common),
    /// Simulate the speedup of every prefetching policy.
    ComparePolicies(Common),
    /// Convergence diagnostics and speedup tables for a finished run.
    Diagnose {
        /// Output directory of a previous `run`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed list (data generation uses it as the data seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the worker counts, e.g. `--workers 1,2,4,8`.
    #[arg(long, value_delimiter = ',')]
    workers: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Overrides the number of iterations.
    #[arg(long)]
    iterations: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Virtual,
    Wallclock,
}

impl Common {
    fn resolve(&self, generating: bool) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            if generating {
                cfg.model.mixture.seed = seed;
                cfg.model.regression.seed = seed;
            } else {
                cfg.run.seeds = vec![seed];
                cfg.policies.seed = seed;
            }
        }
        if let Some(w) = &self.workers {
            cfg.run.workers = w.clone();
            cfg.policies.workers = w.clone();
        }
        if let Some(m) = self.mode {
            cfg.run.mode = match m {
                Mode::Virtual => ExecutionMode::Virtual,
                Mode::Wallclock => ExecutionMode::Wallclock,
            };
        }
        if let Some(t) = self.iterations {
            cfg.run.iterations = t;
            cfg.policies.iterations = t;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        cfg.validate().context("invalid configuration")?;
        let out = cfg.output.dir.clone();
        Ok((cfg, out))
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(c) => {
            let (cfg, out) = c.resolve(true)?;
            let path = cmd_generate(&cfg, &out).context("generating dataset")?;
            println!("wrote {}", path.display());
        }
        Command::Run(c) => {
            let (cfg, out) = c.resolve(false)?;
            let manifest = cmd_run(&cfg, &out).context("running chains")?;
            println!("{:>6} {:>4} {:>14} {:>8} {:>10} {:>9}", "seed", "J", "time", "accept", "wasted", "identical");
            for r in &manifest.runs {
                let identical = r.identical_to_serial.map_or("-", |b| if b { "yes" } else { "NO" });
                let workers = if r.workers == 0 { "ser".to_string() } else { r.workers.to_string() };
                println!(
                    "{:>6} {:>4} {:>14.4} {:>8.3} {:>10} {:>9}",
                    r.seed, workers, r.total_time, r.acceptance_rate, r.batches_wasted, identical
                );
            }
            println!("wrote {}", out.display());
            if !manifest.all_identical() {
                anyhow::bail!("a prefetching chain diverged from its serial reference");
            }
        }
        Command::ComparePolicies(c) => {
            let (cfg, out) = c.resolve(false)?;
            let rows = cmd_compare_policies(&cfg, &out).context("comparing policies")?;
            println!("{:<20} {:>6} {:>4} {:>9} {:>9}", "policy", "alpha", "J", "expected", "measured");
            for r in &rows {
                println!(
                    "{:<20} {:>6.3} {:>4} {:>9.4} {:>9.4}",
                    r.policy.to_string(), r.alpha, r.j, r.expected, r.measured
                );
            }
        }
        Command::Diagnose { out } => {
            let report = cmd_diagnose(&out).with_context(|| format!("diagnosing {}", out.display()))?;
            match report.burn_in {
                Some(b) => println!("burn-in: {b} iterations (R-hat < {})", report.rhat_threshold),
                None => println!("burn-in: not reached (R-hat < {})", report.rhat_threshold),
            }
            let worst = report.dims.iter().filter_map(|d| d.rhat).fold(f64::NAN, f64::max);
            println!("max R-hat over the second half: {worst:.4}");
            println!("{:>6} {:>4} {:>8} {:>8} {:>9}", "seed", "J", "at", "iter", "speedup");
            for r in &report.speedups {
                println!(
                    "{:>6} {:>4} {:>8} {:>8} {:>9.3}",
                    r.seed, r.workers, r.checkpoint, r.iteration, r.speedup
                );
            }
        }
    }
    Ok(())
}
