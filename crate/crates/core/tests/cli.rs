//! The command-line driver, exercised through the built binary.

use std::path::Path;
use std::process::{Command, Output};

use prefetch_mcmc::experiment::Manifest;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefetch-mcmc"))
        .args(args)
        .output()
        .expect("run prefetch-mcmc")
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
[model]
kind = "regression"
n_batches = 10
[model.regression]
dim = 3
n = 300
[run]
iterations = 200
seeds = [1, 2]
[diagnostics]
burn_in_step = 20
speedup_stride = 50
"#;

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model.mixture]\nn = 2000\n");
    let hash = |sub: &str| {
        let out = dir.path().join(sub);
        ok(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("dataset.json")).unwrap()).unwrap();
        meta["content_hash"].as_str().unwrap().to_string()
    };
    assert_eq!(hash("a"), hash("b"));
}

#[test]
fn generate_rejects_empty_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model.mixture]\nn = 0\n");
    let out = cli(&["generate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn unknown_config_fields_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[run]\nworkerz = [2]\n");
    let out = cli(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("workerz"));
}

#[test]
fn single_worker_speedup_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    ok(&["run", "--config", &cfg, "--workers", "1", "--out", out.to_str().unwrap()]);
    let csv = std::fs::read_to_string(out.join("cumulative_speedup.csv")).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next().unwrap(), "seed,workers,iteration,serial_time,parallel_time,speedup");
    for row in rows {
        assert_eq!(row.rsplit(',').next().unwrap(), "1.0", "{row}");
    }
}

#[test]
fn run_then_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    ok(&["run", "--config", &cfg, "--workers", "1,4", "--out", out_s]);

    // J = 1 and J = 4 sample files are bitwise identical.
    for seed in [1, 2] {
        let one = std::fs::read(out.join(format!("chains/j1_s{seed}.bin"))).unwrap();
        let four = std::fs::read(out.join(format!("chains/j4_s{seed}.bin"))).unwrap();
        let serial = std::fs::read(out.join(format!("chains/serial_s{seed}.bin"))).unwrap();
        assert_eq!(one, four);
        assert_eq!(one, serial);
    }
    let manifest = Manifest::load(&out).unwrap();
    assert!(manifest.all_identical());
    assert_eq!(manifest.runs.len(), 6);

    let stdout = ok(&["diagnose", "--out", out_s]);
    assert!(stdout.contains("burn-in"));
    for f in ["diagnostics.json", "diagnostics.csv", "speedup_table.csv", "predictor_trajectories.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let table = std::fs::read_to_string(out.join("speedup_table.csv")).unwrap();
    assert!(table.starts_with("seed,workers,checkpoint,iteration,serial_time,parallel_time,speedup"));
    let traj = std::fs::read_to_string(out.join("predictor_trajectories.csv")).unwrap();
    assert!(traj.lines().count() > 10);
}

#[test]
fn diagnose_fails_on_a_replaced_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    ok(&["run", "--config", &cfg, "--workers", "2", "--iterations", "40", "--out", out_s]);
    // Regenerate the dataset in place with a different seed.
    ok(&["generate", "--config", &cfg, "--seed", "77", "--out", out_s]);
    let res = cli(&["diagnose", "--out", out_s]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("hash mismatch"));
}

#[test]
fn compare_policies_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let stdout = ok(&[
        "compare-policies",
        "--workers",
        "2,4",
        "--iterations",
        "2000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("speculative_moves"));
    let csv = std::fs::read_to_string(out.join("policies.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "policy,alpha,j,expected,measured");
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
}

#[test]
fn help_lists_subcommands() {
    let help = ok(&["--help"]);
    for sub in ["generate", "run", "compare-policies", "diagnose"] {
        assert!(help.contains(sub), "{sub}");
    }
}
