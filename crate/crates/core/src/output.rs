//! On-disk formats for chains, timing, speedups and diagnostics.
//!
//! Samples are stored column-major as little-endian `f64` in a `.bin` file
//! next to a `.json` metadata file carrying the content hash of the binary.
//! Tabular outputs are CSV with a stable header per schema version.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{ChainOutput, TimeUnit};
use crate::error::{Error, Result};
use crate::target::content_hash;

pub const SAMPLES_FORMAT_VERSION: u32 = 1;
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub format_version: u32,
    pub dim: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Worker count, or 0 for the serial executor.
    pub workers: usize,
    pub data_file: String,
    pub content_hash: String,
    /// `'1'` for accepted iterations, `'0'` otherwise.
    pub accept_flags: String,
    pub acceptance_rate: f64,
    pub total_time: f64,
    pub time_unit: TimeUnit,
    pub batches_total: u64,
    pub batches_useful: u64,
    pub batches_wasted: u64,
    pub final_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleFile {
    pub meta: SampleMeta,
    /// Row-major `iterations x dim`.
    pub samples: Vec<f64>,
}

impl SampleFile {
    pub fn accept_flags(&self) -> Vec<bool> {
        self.meta.accept_flags.chars().map(|c| c == '1').collect()
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        self.samples.iter().skip(d).step_by(self.meta.dim).copied().collect()
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Writes `<stem>.bin` and `<stem>.json`; returns the metadata path.
pub fn write_samples(stem: &Path, out: &ChainOutput, seed: u64, workers: usize) -> Result<PathBuf> {
    let json_path = stem.with_extension("json");
    let bin_path = stem.with_extension("bin");
    ensure_parent(&json_path)?;
    let (t, dim) = (out.iterations(), out.dim);
    let mut bytes = Vec::with_capacity(t * dim * 8);
    for d in 0..dim {
        for i in 0..t {
            bytes.extend_from_slice(&out.samples[i * dim + d].to_le_bytes());
        }
    }
    fs::write(&bin_path, &bytes).map_err(|e| Error::io(&bin_path, e))?;
    let meta = SampleMeta {
        format_version: SAMPLES_FORMAT_VERSION,
        dim,
        iterations: t,
        seed,
        workers,
        data_file: bin_path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        content_hash: content_hash(&bytes),
        accept_flags: out.accept_flags.iter().map(|&a| if a { '1' } else { '0' }).collect(),
        acceptance_rate: out.acceptance_rate(),
        total_time: out.total_time,
        time_unit: out.time_unit,
        batches_total: out.batches_total,
        batches_useful: out.batches_useful,
        batches_wasted: out.batches_wasted,
        final_scale: out.final_scale,
    };
    write_json(&json_path, &meta)?;
    Ok(json_path)
}

pub fn read_samples(path: &Path) -> Result<SampleFile> {
    let json_path = path.with_extension("json");
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let meta: SampleMeta = serde_json::from_str(&text)?;
    let bad = |reason: String| Error::Format {
        path: json_path.clone(),
        reason,
    };
    if meta.format_version != SAMPLES_FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", meta.format_version)));
    }
    let bin_path = json_path.with_file_name(&meta.data_file);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let found = content_hash(&bytes);
    if found != meta.content_hash {
        return Err(Error::HashMismatch {
            expected: meta.content_hash.clone(),
            found,
        });
    }
    let (t, dim) = (meta.iterations, meta.dim);
    if bytes.len() != t * dim * 8 || meta.accept_flags.len() != t {
        return Err(bad(format!("expected {t} x {dim} samples, found {} bytes", bytes.len())));
    }
    let mut samples = vec![0.0; t * dim];
    for d in 0..dim {
        for i in 0..t {
            let at = (d * t + i) * 8;
            samples[i * dim + d] = f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"));
        }
    }
    Ok(SampleFile { meta, samples })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Serialises `rows` as CSV with a header derived from the row type.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub iteration: usize,
    pub time: f64,
    pub accepted: u8,
    pub running_acceptance: f64,
}

/// Per-iteration decision times plus the running acceptance rate.
pub fn timing_rows(out: &ChainOutput) -> Vec<TimingRow> {
    let mut accepted = 0usize;
    out.times
        .iter()
        .zip(&out.accept_flags)
        .enumerate()
        .map(|(i, (&time, &a))| {
            accepted += usize::from(a);
            TimingRow {
                iteration: i + 1,
                time,
                accepted: u8::from(a),
                running_acceptance: accepted as f64 / (i + 1) as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub seed: u64,
    pub workers: usize,
    pub iteration: usize,
    pub serial_time: f64,
    pub parallel_time: f64,
    pub speedup: f64,
}

/// Cumulative speedup of `parallel` over `serial` after every `stride`-th
/// iteration (and the last one).
pub fn cumulative_speedup(serial: &ChainOutput, parallel: &ChainOutput, seed: u64, stride: usize) -> Vec<SpeedupRow> {
    let t = serial.iterations().min(parallel.iterations());
    (1..=t)
        .filter(|&i| i % stride.max(1) == 0 || i == t)
        .map(|i| speedup_at(serial, parallel, seed, i))
        .collect()
}

/// Speedup after iteration `i` (1-based).
pub fn speedup_at(serial: &ChainOutput, parallel: &ChainOutput, seed: u64, i: usize) -> SpeedupRow {
    let (s, p) = (serial.times[i - 1], parallel.times[i - 1]);
    SpeedupRow {
        seed,
        workers: parallel.workers,
        iteration: i,
        serial_time: s,
        parallel_time: p,
        speedup: if p > 0.0 { s / p } else { f64::NAN },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> ChainOutput {
        ChainOutput {
            dim: 2,
            samples: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            accept_flags: vec![true, false, true],
            times: vec![2.0, 3.0, 4.0],
            time_unit: TimeUnit::Ticks,
            total_time: 4.0,
            workers: 2,
            batches_total: 5,
            batches_useful: 4,
            batches_wasted: 1,
            final_scale: 0.5,
        }
    }

    #[test]
    fn samples_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = chain();
        let path = write_samples(&dir.path().join("c"), &out, 7, 2).unwrap();
        let back = read_samples(&path).unwrap();
        assert_eq!(back.samples, out.samples);
        assert_eq!(back.accept_flags(), out.accept_flags);
        assert_eq!(back.column(1), vec![2.0, 4.0, 6.0]);
        assert_eq!(back.meta.seed, 7);
    }

    #[test]
    fn tampered_samples_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_samples(&dir.path().join("c"), &chain(), 7, 2).unwrap();
        let bin = path.with_extension("bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes[0] ^= 1;
        fs::write(&bin, bytes).unwrap();
        assert!(matches!(read_samples(&path), Err(Error::HashMismatch { .. })));
    }

    #[test]
    fn timing_and_speedup_rows() {
        let out = chain();
        let rows = timing_rows(&out);
        assert_eq!(rows[2].running_acceptance, 2.0 / 3.0);
        let mut fast = out.clone();
        fast.times = vec![1.0, 1.5, 2.0];
        let s = cumulative_speedup(&out, &fast, 1, 2);
        assert_eq!(s.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(s[1].speedup, 2.0);
    }
}
