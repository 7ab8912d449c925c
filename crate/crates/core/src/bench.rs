//! Device profiling, exclusive wall-clock timing, duration formatting in
//! the result-table style, speedup arithmetic, and the append-only
//! JSON-lines run store.

use crate::metrics::MetricsReport;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

/// Environment variable that forces the accelerator off regardless of
/// hardware presence.
pub const NO_ACCEL_ENV: &str = "FACEBENCH_NO_ACCEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_label: String,
    pub cpu_model: String,
    pub ram_gb: f64,
    pub gpu_model: Option<String>,
    pub accelerator_enabled: bool,
}

/// (device index, accelerator flag), rendered "D_i" / "D_i'".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunKey {
    pub device_index: u32,
    pub accelerator_enabled: bool,
}

impl fmt::Display for RunKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "D_{}{}",
            self.device_index,
            if self.accelerator_enabled { "" } else { "'" }
        )
    }
}

impl RunKey {
    pub fn parse(s: &str) -> Option<RunKey> {
        let body = s.strip_prefix("D_")?;
        let (digits, accel) = match body.strip_suffix('\'') {
            Some(d) => (d, false),
            None => (body, true),
        };
        let device_index: u32 = digits.parse().ok()?;
        if device_index == 0 {
            return None;
        }
        Some(RunKey { device_index, accelerator_enabled: accel })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub wall_seconds: f64,
    /// Always "monotonic": the duration comes from a monotonic clock; the
    /// timestamps are informational wall-clock values.
    pub clock_source: String,
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    /// One of the eight table row names.
    pub model_name: String,
    pub run_key: RunKey,
    pub device: DeviceProfile,
    pub metrics: MetricsReport,
    pub timing: TimingRecord,
    pub config_hash: String,
    pub created_at: DateTime<Utc>,
    /// "ok" or "failed: <reason>".
    pub status: String,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("negative duration: {0}")]
    NegativeDuration(f64),
    #[error("zero duration in speedup")]
    ZeroDuration,
    #[error("run store corrupt at {path} line {line}: {reason}")]
    StoreCorrupt { path: String, line: usize, reason: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Best-effort host discovery. The accelerator flag is true only when a GPU
/// is present AND the disable override is absent.
pub fn detect_device(device_index: u32) -> DeviceProfile {
    let cpu_model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".to_string());
    let ram_gb = std::fs::read_to_string("/proc/meminfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("MemTotal"))
                .and_then(|l| l.split_whitespace().nth(1))
                .and_then(|v| v.parse::<f64>().ok())
        })
        .map(|kb| (kb / (1024.0 * 1024.0) * 10.0).round() / 10.0)
        .unwrap_or(0.0);
    let gpu_model = detect_gpu();
    let disabled = std::env::var(NO_ACCEL_ENV).is_ok();
    let accelerator_enabled = gpu_model.is_some() && !disabled;
    DeviceProfile {
        device_label: format!("Device{device_index}"),
        cpu_model,
        ram_gb,
        gpu_model,
        accelerator_enabled,
    }
}

fn detect_gpu() -> Option<String> {
    let version = std::fs::read_to_string("/proc/driver/nvidia/version").ok()?;
    Some(
        version
            .lines()
            .next()
            .unwrap_or("NVIDIA GPU")
            .trim()
            .to_string(),
    )
}

static RUN_LOCK: Mutex<()> = Mutex::new(());

/// Acquire the process-wide run lock: no two timed workloads may overlap,
/// because timing is a measured output.
pub fn run_lock() -> MutexGuard<'static, ()> {
    RUN_LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Time a workload under the run lock with a monotonic clock. Only the
/// workload itself falls inside the measured span.
pub fn time_run<R>(workload: impl FnOnce() -> R) -> (R, TimingRecord) {
    let _guard = run_lock();
    let started_at = Utc::now();
    let t0 = Instant::now();
    let result = workload();
    let wall_seconds = t0.elapsed().as_secs_f64();
    let ended_at = Utc::now();
    (
        result,
        TimingRecord {
            wall_seconds,
            clock_source: "monotonic".to_string(),
            started_at,
            ended_at,
        },
    )
}

fn round_half_up(x: f64) -> u64 {
    (x + 0.5).floor() as u64
}

/// Canonical table style: ">= 1 hour" renders "{h}h {m}min" (seconds
/// dropped, minutes rounded half-up); otherwise "{m}min {s}s" (seconds
/// rounded half-up).
pub fn format_duration(seconds: f64) -> Result<String, BenchError> {
    if seconds < 0.0 {
        return Err(BenchError::NegativeDuration(seconds));
    }
    if seconds >= 3600.0 {
        let mut h = (seconds / 3600.0).floor() as u64;
        let mut m = round_half_up((seconds - h as f64 * 3600.0) / 60.0);
        if m == 60 {
            h += 1;
            m = 0;
        }
        Ok(format!("{h}h {m}min"))
    } else {
        let mut m = (seconds / 60.0).floor() as u64;
        let mut s = round_half_up(seconds - m as f64 * 60.0);
        if s == 60 {
            m += 1;
            s = 0;
        }
        if m == 60 {
            Ok("1h 0min".to_string())
        } else {
            Ok(format!("{m}min {s}s"))
        }
    }
}

/// Ratio of unaccelerated to accelerated wall time.
pub fn speedup(cpu: &TimingRecord, acc: &TimingRecord) -> Result<f64, BenchError> {
    if cpu.wall_seconds <= 0.0 || acc.wall_seconds <= 0.0 {
        return Err(BenchError::ZeroDuration);
    }
    Ok(cpu.wall_seconds / acc.wall_seconds)
}

#[derive(Debug, Clone, Default)]
pub struct RunFilter {
    pub model_name: Option<String>,
    pub run_key: Option<RunKey>,
    pub since: Option<DateTime<Utc>>,
}

impl RunFilter {
    fn matches(&self, r: &RunRecord) -> bool {
        self.model_name.as_ref().is_none_or(|m| &r.model_name == m)
            && self.run_key.is_none_or(|k| r.run_key == k)
            && self.since.is_none_or(|s| r.created_at >= s)
    }
}

/// Append one record as one JSON line (write-then-flush).
pub fn append_run(path: &Path, record: &RunRecord) -> Result<(), BenchError> {
    let io_err = |source| BenchError::Io { path: path.display().to_string(), source };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err)?;
    }
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err)?;
    let mut line = serde_json::to_string(record).expect("RunRecord serializes");
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(io_err)?;
    file.flush().map_err(io_err)
}

/// Load records in append order, applying the filter. A non-parseable line
/// is an error that names its line number.
pub fn load_runs(path: &Path, filter: &RunFilter) -> Result<Vec<RunRecord>, BenchError> {
    let io_err = |source| BenchError::Io { path: path.display().to_string(), source };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord = serde_json::from_str(&line).map_err(|e| BenchError::StoreCorrupt {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if filter.matches(&record) {
            out.push(record);
        }
    }
    Ok(out)
}
