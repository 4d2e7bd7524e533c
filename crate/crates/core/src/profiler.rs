//! Repeated, serialized performance measurement of a program bundle.
//!
//! Execution time is task-clock (CPU time charged to the process) from
//! `perf stat` when available, otherwise user+system time from `wait4`.
//! Memory is VmData+VmStk sampled from `/proc/<pid>/status`; runs too short
//! to be sampled fall back to peak RSS.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::{RwLockWriteGuard, TryLockError};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::numeric::{self, Scalar};
use crate::process::{SampleSource, Sampling};
use crate::sandbox::{ProgramBundle, RunVerdict, SandboxError, VerdictKind, ACTIVITY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    ExecutionTime,
    MeanMemory,
    MaxMemory,
    CpuUtilization,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::ExecutionTime, Metric::MeanMemory, Metric::MaxMemory, Metric::CpuUtilization];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::ExecutionTime => "time",
            Metric::MeanMemory => "mean_memory",
            Metric::MaxMemory => "max_memory",
            Metric::CpuUtilization => "cpu",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "time" | "execution_time" | "executiontime" => Ok(Metric::ExecutionTime),
            "mean_memory" | "meanmemory" | "memory" | "mem" => Ok(Metric::MeanMemory),
            "max_memory" | "maxmemory" | "peak_memory" => Ok(Metric::MaxMemory),
            "cpu" | "cpu_utilization" | "cpuutilization" => Ok(Metric::CpuUtilization),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Aggregator {
    #[default]
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasurementConfig {
    pub repetitions: usize,
    pub warmup_runs: usize,
    pub sample_interval_ms: f64,
    pub aggregator: Aggregator,
    pub improvement_epsilon_relative: f64,
    pub epsilon_time_ms: f64,
    pub epsilon_memory_kib: f64,
    pub epsilon_cpu: f64,
    pub run_timeout_secs: f64,
    /// Use `perf stat` when it is installed and permitted.
    pub use_perf: bool,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            repetitions: 5,
            warmup_runs: 1,
            sample_interval_ms: 1.0,
            aggregator: Aggregator::Median,
            improvement_epsilon_relative: 0.01,
            epsilon_time_ms: 1.0,
            epsilon_memory_kib: 64.0,
            epsilon_cpu: 0.01,
            run_timeout_secs: 60.0,
            use_perf: true,
        }
    }
}

impl MeasurementConfig {
    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.repetitions < 1 {
            return Err(ProfileError::InvalidConfig("repetitions must be at least 1".into()));
        }
        if !(self.sample_interval_ms > 0.0) {
            return Err(ProfileError::InvalidConfig("sample_interval_ms must be positive".into()));
        }
        if !(self.run_timeout_secs > 0.0) {
            return Err(ProfileError::InvalidConfig("run_timeout_secs must be positive".into()));
        }
        Ok(())
    }

    pub fn absolute_epsilon(&self, metric: Metric) -> f64 {
        match metric {
            Metric::ExecutionTime => self.epsilon_time_ms,
            Metric::MeanMemory | Metric::MaxMemory => self.epsilon_memory_kib,
            Metric::CpuUtilization => self.epsilon_cpu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MemorySource {
    VmDataStk,
    /// Peak resident set size; used when the process exited before sampling.
    PeakRss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSample {
    pub task_clock_ms: f64,
    pub wall_clock_ms: f64,
    pub cpu_utilization: f64,
    pub mean_memory_kib: f64,
    pub max_memory_kib: f64,
    pub memory_samples: usize,
    pub memory_source: MemorySource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceProfile {
    pub execution_time_ms: f64,
    pub cpu_utilization: f64,
    pub mean_memory_kib: f64,
    pub max_memory_kib: f64,
    pub runs: usize,
    pub raw_runs: Vec<RunSample>,
    pub host_fingerprint: String,
    /// Fallback memory source in effect for at least one run.
    pub memory_source: MemorySource,
    pub config: MeasurementConfig,
}

impl PerformanceProfile {
    pub fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::ExecutionTime => self.execution_time_ms,
            Metric::MeanMemory => self.mean_memory_kib,
            Metric::MaxMemory => self.max_memory_kib,
            Metric::CpuUtilization => self.cpu_utilization,
        }
    }

    pub fn degraded(&self) -> bool {
        self.memory_source != MemorySource::VmDataStk || self.host_fingerprint.contains("timer=rusage")
    }

    /// Build a profile from already-measured runs (median per metric).
    pub fn from_runs(raw_runs: Vec<RunSample>, host_fingerprint: impl Into<String>, config: MeasurementConfig) -> Option<Self> {
        let med = |f: fn(&RunSample) -> f64| numeric::median(&raw_runs.iter().map(f).collect::<Vec<_>>());
        let memory_source = if raw_runs.iter().all(|r| r.memory_source == MemorySource::VmDataStk) {
            MemorySource::VmDataStk
        } else {
            MemorySource::PeakRss
        };
        Some(Self {
            execution_time_ms: med(|r| r.task_clock_ms)?,
            cpu_utilization: med(|r| r.cpu_utilization)?,
            mean_memory_kib: med(|r| r.mean_memory_kib)?,
            max_memory_kib: med(|r| r.max_memory_kib)?,
            runs: raw_runs.len(),
            raw_runs,
            host_fingerprint: host_fingerprint.into(),
            memory_source,
            config,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementResult<T> {
    pub metric: Metric,
    pub before: T,
    pub after: T,
    pub improvement_pct: T,
    pub measurable: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("program failed during measurement: {:?}", .0.kind)]
    ProgramFailed(Box<RunVerdict>),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("invalid measurement config: {0}")]
    InvalidConfig(String),
    #[error("measurement lock is held elsewhere")]
    LockBusy,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CompareError {
    #[error("profiles were measured under different conditions: {0}")]
    Mismatch(String),
    #[error("baseline {0} is zero")]
    ZeroBaseline(Metric),
}

/// Exclusive hold on the measurement host. Correctness runs wait while one
/// exists. Not reentrant: do not call `Sandbox::run_tests` while holding it.
pub struct MeasurementGuard {
    _guard: RwLockWriteGuard<'static, ()>,
}

impl MeasurementGuard {
    pub fn acquire() -> Self {
        Self { _guard: ACTIVITY.write().unwrap_or_else(|p| p.into_inner()) }
    }

    pub fn try_acquire() -> Result<Self, ProfileError> {
        match ACTIVITY.try_write() {
            Ok(g) => Ok(Self { _guard: g }),
            Err(TryLockError::Poisoned(p)) => Ok(Self { _guard: p.into_inner() }),
            Err(TryLockError::WouldBlock) => Err(ProfileError::LockBusy),
        }
    }
}

fn perf_usable() -> bool {
    static USABLE: std::sync::OnceLock<bool> = std::sync::OnceLock::new();
    *USABLE.get_or_init(|| {
        which::which("perf").is_ok()
            && std::process::Command::new("perf")
                .args(["stat", "-x,", "-e", "task-clock", "--", "true"])
                .stdout(std::process::Stdio::null())
                .stderr(std::process::Stdio::piped())
                .output()
                .map(|o| o.status.success() && parse_task_clock(&String::from_utf8_lossy(&o.stderr)).is_some())
                .unwrap_or(false)
    })
}

/// Task-clock milliseconds from `perf stat -x,` output.
pub fn parse_task_clock(text: &str) -> Option<f64> {
    text.lines().find_map(|l| {
        let fields: Vec<&str> = l.split(',').collect();
        if fields.len() >= 3 && fields[2].starts_with("task-clock") {
            fields[0].trim().parse::<f64>().ok()
        } else {
            None
        }
    })
}

/// Stable description of the measuring host and timer backend.
pub fn host_fingerprint(perf: bool) -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|t| t.lines().find_map(|l| l.strip_prefix("model name").map(|r| r.trim_start_matches([' ', '\t', ':']).to_string())))
        .unwrap_or_else(|| "unknown".into());
    let kernel = std::fs::read_to_string("/proc/sys/kernel/osrelease").map(|s| s.trim().to_string()).unwrap_or_else(|_| "unknown".into());
    let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let timer = if perf { "perf-task-clock" } else { "rusage" };
    format!("cpu={cpu};cpus={cpus};kernel={kernel};os={};timer={timer}", std::env::consts::OS)
}

/// Measure `bundle` under `config`. The caller proves exclusivity with `_lock`.
pub fn measure(bundle: &ProgramBundle, config: &MeasurementConfig, _lock: &MeasurementGuard) -> Result<PerformanceProfile, ProfileError> {
    config.validate()?;
    if let Some(fail) = bundle.build_unlocked()? {
        return Err(ProfileError::ProgramFailed(Box::new(fail)));
    }
    let perf = config.use_perf && perf_usable();
    let perf_out = bundle.workdir.join(".perf-stat.txt");
    let wrapper: Vec<String> = if perf {
        ["perf", "stat", "-x,", "-e", "task-clock", "-o"]
            .iter()
            .map(|s| s.to_string())
            .chain([perf_out.display().to_string(), "--".into()])
            .collect()
    } else {
        Vec::new()
    };
    let sampling = Sampling { interval: Duration::from_secs_f64(config.sample_interval_ms / 1000.0), through_wrapper: perf };
    let timeout = Duration::from_secs_f64(config.run_timeout_secs);
    let mut runs = Vec::with_capacity(config.repetitions);
    for i in 0..config.warmup_runs + config.repetitions {
        let o = bundle.execute(&wrapper, timeout, Some(&sampling))?;
        if bundle.classify(&o) != VerdictKind::Pass {
            return Err(ProfileError::ProgramFailed(Box::new(bundle.verdict(o))));
        }
        if i < config.warmup_runs {
            continue;
        }
        let wall_ms = o.wall.as_secs_f64() * 1000.0;
        let task_clock_ms = if perf {
            std::fs::read_to_string(&perf_out).ok().and_then(|t| parse_task_clock(&t)).unwrap_or(o.cpu.as_secs_f64() * 1000.0)
        } else {
            o.cpu.as_secs_f64() * 1000.0
        };
        let (mean_kib, max_kib, source) = match o.sample_source {
            SampleSource::VmDataStk => {
                let s: Vec<f64> = o.memory_samples_kib.iter().map(|&k| k as f64).collect();
                (numeric::mean(&s).unwrap_or(0.0), s.iter().cloned().fold(0.0, f64::max), MemorySource::VmDataStk)
            }
            SampleSource::RusageMaxRss => (o.max_rss_kib as f64, o.max_rss_kib as f64, MemorySource::PeakRss),
        };
        runs.push(RunSample {
            task_clock_ms,
            wall_clock_ms: wall_ms,
            cpu_utilization: if wall_ms > 0.0 { task_clock_ms / wall_ms } else { 0.0 },
            mean_memory_kib: mean_kib,
            max_memory_kib: max_kib,
            memory_samples: o.memory_samples_kib.len(),
            memory_source: source,
        });
    }
    Ok(PerformanceProfile::from_runs(runs, host_fingerprint(perf), config.clone()).expect("at least one run"))
}

/// Relative improvement of `after` over `before` with the measurability rule.
pub fn compare_values<T: Scalar>(metric: Metric, before: T, after: T, relative_eps: T, absolute_eps: T) -> Result<ImprovementResult<T>, CompareError> {
    let improvement_pct = numeric::improvement_pct(before, after).ok_or(CompareError::ZeroBaseline(metric))?;
    let measurable = improvement_pct > T::zero() && improvement_pct >= relative_eps * T::hundred() && before - after >= absolute_eps;
    Ok(ImprovementResult { metric, before, after, improvement_pct, measurable })
}

pub fn compare(before: &PerformanceProfile, after: &PerformanceProfile, metric: Metric) -> Result<ImprovementResult<f64>, CompareError> {
    if before.host_fingerprint != after.host_fingerprint {
        return Err(CompareError::Mismatch(format!("host {:?} vs {:?}", before.host_fingerprint, after.host_fingerprint)));
    }
    if before.config != after.config {
        return Err(CompareError::Mismatch("measurement configs differ".into()));
    }
    let c = &before.config;
    compare_values(metric, before.value(metric), after.value(metric), c.improvement_epsilon_relative, c.absolute_epsilon(metric))
}

/// Plain-text profile summary for the refinement prompt.
pub fn render_overhead_report(p: &PerformanceProfile) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Execution time (task-clock): {:.2} ms", p.execution_time_ms);
    let _ = writeln!(s, "CPU utilization: {:.2} CPUs", p.cpu_utilization);
    let _ = writeln!(s, "Mean memory (VmData+VmStk): {:.0} KiB", p.mean_memory_kib);
    let _ = writeln!(s, "Max memory (VmData+VmStk): {:.0} KiB", p.max_memory_kib);
    let _ = write!(s, "Runs: {} (median reported)", p.runs);
    if p.memory_source != MemorySource::VmDataStk {
        s.push_str("\nNote: degraded fidelity, memory taken from peak resident set size.");
    }
    if p.host_fingerprint.contains("timer=rusage") {
        s.push_str("\nNote: degraded fidelity, CPU time from process accounting instead of perf task-clock.");
    }
    s
}

/// Host tuning check against the system root (normally `/`).
pub fn env_check() -> Vec<String> {
    env_check_at(Path::new("/"))
}

pub fn env_check_at(root: &Path) -> Vec<String> {
    let cpu = root.join("sys/devices/system/cpu");
    let read = |p: &Path| std::fs::read_to_string(p).ok().map(|s| s.trim().to_string());
    let mut warnings = Vec::new();

    let mut governors = Vec::new();
    let mut idle_states = Vec::new();
    if let Ok(entries) = std::fs::read_dir(&cpu) {
        let mut cores: Vec<_> = entries
            .flatten()
            .map(|e| e.path())
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .and_then(|n| n.strip_prefix("cpu"))
                    .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
            })
            .collect();
        cores.sort();
        for core in cores {
            let name = core.file_name().unwrap().to_string_lossy().into_owned();
            if let Some(g) = read(&core.join("cpufreq/scaling_governor")) {
                governors.push((name.clone(), g));
            }
            if let Ok(states) = std::fs::read_dir(core.join("cpuidle")) {
                for st in states.flatten() {
                    let sname = st.file_name().to_string_lossy().into_owned();
                    // state0 is polling; it cannot add wake-up latency.
                    if sname.starts_with("state") && sname != "state0" {
                        idle_states.push((format!("{name}/{sname}"), read(&st.path().join("disable"))));
                    }
                }
            }
        }
    }
    if governors.is_empty() {
        warnings.push("cannot verify scaling_governor: no cpufreq interface".to_string());
    }
    for (core, g) in &governors {
        if g != "performance" {
            warnings.push(format!("scaling_governor on {core} is {g:?}, expected \"performance\""));
        }
    }

    match (read(&cpu.join("intel_pstate/no_turbo")), read(&cpu.join("cpufreq/boost"))) {
        (Some(v), _) if v != "1" => warnings.push(format!("intel_pstate/no_turbo is {v}, turbo boost enabled")),
        (Some(_), _) => {}
        (None, Some(v)) if v != "0" => warnings.push(format!("cpufreq/boost is {v}, frequency boost enabled")),
        (None, Some(_)) => {}
        (None, None) => warnings.push("cannot verify turbo boost: no intel_pstate/no_turbo or cpufreq/boost".to_string()),
    }

    match read(&cpu.join("smt/control")) {
        Some(v) if matches!(v.as_str(), "off" | "forceoff" | "notsupported" | "notimplemented") => {}
        Some(v) => warnings.push(format!("smt/control is {v:?}, SMT enabled")),
        None => warnings.push("cannot verify SMT: smt/control unreadable".to_string()),
    }

    if idle_states.is_empty() {
        warnings.push("cannot verify C-states: no cpuidle interface".to_string());
    }
    for (state, disabled) in &idle_states {
        match disabled.as_deref() {
            Some("1") => {}
            Some(_) => warnings.push(format!("C-state {state} is enabled")),
            None => warnings.push(format!("C-state {state}: unknown (disable flag unreadable)")),
        }
    }
    warnings
}
