//! Engine configuration, merged as: config file < environment < flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use perforch::profiler::MeasurementConfig;
use perforch::sandbox::SandboxConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    providers_file: Option<PathBuf>,
    templates_dir: Option<PathBuf>,
    memory_dir: Option<PathBuf>,
    worker_pool_size: Option<usize>,
    log_level: Option<String>,
    sandbox: Option<SandboxConfig>,
    measurement: Option<MeasurementConfig>,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub providers_file: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub memory_dir: Option<PathBuf>,
    pub sandbox: SandboxConfig,
    pub measurement: MeasurementConfig,
    pub worker_pool_size: usize,
    pub log_level: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            providers_file: None,
            templates_dir: None,
            memory_dir: None,
            sandbox: SandboxConfig::from_env(),
            measurement: MeasurementConfig::default(),
            worker_pool_size: 1,
            log_level: "info".into(),
        }
    }
}

/// Flag values; `None` leaves the lower layers alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub providers_file: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub memory_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub log_level: Option<String>,
    pub sandbox_root: Option<PathBuf>,
    pub keep_artifacts: bool,
    pub runs: Option<usize>,
}

fn env_path(key: &str) -> Option<PathBuf> {
    std::env::var_os(key).filter(|v| !v.is_empty()).map(PathBuf::from)
}

impl EngineConfig {
    /// `file` is the --config flag; PERFORCH_CONFIG is used when it is absent.
    pub fn load(file: Option<&Path>, flags: &Overrides) -> anyhow::Result<Self> {
        let mut c = Self::default();
        let path = file.map(Path::to_path_buf).or_else(|| env_path("PERFORCH_CONFIG"));
        if let Some(path) = path {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
            let f: FileConfig = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
            let base = path.parent().unwrap_or(Path::new("."));
            let rel = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
            c.providers_file = f.providers_file.map(rel);
            c.templates_dir = f.templates_dir.map(rel);
            c.memory_dir = f.memory_dir.map(rel);
            if let Some(s) = f.sandbox {
                c.sandbox = s;
            }
            if let Some(m) = f.measurement {
                c.measurement = m;
            }
            if let Some(w) = f.worker_pool_size {
                c.worker_pool_size = w;
            }
            if let Some(l) = f.log_level {
                c.log_level = l;
            }
        }

        if let Some(r) = env_path("SANDBOX_ROOT") {
            c.sandbox.root = r;
        }
        if let Some(p) = env_path("PERFORCH_PROVIDERS") {
            c.providers_file = Some(p);
        }
        if let Some(p) = env_path("PERFORCH_MEMORY_DIR") {
            c.memory_dir = Some(p);
        }
        if let Ok(w) = std::env::var("PERFORCH_WORKERS") {
            c.worker_pool_size = w.parse().with_context(|| format!("worker_pool_size: PERFORCH_WORKERS={w:?} is not a count"))?;
        }
        if let Ok(l) = std::env::var("PERFORCH_LOG") {
            c.log_level = l;
        }

        if let Some(p) = &flags.providers_file {
            c.providers_file = Some(p.clone());
        }
        if let Some(p) = &flags.templates_dir {
            c.templates_dir = Some(p.clone());
        }
        if let Some(p) = &flags.memory_dir {
            c.memory_dir = Some(p.clone());
        }
        if let Some(w) = flags.workers {
            c.worker_pool_size = w;
        }
        if let Some(l) = &flags.log_level {
            c.log_level = l.clone();
        }
        if let Some(r) = &flags.sandbox_root {
            c.sandbox.root = r.clone();
        }
        if flags.keep_artifacts {
            c.sandbox.keep_artifacts = true;
        }
        if let Some(n) = flags.runs {
            c.measurement.repetitions = n;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.worker_pool_size < 1 {
            bail!("worker_pool_size: must be at least 1");
        }
        for (name, p) in [("providers_file", &self.providers_file), ("templates_dir", &self.templates_dir)] {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("{name}: {} does not exist", p.display());
                }
            }
        }
        if self.sandbox.run_timeout_secs <= 0.0 || self.sandbox.build_timeout_secs <= 0.0 {
            bail!("sandbox: timeouts must be positive");
        }
        self.measurement.validate().map_err(|e| anyhow::anyhow!("measurement: {e}"))?;
        Ok(())
    }

    pub fn providers(&self) -> anyhow::Result<&Path> {
        self.providers_file.as_deref().context("providers_file: not set (use --providers or the config file)")
    }

    pub fn memory(&self) -> anyhow::Result<&Path> {
        self.memory_dir.as_deref().context("memory_dir: not set (use --memory or the config file)")
    }
}
