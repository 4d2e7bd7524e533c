//! Build and run candidate programs against benchmark tests in a scratch
//! directory per attempt.
//!
//! Isolation is process-level: a fresh working directory, its own process
//! group, an address-space cap, a process-count cap and (where the host
//! permits) a private network namespace. It is not a security boundary.

pub mod assemble;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use assemble::{assemble_source, defines_function, entry_name};

use crate::bench::{LanguageId, ProblemSpec, Solution, SolutionStage};
use crate::process::{self, Exit, Limits, RunOutcome, Sampling};

/// Shared by correctness runs, held exclusively by performance measurement.
pub(crate) static ACTIVITY: RwLock<()> = RwLock::new(());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictKind {
    Pass,
    WrongAnswer,
    RuntimeError,
    CompileError,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunVerdict {
    pub kind: VerdictKind,
    pub stdout: String,
    pub stderr: String,
    pub exit_code: Option<i32>,
    pub duration_ms: f64,
}

impl RunVerdict {
    pub fn passed(&self) -> bool {
        self.kind == VerdictKind::Pass
    }

    /// Short failure description for logs and repair prompts.
    pub fn feedback(&self) -> String {
        let tail = |s: &str| s.lines().rev().take(20).collect::<Vec<_>>().into_iter().rev().collect::<Vec<_>>().join("\n");
        format!("{:?}\n{}\n{}", self.kind, tail(&self.stdout), tail(&self.stderr)).trim().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ValidationSuite {
    #[default]
    Full,
    /// Only the prompt-visible example tests (falls back to the full suite).
    ExampleOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Toolchain {
    pub file_name: String,
    pub build: Option<Vec<String>>,
    pub run: Vec<String>,
    /// Address-space cap for the run step; `None` for runtimes that reserve
    /// large virtual ranges (JVM, Go).
    pub address_space_mb: Option<u64>,
    /// Output fragments that mark a failed test assertion.
    pub assertion_markers: Vec<String>,
    /// Output fragments that mark a compile failure surfaced at run time.
    #[serde(default)]
    pub compile_error_markers: Vec<String>,
    #[serde(default)]
    pub extra_files: BTreeMap<String, String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

fn argv(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

impl Toolchain {
    pub fn default_for(language: LanguageId) -> Self {
        let base = Toolchain {
            file_name: String::new(),
            build: None,
            run: Vec::new(),
            address_space_mb: Some(4096),
            assertion_markers: Vec::new(),
            compile_error_markers: Vec::new(),
            extra_files: BTreeMap::new(),
            env: BTreeMap::new(),
        };
        match language {
            LanguageId::Python => Toolchain {
                file_name: "main.py".into(),
                run: argv(&["python3", "main.py"]),
                assertion_markers: argv(&["AssertionError"]),
                compile_error_markers: argv(&["SyntaxError:", "IndentationError:", "TabError:"]),
                env: BTreeMap::from([("PYTHONHASHSEED".into(), "0".into()), ("PYTHONDONTWRITEBYTECODE".into(), "1".into())]),
                ..base
            },
            LanguageId::Cpp => Toolchain {
                file_name: "main.cpp".into(),
                build: Some(argv(&["g++", "-std=c++17", "-O2", "-o", "main", "main.cpp"])),
                run: argv(&["./main"]),
                assertion_markers: argv(&["Assertion `", "Assertion '"]),
                ..base
            },
            LanguageId::Java => Toolchain {
                file_name: "Main.java".into(),
                build: Some(argv(&["javac", "-nowarn", "Main.java"])),
                run: argv(&["java", "-cp", ".", "Main"]),
                address_space_mb: None,
                assertion_markers: argv(&["AssertionError"]),
                ..base
            },
            LanguageId::Go => Toolchain {
                file_name: "main_test.go".into(),
                run: argv(&["go", "test", "-count=1", "."]),
                address_space_mb: None,
                assertion_markers: argv(&["Error Trace", "--- FAIL"]),
                compile_error_markers: argv(&["[build failed]", "[setup failed]"]),
                extra_files: BTreeMap::from([(
                    "go.mod".into(),
                    "module humaneval\n\ngo 1.18\n\nrequire github.com/stretchr/testify v1.8.4\n".into(),
                )]),
                env: BTreeMap::from([("GOFLAGS".into(), "-mod=mod".into())]),
                ..base
            },
            LanguageId::Rust => Toolchain {
                file_name: "main.rs".into(),
                build: Some(argv(&["rustc", "--edition", "2021", "-O", "-A", "warnings", "--test", "-o", "main", "main.rs"])),
                run: argv(&["./main", "--test-threads=1"]),
                assertion_markers: argv(&["assertion failed", "assertion `"]),
                ..base
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    pub root: PathBuf,
    pub toolchains: BTreeMap<LanguageId, Toolchain>,
    pub build_timeout_secs: f64,
    pub run_timeout_secs: f64,
    pub keep_artifacts: bool,
    pub max_processes: Option<u64>,
    pub isolate_network: bool,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            root: std::env::temp_dir().join("perforch-sandbox"),
            toolchains: LanguageId::ALL.into_iter().map(|l| (l, Toolchain::default_for(l))).collect(),
            build_timeout_secs: 60.0,
            run_timeout_secs: 30.0,
            keep_artifacts: false,
            max_processes: Some(4096),
            isolate_network: true,
        }
    }
}

impl SandboxConfig {
    /// Defaults with the scratch root taken from `SANDBOX_ROOT` when set.
    pub fn from_env() -> Self {
        let mut c = Self::default();
        if let Some(root) = std::env::var_os("SANDBOX_ROOT").filter(|r| !r.is_empty()) {
            c.root = PathBuf::from(root);
        }
        c
    }

    pub fn run_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.run_timeout_secs)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("no toolchain configured for {0}")]
    UnsupportedLanguage(LanguageId),
    #[error("{language} toolchain program {program:?} not found on PATH")]
    ToolchainNotFound { language: LanguageId, program: String },
    #[error("solution source is empty")]
    EmptySolution,
    #[error("timeout must be positive")]
    InvalidTimeout,
    #[error("sandbox setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone)]
struct BuildState {
    failure: Option<RunVerdict>,
}

/// Files plus commands for one attempt, materialised in its own directory.
/// The directory is removed on drop unless artifacts are kept.
#[derive(Debug)]
pub struct ProgramBundle {
    pub language: LanguageId,
    pub files: BTreeMap<String, String>,
    pub build_command: Option<Vec<String>>,
    pub run_command: Vec<String>,
    pub workdir: PathBuf,
    limits: Limits,
    env: Vec<(String, String)>,
    build_timeout: Duration,
    assertion_markers: Vec<String>,
    compile_error_markers: Vec<String>,
    keep: bool,
    built: Mutex<Option<BuildState>>,
}

impl Drop for ProgramBundle {
    fn drop(&mut self) {
        if !self.keep {
            let _ = std::fs::remove_dir_all(&self.workdir);
        }
    }
}

fn resolvable(program: &str, workdir: &Path) -> bool {
    if program.contains('/') {
        return true;
    }
    which::which(program).is_ok() || workdir.join(program).exists()
}

impl ProgramBundle {
    /// Materialise an arbitrary program (used for calibration and tooling).
    pub fn from_parts(
        language: LanguageId,
        files: BTreeMap<String, String>,
        build_command: Option<Vec<String>>,
        run_command: Vec<String>,
        config: &SandboxConfig,
    ) -> Result<Self, SandboxError> {
        let tc = config.toolchains.get(&language).ok_or(SandboxError::UnsupportedLanguage(language))?;
        for cmd in build_command.iter().chain(std::iter::once(&run_command)) {
            let program = cmd.first().ok_or_else(|| SandboxError::Setup("empty command".into()))?;
            if !program.contains('/') && which::which(program).is_err() {
                return Err(SandboxError::ToolchainNotFound { language, program: program.clone() });
            }
        }
        std::fs::create_dir_all(&config.root).map_err(|e| SandboxError::Setup(format!("{}: {e}", config.root.display())))?;
        let dir = tempfile::Builder::new()
            .prefix(&format!("{}-", language.as_str()))
            .tempdir_in(&config.root)
            .map_err(|e| SandboxError::Setup(e.to_string()))?;
        let workdir = dir.keep();
        for (name, text) in &files {
            let path = workdir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| SandboxError::Setup(e.to_string()))?;
            }
            std::fs::write(&path, text).map_err(|e| SandboxError::Setup(e.to_string()))?;
        }
        let mut env: Vec<(String, String)> = tc.env.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        env.push(("HOME".into(), workdir.display().to_string()));
        Ok(Self {
            language,
            files,
            build_command,
            run_command,
            workdir,
            limits: Limits {
                address_space_bytes: tc.address_space_mb.map(|mb| mb * 1024 * 1024),
                max_processes: config.max_processes,
                isolate_network: config.isolate_network,
            },
            env,
            build_timeout: Duration::from_secs_f64(config.build_timeout_secs),
            assertion_markers: tc.assertion_markers.clone(),
            compile_error_markers: tc.compile_error_markers.clone(),
            keep: config.keep_artifacts,
            built: Mutex::new(None),
        })
    }

    /// Run the build step once; a failure is reported as a CompileError verdict.
    /// Waits while a performance measurement holds the host.
    pub fn ensure_built(&self) -> Result<Option<RunVerdict>, SandboxError> {
        let _shared = ACTIVITY.read().unwrap_or_else(|p| p.into_inner());
        self.build_unlocked()
    }

    pub(crate) fn build_unlocked(&self) -> Result<Option<RunVerdict>, SandboxError> {
        let mut state = self.built.lock().expect("build state poisoned");
        if let Some(s) = state.as_ref() {
            return Ok(s.failure.clone());
        }
        let failure = match &self.build_command {
            None => None,
            Some(cmd) => {
                if !resolvable(&cmd[0], &self.workdir) {
                    return Err(SandboxError::ToolchainNotFound { language: self.language, program: cmd[0].clone() });
                }
                // Compilers get no address-space cap.
                let limits = Limits { address_space_bytes: None, ..self.limits.clone() };
                let o = process::run(cmd, &self.workdir, &self.env, &limits, self.build_timeout, None)
                    .map_err(|e| SandboxError::Setup(format!("build spawn: {e}")))?;
                (!o.success()).then(|| RunVerdict {
                    kind: VerdictKind::CompileError,
                    exit_code: exit_code(&o),
                    duration_ms: o.wall.as_secs_f64() * 1000.0,
                    stdout: o.stdout,
                    stderr: if o.timed_out { format!("build timed out\n{}", o.stderr) } else { o.stderr },
                })
            }
        };
        *state = Some(BuildState { failure: failure.clone() });
        Ok(failure)
    }

    /// Run the program, optionally behind a wrapper command such as `perf stat`.
    pub(crate) fn execute(&self, wrapper: &[String], timeout: Duration, sampling: Option<&Sampling>) -> Result<RunOutcome, SandboxError> {
        let argv: Vec<String> = wrapper.iter().chain(&self.run_command).cloned().collect();
        process::run(&argv, &self.workdir, &self.env, &self.limits, timeout, sampling)
            .map_err(|e| SandboxError::Setup(format!("run spawn: {e}")))
    }

    pub(crate) fn classify(&self, o: &RunOutcome) -> VerdictKind {
        if o.timed_out {
            return VerdictKind::Timeout;
        }
        if o.success() {
            return VerdictKind::Pass;
        }
        let has = |markers: &[String]| markers.iter().any(|m| o.stderr.contains(m.as_str()) || o.stdout.contains(m.as_str()));
        if has(&self.compile_error_markers) {
            VerdictKind::CompileError
        } else if has(&self.assertion_markers) {
            VerdictKind::WrongAnswer
        } else {
            VerdictKind::RuntimeError
        }
    }

    pub(crate) fn verdict(&self, o: RunOutcome) -> RunVerdict {
        RunVerdict {
            kind: self.classify(&o),
            exit_code: exit_code(&o),
            duration_ms: o.wall.as_secs_f64() * 1000.0,
            stdout: o.stdout,
            stderr: o.stderr,
        }
    }

    /// Build if needed, then run once without taking the activity lock.
    pub(crate) fn run_unlocked(&self, timeout: Duration) -> Result<RunVerdict, SandboxError> {
        if timeout.is_zero() {
            return Err(SandboxError::InvalidTimeout);
        }
        if let Some(fail) = self.build_unlocked()? {
            return Ok(fail);
        }
        Ok(self.verdict(self.execute(&[], timeout, None)?))
    }
}

fn exit_code(o: &RunOutcome) -> Option<i32> {
    match o.exit {
        Exit::Code(c) if !o.timed_out => Some(c),
        _ => None,
    }
}

/// Test text for a suite choice.
pub fn suite_text(problem: &ProblemSpec, suite: ValidationSuite) -> &str {
    match suite {
        ValidationSuite::Full => &problem.test_suite,
        ValidationSuite::ExampleOnly => problem.visible_tests(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sandbox {
    pub config: SandboxConfig,
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Self {
        Self { config }
    }

    pub fn assemble(&self, problem: &ProblemSpec, solution: &Solution) -> Result<ProgramBundle, SandboxError> {
        self.assemble_with(problem, solution, suite_text(problem, ValidationSuite::Full))
    }

    /// Assemble against explicit test text (example tests, a workload).
    pub fn assemble_with(&self, problem: &ProblemSpec, solution: &Solution, tests: &str) -> Result<ProgramBundle, SandboxError> {
        if solution.source.trim().is_empty() {
            return Err(SandboxError::EmptySolution);
        }
        let lang = problem.language;
        let tc = self.config.toolchains.get(&lang).ok_or(SandboxError::UnsupportedLanguage(lang))?;
        let continuation = solution.stage == SolutionStage::Canonical
            || !entry_name(problem).is_some_and(|name| defines_function(&solution.source, &name, lang));
        let source = assemble_source(problem, &solution.source, continuation, tests);
        let mut files = tc.extra_files.clone();
        files.insert(tc.file_name.clone(), source);
        ProgramBundle::from_parts(lang, files, tc.build.clone(), tc.run.clone(), &self.config)
    }

    /// Bundle used for performance measurement: the workload when the
    /// benchmark has one, otherwise the full test suite.
    pub fn assemble_workload(&self, problem: &ProblemSpec, solution: &Solution) -> Result<ProgramBundle, SandboxError> {
        match problem.workload.as_deref().filter(|w| !w.trim().is_empty()) {
            Some(w) => self.assemble_with(problem, solution, w),
            None => self.assemble(problem, solution),
        }
    }

    /// Build and run `bundle`. Waits while a performance measurement holds
    /// the host.
    pub fn run_tests(&self, bundle: &ProgramBundle, timeout: Duration) -> Result<RunVerdict, SandboxError> {
        let _shared = ACTIVITY.read().unwrap_or_else(|p| p.into_inner());
        bundle.run_unlocked(timeout)
    }

    /// Assemble and run in one step.
    pub fn judge(&self, problem: &ProblemSpec, solution: &Solution, suite: ValidationSuite) -> Result<RunVerdict, SandboxError> {
        let bundle = self.assemble_with(problem, solution, suite_text(problem, suite))?;
        self.run_tests(&bundle, self.config.run_timeout())
    }
}
