//! Per-task state machine: generate, validate, fix, then refine with
//! acceptance and rollback.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{extract_code_block, CategoryTag, LanguageId, ProblemSpec, PromptTemplate, Solution, SolutionStage, TemplateError, TemplateSet};
use crate::gateway::{CallLedger, ChatExchange, ChatService, Purpose};
use crate::profiler::{self, ImprovementResult, MeasurementConfig, MeasurementGuard, Metric, PerformanceProfile, ProfileError, RunSample};
use crate::ranking::{MemorySnapshot, RankingError, Stage};
use crate::sandbox::{RunVerdict, Sandbox, SandboxError, ValidationSuite, VerdictKind};

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    /// The program itself failed; attached verdict says how.
    #[error("program failed: {:?}", .0.kind)]
    Program(Box<RunVerdict>),
    #[error("infrastructure failure: {0}")]
    Infrastructure(String),
}

impl From<SandboxError> for ExecError {
    fn from(e: SandboxError) -> Self {
        ExecError::Infrastructure(e.to_string())
    }
}

impl From<ProfileError> for ExecError {
    fn from(e: ProfileError) -> Self {
        match e {
            ProfileError::ProgramFailed(v) => ExecError::Program(v),
            other => ExecError::Infrastructure(other.to_string()),
        }
    }
}

/// Correctness and performance oracle used by the agent.
pub trait Executor: Send + Sync {
    fn validate(&self, problem: &ProblemSpec, solution: &Solution, suite: ValidationSuite) -> Result<RunVerdict, ExecError>;
    fn measure(&self, problem: &ProblemSpec, solution: &Solution, config: &MeasurementConfig) -> Result<PerformanceProfile, ExecError>;
}

/// Runs candidates in the local sandbox and measures under the global lock.
#[derive(Debug, Clone, Default)]
pub struct LocalExecutor {
    pub sandbox: Sandbox,
}

impl Executor for LocalExecutor {
    fn validate(&self, problem: &ProblemSpec, solution: &Solution, suite: ValidationSuite) -> Result<RunVerdict, ExecError> {
        Ok(self.sandbox.judge(problem, solution, suite)?)
    }

    fn measure(&self, problem: &ProblemSpec, solution: &Solution, config: &MeasurementConfig) -> Result<PerformanceProfile, ExecError> {
        let bundle = self.sandbox.assemble_workload(problem, solution)?;
        let lock = MeasurementGuard::acquire();
        Ok(profiler::measure(&bundle, config, &lock)?)
    }
}

/// Test double that reads `key=value` directives from the solution text:
/// `verdict=pass|wa|re|ce|timeout`, `time_ms=`, `mem_kib=`, `max_kib=`, `cpu=`.
/// Text without a verdict directive is treated as not compiling.
#[derive(Debug, Clone)]
pub struct ScriptedExecutor {
    pub default_time_ms: f64,
    pub default_memory_kib: f64,
}

impl Default for ScriptedExecutor {
    fn default() -> Self {
        Self { default_time_ms: 100.0, default_memory_kib: 1024.0 }
    }
}

fn directives(source: &str) -> BTreeMap<&str, &str> {
    source.split_whitespace().filter_map(|tok| tok.split_once('=')).collect()
}

impl ScriptedExecutor {
    fn verdict_kind(source: &str) -> VerdictKind {
        match directives(source).get("verdict").map(|v| v.to_ascii_lowercase()).as_deref() {
            Some("pass") => VerdictKind::Pass,
            Some("wa") | Some("wrong") => VerdictKind::WrongAnswer,
            Some("re") | Some("runtime") => VerdictKind::RuntimeError,
            Some("timeout") => VerdictKind::Timeout,
            _ => VerdictKind::CompileError,
        }
    }
}

impl Executor for ScriptedExecutor {
    fn validate(&self, _problem: &ProblemSpec, solution: &Solution, _suite: ValidationSuite) -> Result<RunVerdict, ExecError> {
        let kind = Self::verdict_kind(&solution.source);
        Ok(RunVerdict { kind, stdout: String::new(), stderr: String::new(), exit_code: (kind == VerdictKind::Pass).then_some(0), duration_ms: 0.0 })
    }

    fn measure(&self, problem: &ProblemSpec, solution: &Solution, config: &MeasurementConfig) -> Result<PerformanceProfile, ExecError> {
        let v = self.validate(problem, solution, ValidationSuite::Full)?;
        if !v.passed() {
            return Err(ExecError::Program(Box::new(v)));
        }
        let d = directives(&solution.source);
        let num = |k: &str, default: f64| d.get(k).and_then(|v| v.parse::<f64>().ok()).unwrap_or(default);
        let mean = num("mem_kib", self.default_memory_kib);
        let run = RunSample {
            task_clock_ms: num("time_ms", self.default_time_ms),
            wall_clock_ms: num("time_ms", self.default_time_ms),
            cpu_utilization: num("cpu", 1.0),
            mean_memory_kib: mean,
            max_memory_kib: num("max_kib", mean),
            memory_samples: 1,
            memory_source: profiler::MemorySource::VmDataStk,
        };
        let runs = vec![run; config.repetitions.max(1)];
        Ok(PerformanceProfile::from_runs(runs, "scripted", config.clone()).expect("non-empty runs"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RefineStrategy {
    #[default]
    SequentialAcceptance,
    Top1Only,
    BestOfN,
}

impl std::str::FromStr for RefineStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "sequential" | "sequentialacceptance" => Ok(Self::SequentialAcceptance),
            "top1" | "top1only" => Ok(Self::Top1Only),
            "bestofn" | "best" => Ok(Self::BestOfN),
            other => Err(format!("unknown refine strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub candidates_per_stage: usize,
    pub target_metric: Metric,
    pub refine_strategy: RefineStrategy,
    pub fix_attempts_per_model: usize,
    pub validation_suite: ValidationSuite,
    /// Models queried in the generation stage (the top one by default).
    pub generation_models: usize,
    /// Give fix models the task text and failing test output.
    pub fix_with_feedback: bool,
    pub measurement: MeasurementConfig,
    pub workers: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            candidates_per_stage: 5,
            target_metric: Metric::ExecutionTime,
            refine_strategy: RefineStrategy::SequentialAcceptance,
            fix_attempts_per_model: 1,
            validation_suite: ValidationSuite::Full,
            generation_models: 1,
            fix_with_feedback: false,
            measurement: MeasurementConfig::default(),
            workers: 1,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.candidates_per_stage < 1 || self.generation_models < 1 || self.fix_attempts_per_model < 1 || self.workers < 1 {
            return Err(OrchestratorError::Config("candidate, attempt and worker counts must be at least 1".into()));
        }
        self.measurement.validate().map_err(|e| OrchestratorError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub model_id: String,
    pub solution: Option<Solution>,
    pub verdict: Option<RunVerdict>,
    pub profile: Option<PerformanceProfile>,
    pub improvement: Option<ImprovementResult<f64>>,
    pub accepted: bool,
    /// Provider or infrastructure failure for this attempt.
    pub error: Option<String>,
}

impl StageOutcome {
    fn new(stage: Stage, model_id: &str) -> Self {
        Self { stage, model_id: model_id.to_string(), solution: None, verdict: None, profile: None, improvement: None, accepted: false, error: None }
    }

    fn passed(&self) -> bool {
        self.verdict.as_ref().is_some_and(RunVerdict::passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinalStatus {
    SolvedRefined,
    SolvedUnrefined,
    Unsolved,
    /// A sandbox or profiler failure stopped the task.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub task_id: String,
    pub language: LanguageId,
    pub tags: BTreeSet<CategoryTag>,
    pub outcomes: Vec<StageOutcome>,
    pub final_solution: Option<Solution>,
    pub final_status: FinalStatus,
    pub baseline_profile: Option<PerformanceProfile>,
    pub final_profile: Option<PerformanceProfile>,
    pub target_metric: Metric,
    pub ledger: Vec<ChatExchange>,
    pub error: Option<String>,
}

impl RunLog {
    pub fn calls(&self, purpose: Purpose) -> usize {
        self.ledger.iter().filter(|e| e.purpose == purpose).count()
    }

    /// Whether the first generated solution passed.
    pub fn first_attempt_passed(&self) -> bool {
        self.outcomes.iter().find(|o| o.stage == Stage::Generate).is_some_and(StageOutcome::passed)
    }

    pub fn solved(&self) -> bool {
        self.final_solution.is_some()
    }

    /// Improvement of the final profile over the baseline on `metric`.
    pub fn improvement(&self, metric: Metric) -> Option<ImprovementResult<f64>> {
        profiler::compare(self.baseline_profile.as_ref()?, self.final_profile.as_ref()?, metric).ok()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("memory has no generation ranking for {0}")]
    NoMemory(LanguageId),
    #[error(transparent)]
    Ranking(#[from] RankingError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("agent config: {0}")]
    Config(String),
    #[error("cannot write run log: {0}")]
    Io(String),
    #[error("infrastructure failure: {0}")]
    Infrastructure(String),
}

fn bindings(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

// Only pass bindings the template actually uses.
fn render(template: &PromptTemplate, all: &BTreeMap<String, String>) -> Result<String, TemplateError> {
    let used = template.placeholders();
    let b: BTreeMap<String, String> = all.iter().filter(|(k, _)| used.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect();
    template.render(&b)
}

pub struct Agent<'a> {
    pub chat: &'a dyn ChatService,
    pub executor: &'a dyn Executor,
    pub memory: Arc<MemorySnapshot>,
    pub templates: TemplateSet,
    pub config: AgentConfig,
}

pub(crate) struct Abort(pub(crate) String);

/// Generation prompt for `problem`.
pub fn generation_prompt(templates: &TemplateSet, problem: &ProblemSpec) -> Result<String, TemplateError> {
    render(
        &templates.generation,
        &bindings(&[
            ("language", problem.language.as_str()),
            ("signature", &problem.signature()),
            ("task description", &problem.prompt),
            ("example test", problem.visible_tests()),
        ]),
    )
}

/// Fixing prompt over `buggy`; `feedback` is used only by templates that ask for it.
pub fn fixing_prompt(templates: &TemplateSet, problem: &ProblemSpec, buggy: &str, feedback: &str) -> Result<String, TemplateError> {
    render(
        &templates.fixing,
        &bindings(&[("buggy solution", buggy), ("task description", &problem.prompt), ("test feedback", feedback), ("language", problem.language.as_str())]),
    )
}

/// Refinement prompt for `code` with the baseline overhead report.
pub fn refinement_prompt(templates: &TemplateSet, problem: &ProblemSpec, code: &str, report: &str) -> Result<String, TemplateError> {
    render(
        &templates.refinement,
        &bindings(&[
            ("language", problem.language.as_str()),
            ("task description", &problem.prompt),
            ("small test cases", problem.visible_tests()),
            ("Original Code", code),
            ("overhead analysis report", report),
        ]),
    )
}

impl<'a> Agent<'a> {
    pub fn new(chat: &'a dyn ChatService, executor: &'a dyn Executor, memory: Arc<MemorySnapshot>, config: AgentConfig) -> Self {
        let templates = if config.fix_with_feedback { TemplateSet::default().with_extended_fixing() } else { TemplateSet::default() };
        Self { chat, executor, memory, templates, config }
    }

    fn ranked(&self, stage: Stage, problem: &ProblemSpec, metric: Option<Metric>, k: usize) -> Vec<String> {
        match self.memory.top_k_for(stage, problem.language, &problem.tags, metric, k) {
            Ok(v) => v,
            Err(e) => {
                tracing::warn!(task = %problem.task_id, %stage, error = %e, "no ranked models");
                Vec::new()
            }
        }
    }

    /// One model call plus validation.
    pub(crate) fn attempt(
        &self,
        problem: &ProblemSpec,
        stage: Stage,
        model: &str,
        prompt: &str,
        parent: Option<&Solution>,
        sink: &CallLedger,
    ) -> Result<StageOutcome, Abort> {
        let mut out = StageOutcome::new(stage, model);
        let purpose = match stage {
            Stage::Generate => Purpose::Generate,
            Stage::Fix => Purpose::Fix,
            Stage::Refine => Purpose::Refine,
        };
        let reply = match self.chat.complete(model, prompt, purpose, sink) {
            Ok(r) => r,
            Err(e) => {
                out.error = Some(e.to_string());
                return Ok(out);
            }
        };
        let code = extract_code_block(&reply.response_text, problem.language).source;
        let sol_stage = match stage {
            Stage::Generate => SolutionStage::Generate,
            Stage::Fix => SolutionStage::Fix,
            Stage::Refine => SolutionStage::Refine,
        };
        let solution = match Solution::new(code, model, sol_stage, parent) {
            Ok(s) => s,
            Err(e) => {
                out.verdict = Some(RunVerdict {
                    kind: VerdictKind::CompileError,
                    stdout: String::new(),
                    stderr: e.to_string(),
                    exit_code: None,
                    duration_ms: 0.0,
                });
                return Ok(out);
            }
        };
        match self.executor.validate(problem, &solution, self.config.validation_suite) {
            Ok(v) => out.verdict = Some(v),
            Err(ExecError::Program(v)) => out.verdict = Some(*v),
            Err(ExecError::Infrastructure(m)) => return Err(Abort(m)),
        }
        out.solution = Some(solution);
        Ok(out)
    }

    fn generate_stage(&self, problem: &ProblemSpec, sink: &CallLedger) -> Result<Result<Vec<StageOutcome>, Abort>, OrchestratorError> {
        let models = self.ranked(Stage::Generate, problem, None, self.config.generation_models);
        let prompt = generation_prompt(&self.templates, problem)?;
        let mut outs = Vec::new();
        for m in models {
            let mut o = match self.attempt(problem, Stage::Generate, &m, &prompt, None, sink) {
                Ok(o) => o,
                Err(a) => return Ok(Err(a)),
            };
            o.accepted = o.passed();
            let done = o.accepted;
            outs.push(o);
            if done {
                break;
            }
        }
        Ok(Ok(outs))
    }

    fn fix_stage(&self, problem: &ProblemSpec, failed: Option<&StageOutcome>, sink: &CallLedger) -> Result<Result<Vec<StageOutcome>, Abort>, OrchestratorError> {
        let original = failed.and_then(|f| f.solution.as_ref());
        // Without a generated program the declaration is what gets repaired.
        let buggy = original.map(|s| s.source.clone()).unwrap_or_else(|| problem.declaration.clone().unwrap_or_else(|| problem.prompt.clone()));
        let feedback = failed
            .and_then(|f| f.verdict.as_ref().map(RunVerdict::feedback).or_else(|| f.error.clone()))
            .unwrap_or_else(|| "no solution was produced".into());
        let prompt = fixing_prompt(&self.templates, problem, &buggy, &feedback)?;
        let mut outs = Vec::new();
        for m in self.ranked(Stage::Fix, problem, None, self.config.candidates_per_stage) {
            for _ in 0..self.config.fix_attempts_per_model {
                let mut o = match self.attempt(problem, Stage::Fix, &m, &prompt, original, sink) {
                    Ok(o) => o,
                    Err(a) => return Ok(Err(a)),
                };
                o.accepted = o.passed();
                let done = o.accepted;
                outs.push(o);
                if done {
                    return Ok(Ok(outs));
                }
            }
        }
        Ok(Ok(outs))
    }

    /// Refine `correct` against `baseline`; returns the outcomes and the index
    /// of the accepted one.
    fn refine_stage(
        &self,
        problem: &ProblemSpec,
        correct: &Solution,
        baseline: &PerformanceProfile,
        sink: &CallLedger,
    ) -> Result<Result<(Vec<StageOutcome>, Option<usize>), Abort>, OrchestratorError> {
        let metric = self.config.target_metric;
        let k = match self.config.refine_strategy {
            RefineStrategy::Top1Only => 1,
            _ => self.config.candidates_per_stage,
        };
        let report = profiler::render_overhead_report(baseline);
        let prompt = refinement_prompt(&self.templates, problem, &correct.source, &report)?;
        let mut outs: Vec<StageOutcome> = Vec::new();
        let mut best: Option<usize> = None;
        for m in self.ranked(Stage::Refine, problem, Some(metric), k) {
            let mut o = match self.attempt(problem, Stage::Refine, &m, &prompt, Some(correct), sink) {
                Ok(o) => o,
                Err(a) => return Ok(Err(a)),
            };
            if o.passed() {
                let sol = o.solution.as_ref().expect("validated outcome has a solution");
                match self.executor.measure(problem, sol, &self.config.measurement) {
                    Ok(p) => {
                        match profiler::compare(baseline, &p, metric) {
                            Ok(imp) => o.improvement = Some(imp),
                            Err(e) => o.error = Some(e.to_string()),
                        }
                        o.profile = Some(p);
                    }
                    Err(ExecError::Program(v)) => o.error = Some(format!("failed during measurement: {:?}", v.kind)),
                    Err(ExecError::Infrastructure(m)) => return Ok(Err(Abort(m))),
                }
            }
            let measurable = o.improvement.as_ref().is_some_and(|i| i.measurable);
            outs.push(o);
            if measurable {
                let idx = outs.len() - 1;
                let better = best.map_or(true, |b| {
                    outs[idx].improvement.as_ref().unwrap().improvement_pct > outs[b].improvement.as_ref().unwrap().improvement_pct
                });
                if better {
                    best = Some(idx);
                }
                if self.config.refine_strategy != RefineStrategy::BestOfN {
                    break;
                }
            }
        }
        if let Some(b) = best {
            outs[b].accepted = true;
        }
        Ok(Ok((outs, best)))
    }

    pub fn run_task(&self, problem: &ProblemSpec) -> Result<RunLog, OrchestratorError> {
        self.config.validate()?;
        if !self.memory.has_language(Stage::Generate, problem.language) {
            return Err(OrchestratorError::NoMemory(problem.language));
        }
        let sink = CallLedger::new();
        let mut log = RunLog {
            task_id: problem.task_id.clone(),
            language: problem.language,
            tags: problem.tags.clone(),
            outcomes: Vec::new(),
            final_solution: None,
            final_status: FinalStatus::Unsolved,
            baseline_profile: None,
            final_profile: None,
            target_metric: self.config.target_metric,
            ledger: Vec::new(),
            error: None,
        };
        let result = self.drive(problem, &sink, &mut log);
        log.ledger = sink.snapshot();
        match result? {
            Ok(()) => {}
            Err(Abort(m)) => {
                tracing::error!(task = %problem.task_id, error = %m, "task aborted");
                log.final_status = FinalStatus::Aborted;
                log.error = Some(m);
            }
        }
        Ok(log)
    }

    fn drive(&self, problem: &ProblemSpec, sink: &CallLedger, log: &mut RunLog) -> Result<Result<(), Abort>, OrchestratorError> {
        let gen = match self.generate_stage(problem, sink)? {
            Ok(g) => g,
            Err(a) => return Ok(Err(a)),
        };
        let mut correct = gen.iter().find(|o| o.accepted).and_then(|o| o.solution.clone());
        let first_failed = gen.first().cloned();
        log.outcomes.extend(gen);
        if correct.is_none() {
            let fixes = match self.fix_stage(problem, first_failed.as_ref(), sink)? {
                Ok(f) => f,
                Err(a) => return Ok(Err(a)),
            };
            correct = fixes.iter().find(|o| o.accepted).and_then(|o| o.solution.clone());
            log.outcomes.extend(fixes);
        }
        let Some(correct) = correct else {
            log.final_status = FinalStatus::Unsolved;
            return Ok(Ok(()));
        };
        log.final_solution = Some(correct.clone());
        log.final_status = FinalStatus::SolvedUnrefined;
        let baseline = match self.executor.measure(problem, &correct, &self.config.measurement) {
            Ok(p) => p,
            Err(ExecError::Program(v)) => return Ok(Err(Abort(format!("baseline failed during measurement: {:?}", v.kind)))),
            Err(ExecError::Infrastructure(m)) => return Ok(Err(Abort(m))),
        };
        log.baseline_profile = Some(baseline.clone());
        log.final_profile = Some(baseline.clone());
        let (outs, accepted) = match self.refine_stage(problem, &correct, &baseline, sink)? {
            Ok(r) => r,
            Err(a) => return Ok(Err(a)),
        };
        if let Some(i) = accepted {
            log.final_solution = outs[i].solution.clone();
            log.final_profile = outs[i].profile.clone();
            log.final_status = FinalStatus::SolvedRefined;
        }
        log.outcomes.extend(outs);
        Ok(Ok(()))
    }

    /// Run every problem on a bounded worker pool; results keep input order.
    pub fn run_all(&self, problems: &[ProblemSpec]) -> Result<Vec<Result<RunLog, OrchestratorError>>, OrchestratorError> {
        self.config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(self.config.workers).build().map_err(|e| OrchestratorError::Config(e.to_string()))?;
        Ok(pool.install(|| problems.par_iter().map(|p| self.run_task(p)).collect()))
    }
}

/// Append run logs to a JSON-lines file.
pub fn append_run_logs(path: &Path, logs: &[RunLog]) -> Result<(), OrchestratorError> {
    let io = |e: std::io::Error| OrchestratorError::Io(format!("{}: {e}", path.display()));
    let f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let mut w = std::io::BufWriter::new(f);
    for l in logs {
        serde_json::to_writer(&mut w, l).map_err(|e| OrchestratorError::Io(e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_run_logs(path: &Path) -> Result<Vec<RunLog>, OrchestratorError> {
    let text = std::fs::read_to_string(path).map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| OrchestratorError::Io(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}
