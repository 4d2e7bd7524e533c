//! Study loops that produce the records the ranking memory is built from.
//!
//! generate: prompt, then validate. fix: hand the model the buggy program,
//! then validate its repair. refine: start from the canonical solution,
//! refine, validate, measure and compare against the canonical baseline.

use rayon::prelude::*;

use crate::bench::{ProblemSpec, Solution, SolutionStage};
use crate::gateway::CallLedger;
use crate::orchestrator::{fixing_prompt, generation_prompt, refinement_prompt, Agent, ExecError, OrchestratorError};
use crate::profiler::{self, Metric};
use crate::ranking::{Stage, StudyRecord};
use crate::sandbox::assemble::{defines_function, entry_name};

/// Source as a complete program: bodies given as continuations get the
/// prompt prepended.
pub fn full_source(problem: &ProblemSpec, body: &str) -> String {
    let complete = entry_name(problem).is_some_and(|n| defines_function(body, &n, problem.language));
    if complete {
        body.to_string()
    } else {
        format!("{}{}", problem.prompt, body)
    }
}

fn record(model: &str, problem: &ProblemSpec, stage: Stage, outcome: bool) -> StudyRecord {
    StudyRecord::new(model, &problem.task_id, problem.language, stage, outcome).with_tags(problem.tags.iter().copied())
}

impl Agent<'_> {
    fn per_problem<F>(&self, problems: &[ProblemSpec], f: F) -> Result<Vec<StudyRecord>, OrchestratorError>
    where
        F: Fn(&ProblemSpec) -> Result<Vec<StudyRecord>, OrchestratorError> + Sync,
    {
        self.config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(self.config.workers).build().map_err(|e| OrchestratorError::Config(e.to_string()))?;
        let chunks: Vec<Result<Vec<StudyRecord>, OrchestratorError>> = pool.install(|| problems.par_iter().map(&f).collect());
        let mut out = Vec::new();
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// One record per (model, problem): did the first generated program pass.
    pub fn study_generate(&self, problems: &[ProblemSpec], models: &[String], sink: &CallLedger) -> Result<Vec<StudyRecord>, OrchestratorError> {
        self.per_problem(problems, |p| {
            let prompt = generation_prompt(&self.templates, p)?;
            models
                .iter()
                .map(|m| {
                    let o = self.attempt(p, Stage::Generate, m, &prompt, None, sink).map_err(|a| OrchestratorError::Infrastructure(a.0))?;
                    Ok(record(m, p, Stage::Generate, o.verdict.as_ref().is_some_and(|v| v.passed())))
                })
                .collect()
        })
    }

    /// One record per (model, problem) for problems that ship a buggy solution.
    pub fn study_fix(&self, problems: &[ProblemSpec], models: &[String], sink: &CallLedger) -> Result<Vec<StudyRecord>, OrchestratorError> {
        self.per_problem(problems, |p| {
            let Some(buggy) = p.buggy_solution.as_deref() else {
                tracing::warn!(task = %p.task_id, "no buggy solution; skipped");
                return Ok(Vec::new());
            };
            let buggy = full_source(p, buggy);
            let parent = Solution::new(buggy.clone(), "buggy", SolutionStage::Generate, None).ok();
            let feedback = match parent.as_ref().map(|s| self.executor.validate(p, s, self.config.validation_suite)) {
                Some(Ok(v)) => v.feedback(),
                Some(Err(ExecError::Program(v))) => v.feedback(),
                Some(Err(ExecError::Infrastructure(m))) => return Err(OrchestratorError::Infrastructure(m)),
                None => String::new(),
            };
            let prompt = fixing_prompt(&self.templates, p, &buggy, &feedback)?;
            models
                .iter()
                .map(|m| {
                    let o = self.attempt(p, Stage::Fix, m, &prompt, parent.as_ref(), sink).map_err(|a| OrchestratorError::Infrastructure(a.0))?;
                    Ok(record(m, p, Stage::Fix, o.verdict.as_ref().is_some_and(|v| v.passed())))
                })
                .collect()
        })
    }

    /// One record per (model, problem) seeded from the canonical solution.
    /// Improvements are stored for every metric; unmeasurable ones as 0.
    pub fn study_refine(&self, problems: &[ProblemSpec], models: &[String], sink: &CallLedger) -> Result<Vec<StudyRecord>, OrchestratorError> {
        self.per_problem(problems, |p| {
            let Some(canonical) = Solution::canonical(p) else {
                tracing::warn!(task = %p.task_id, "no canonical solution; skipped");
                return Ok(Vec::new());
            };
            let baseline = match self.executor.measure(p, &canonical, &self.config.measurement) {
                Ok(b) => b,
                Err(ExecError::Program(v)) => {
                    tracing::warn!(task = %p.task_id, kind = ?v.kind, "canonical solution failed; skipped");
                    return Ok(Vec::new());
                }
                Err(ExecError::Infrastructure(m)) => return Err(OrchestratorError::Infrastructure(m)),
            };
            let report = profiler::render_overhead_report(&baseline);
            let prompt = refinement_prompt(&self.templates, p, &full_source(p, &canonical.source), &report)?;
            let mut out = Vec::new();
            for m in models {
                let o = self.attempt(p, Stage::Refine, m, &prompt, Some(&canonical), sink).map_err(|a| OrchestratorError::Infrastructure(a.0))?;
                let (Some(sol), true) = (o.solution.as_ref(), o.verdict.as_ref().is_some_and(|v| v.passed())) else {
                    out.push(record(m, p, Stage::Refine, false));
                    continue;
                };
                let after = match self.executor.measure(p, sol, &self.config.measurement) {
                    Ok(a) => a,
                    Err(ExecError::Program(_)) => {
                        out.push(record(m, p, Stage::Refine, false));
                        continue;
                    }
                    Err(ExecError::Infrastructure(e)) => return Err(OrchestratorError::Infrastructure(e)),
                };
                let r = Metric::ALL.into_iter().fold(record(m, p, Stage::Refine, true), |r, metric| {
                    let v = profiler::compare(&baseline, &after, metric).ok().filter(|i| i.measurable).map_or(0.0, |i| i.improvement_pct);
                    r.with_improvement(metric, v)
                });
                out.push(r);
            }
            Ok(out)
        })
    }
}
