//! Scripted agent scenarios: mock providers answer with directive text that
//! the scripted executor turns into verdicts and timings.

use std::sync::Arc;

use perforch::bench::{CategoryTag, LanguageId, ProblemSpec};
use perforch::gateway::{Gateway, MockScript, ProviderSpec};
use perforch::orchestrator::{Agent, AgentConfig, RefineStrategy, RunLog, ScriptedExecutor};
use perforch::profiler::Metric;
use perforch::ranking::{MemorySnapshot, RankingMemory, Stage, StudyRecord};

pub const BASE_MS: f64 = 100.0;

pub fn fenced(body: &str) -> String {
    format!("Here you go:\n```python\n{body}\n```\n")
}

pub fn marker(i: usize) -> String {
    format!("TASK{i:04}")
}

pub fn problem(i: usize) -> ProblemSpec {
    ProblemSpec {
        tags: [CategoryTag::Array].into(),
        ..ProblemSpec::new(
            format!("Python/{i}"),
            LanguageId::Python,
            format!("def f(xs):\n    \"\"\"{}\"\"\"\n", marker(i)),
            "def check(candidate):\n    assert candidate([1]) == 1\n\ncheck(f)\n",
        )
    }
}

/// Memory ranking each list in the given order for Python/Array.
pub fn memory(gen: &[&str], fix: &[&str], refine: &[&str]) -> Arc<MemorySnapshot> {
    let mut rs = Vec::new();
    let rate_records = |stage: Stage, models: &[&str], rs: &mut Vec<StudyRecord>| {
        for (rank, m) in models.iter().enumerate() {
            for k in 0..10 {
                let ok = k < 10 - rank.min(9);
                rs.push(StudyRecord::new(*m, format!("seed/{k}"), LanguageId::Python, stage, ok).with_tags([CategoryTag::Array]));
            }
        }
    };
    rate_records(Stage::Generate, gen, &mut rs);
    rate_records(Stage::Fix, fix, &mut rs);
    for (rank, m) in refine.iter().enumerate() {
        rs.push(
            StudyRecord::new(*m, "seed/0", LanguageId::Python, Stage::Refine, true)
                .with_tags([CategoryTag::Array])
                .with_improvement(Metric::ExecutionTime, 90.0 - 10.0 * rank as f64),
        );
    }
    RankingMemory::new().ingest(&rs).unwrap()
}

/// A refine candidate: `None` is broken, `Some(pct)` runs `pct`% faster than the baseline.
pub fn candidate_text(c: Option<f64>) -> String {
    match c {
        None => fenced("# verdict=wa"),
        Some(p) => fenced(&format!("# verdict=pass time_ms={}", BASE_MS * (1.0 - p / 100.0))),
    }
}

pub struct RefineRun {
    pub log: RunLog,
    pub accepted: Option<usize>,
}

/// Generation passes at `BASE_MS`; refine candidate i answers `cands[i]`.
pub fn refine_scenario(cands: &[Option<f64>], strategy: RefineStrategy) -> RefineRun {
    let refiners: Vec<String> = (0..cands.len()).map(|i| format!("r{i}")).collect();
    let mut providers = vec![ProviderSpec::mock("gen", MockScript::new(fenced(&format!("# verdict=pass time_ms={BASE_MS}"))))];
    for (id, c) in refiners.iter().zip(cands) {
        providers.push(ProviderSpec::mock(id.clone(), MockScript::new(candidate_text(*c))));
    }
    let gw = Gateway::new(providers).unwrap();
    let ids: Vec<&str> = refiners.iter().map(String::as_str).collect();
    let mem = memory(&["gen"], &[], &ids);
    let exec = ScriptedExecutor::default();
    let cfg = AgentConfig { refine_strategy: strategy, candidates_per_stage: cands.len().max(1), ..AgentConfig::default() };
    let agent = Agent::new(&gw, &exec, mem, cfg);
    let log = agent.run_task(&problem(0)).unwrap();
    let refines: Vec<_> = log.outcomes.iter().filter(|o| o.stage == Stage::Refine).collect();
    let accepted = refines.iter().position(|o| o.accepted);
    RefineRun { log, accepted }
}

pub struct FlowResult {
    pub logs: Vec<RunLog>,
    pub generate_calls: usize,
    pub fix_calls: usize,
}

/// `n` problems; generation passes on the first `gen_ok`; fix model #2
/// repairs the next `fixed_by_second`; fix model #1 never succeeds.
pub fn flow_scenario(n: usize, gen_ok: usize, fixed_by_second: usize) -> FlowResult {
    let mut gen = MockScript::new(fenced("# verdict=wa"));
    let mut fix_b = MockScript::new(fenced("# verdict=wa"));
    for i in 0..n {
        if i < gen_ok {
            gen = gen.on_substring(marker(i), fenced(&format!("# {} verdict=pass", marker(i))));
        } else {
            gen = gen.on_substring(marker(i), fenced(&format!("# {} verdict=wa", marker(i))));
            if i < gen_ok + fixed_by_second {
                fix_b = fix_b.on_substring(marker(i), fenced("# verdict=pass"));
            }
        }
    }
    let gw = Gateway::new(vec![
        ProviderSpec::mock("gen", gen),
        ProviderSpec::mock("fix-a", MockScript::new(fenced("# verdict=re"))),
        ProviderSpec::mock("fix-b", fix_b),
    ])
    .unwrap();
    let mem = memory(&["gen"], &["fix-a", "fix-b"], &[]);
    let exec = ScriptedExecutor::default();
    let agent = Agent::new(&gw, &exec, mem, AgentConfig::default());
    let problems: Vec<ProblemSpec> = (0..n).map(problem).collect();
    let logs: Vec<RunLog> = problems.iter().map(|p| agent.run_task(p).unwrap()).collect();
    let generate_calls = logs.iter().map(|l| l.calls(perforch::gateway::Purpose::Generate)).sum();
    let fix_calls = logs.iter().map(|l| l.calls(perforch::gateway::Purpose::Fix)).sum();
    FlowResult { logs, generate_calls, fix_calls }
}
