use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use perforch::bench::{
    apply_tags, extract_code_block, load_benchmark, load_tags, write_tags, BenchmarkFormat, CategoryTag, LanguageId, ProblemSpec, Solution, SolutionStage,
    TemplateKind, TemplateSet,
};
use perforch::gateway::{load_providers, CallLedger, ChatExchange, Gateway};
use perforch::metrics::{self, EmitFormat, Grouping, Report, ReportBody};
use perforch::orchestrator::{append_run_logs, read_run_logs, Agent, AgentConfig, ExecError, Executor, LocalExecutor, RunLog};
use perforch::profiler::{self, Metric};
use perforch::ranking::{read_records, MemorySnapshot, RankKey, RankingMemory, Stage, StudyRecord};
use perforch::sandbox::{Sandbox, ValidationSuite};
use perforch::taxonomy;

use crate::config::EngineConfig;
use crate::{AgentArgs, BenchArgs, MemoryCmd, StudyArgs, StudyCmd};

fn parse_language(s: &str) -> anyhow::Result<LanguageId> {
    s.parse::<LanguageId>().map_err(|e| anyhow!("{e}"))
}

fn parse_suite(s: &str) -> anyhow::Result<ValidationSuite> {
    match s.to_ascii_lowercase().as_str() {
        "full" => Ok(ValidationSuite::Full),
        "example" | "examples" => Ok(ValidationSuite::ExampleOnly),
        other => bail!("unknown suite {other:?} (full or example)"),
    }
}

fn load_problems(b: &BenchArgs) -> anyhow::Result<Vec<ProblemSpec>> {
    let format: BenchmarkFormat = b.format.parse()?;
    let mut problems = load_benchmark(&b.benchmark, format)?;
    if let Some(t) = &b.tags {
        let n = apply_tags(&mut problems, &load_tags(t)?);
        tracing::info!(tagged = n, "applied sidecar tags");
    }
    if let Some(l) = &b.language {
        let lang = parse_language(l)?;
        problems.retain(|p| p.language == lang);
    }
    if problems.is_empty() {
        bail!("no problems selected from {}", b.benchmark.display());
    }
    Ok(problems)
}

fn templates(cfg: &EngineConfig, extended_fixing: bool) -> anyhow::Result<TemplateSet> {
    let mut t = TemplateSet::default();
    if extended_fixing {
        t = t.with_extended_fixing();
    }
    if let Some(dir) = &cfg.templates_dir {
        let custom = TemplateSet::from_dir(dir)?;
        for kind in [TemplateKind::Generation, TemplateKind::Fixing, TemplateKind::Refinement, TemplateKind::Classification] {
            if dir.join(kind.file_name()).exists() {
                let slot = match kind {
                    TemplateKind::Generation => &mut t.generation,
                    TemplateKind::Fixing => &mut t.fixing,
                    TemplateKind::Refinement => &mut t.refinement,
                    TemplateKind::Classification => &mut t.classification,
                };
                *slot = custom.get(kind).clone();
            }
        }
    }
    Ok(t)
}

fn gateway(cfg: &EngineConfig) -> anyhow::Result<Gateway> {
    Ok(Gateway::new(load_providers(cfg.providers()?)?)?)
}

fn create(path: &Path) -> anyhow::Result<std::io::BufWriter<std::fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> anyhow::Result<()> {
    let mut w = create(path)?;
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_ledger(path: Option<&Path>, sink: &CallLedger) -> anyhow::Result<()> {
    if let Some(p) = path {
        let calls: Vec<ChatExchange> = sink.snapshot();
        write_jsonl(p, &calls)?;
    }
    Ok(())
}

fn read_solution(path: &Path, language: LanguageId) -> anyhow::Result<Solution> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let source = if text.contains("```") { extract_code_block(&text, language).source } else { text };
    Ok(Solution::new(source, "user", SolutionStage::Generate, None)?)
}

pub fn study(cfg: &EngineConfig, cmd: StudyCmd) -> anyhow::Result<ExitCode> {
    let (stage, args): (Stage, StudyArgs) = match cmd {
        StudyCmd::Generate(a) => (Stage::Generate, a),
        StudyCmd::Fix(a) => (Stage::Fix, a),
        StudyCmd::Refine(a) => (Stage::Refine, a),
    };
    let problems = load_problems(&args.bench)?;
    let gw = gateway(cfg)?;
    let models: Vec<String> = if args.models.is_empty() { gw.provider_ids().map(String::from).collect() } else { args.models.clone() };
    for m in &models {
        if gw.provider(m).is_none() {
            bail!("unknown provider {m:?}");
        }
    }
    let exec = LocalExecutor { sandbox: Sandbox::new(cfg.sandbox.clone()) };
    let config = AgentConfig {
        validation_suite: parse_suite(&args.suite)?,
        measurement: cfg.measurement.clone(),
        workers: cfg.worker_pool_size,
        ..AgentConfig::default()
    };
    let mut agent = Agent::new(&gw, &exec, Arc::new(MemorySnapshot::empty()), config);
    agent.templates = templates(cfg, false)?;
    let sink = CallLedger::new();
    tracing::info!(%stage, problems = problems.len(), models = models.len(), "study started");
    let records = match stage {
        Stage::Generate => agent.study_generate(&problems, &models, &sink),
        Stage::Fix => agent.study_fix(&problems, &models, &sink),
        Stage::Refine => agent.study_refine(&problems, &models, &sink),
    };
    write_ledger(args.ledger.as_deref(), &sink)?;
    let records = records?;
    write_jsonl(&args.out, &records)?;
    let ok = records.iter().filter(|r| r.outcome).count();
    tracing::info!(records = records.len(), succeeded = ok, out = %args.out.display(), "study finished");
    Ok(ExitCode::SUCCESS)
}

pub fn classify(cfg: &EngineConfig, bench: &BenchArgs, annotators: &[String], out: &Path, ledger: Option<&Path>) -> anyhow::Result<ExitCode> {
    let problems = load_problems(bench)?;
    let gw = gateway(cfg)?;
    let tpl = templates(cfg, false)?;
    let sink = CallLedger::new();
    let mut tags = BTreeMap::new();
    let mut failed = 0usize;
    for p in &problems {
        let votes = taxonomy::collect_votes(p, annotators, &gw, &tpl, &sink)?;
        match taxonomy::consensus(&votes) {
            Ok(c) => {
                if c.fallback_used {
                    tracing::info!(task = %p.task_id, "no two-vote tag; fell back to the most frequent voted tag");
                }
                tags.insert(p.task_id.clone(), c.tags);
            }
            Err(e) => {
                failed += 1;
                tracing::warn!(task = %p.task_id, error = %e, "classification failed");
            }
        }
    }
    write_ledger(ledger, &sink)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_tags(out, &tags).with_context(|| format!("writing {}", out.display()))?;
    tracing::info!(tagged = tags.len(), failed, out = %out.display(), "classification finished");
    Ok(ExitCode::SUCCESS)
}

fn record_files(paths: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            if found.is_empty() {
                bail!("{} has no .jsonl record files", p.display());
            }
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn open_memory(dir: &Path) -> anyhow::Result<RankingMemory> {
    if dir.join("manifest.json").exists() {
        Ok(RankingMemory::load(dir)?)
    } else {
        Ok(RankingMemory::new())
    }
}

pub fn memory(cfg: &EngineConfig, cmd: MemoryCmd) -> anyhow::Result<ExitCode> {
    let dir = cfg.memory()?;
    match cmd {
        MemoryCmd::Build { from_study } => {
            let mut records: Vec<StudyRecord> = Vec::new();
            for f in record_files(&from_study)? {
                records.extend(read_records(&f)?);
            }
            let mut mem = open_memory(dir)?;
            let snap = mem.ingest(&records)?;
            mem.save(dir)?;
            println!("version {} hash {} records {}", snap.version, snap.content_hash, snap.records().len());
        }
        MemoryCmd::Register { model, records } => {
            let mut mem = open_memory(dir)?;
            let snap = mem.register_model(&model, &read_records(&records)?)?;
            mem.save(dir)?;
            println!("version {} hash {} records {}", snap.version, snap.content_hash, snap.records().len());
        }
        MemoryCmd::Show { stage, language, metric, tag, top } => {
            let mem = RankingMemory::load(dir)?;
            let stage: Stage = stage.parse().map_err(|e: String| anyhow!(e))?;
            let language = parse_language(&language)?;
            let metric = metric.map(|m| m.parse::<Metric>().map_err(|e| anyhow!(e))).transpose()?;
            let tag = tag.map(|t| CategoryTag::parse_loose(&t).ok_or_else(|| anyhow!("unknown tag {t:?}"))).transpose()?;
            let key = RankKey::new(stage, language, tag, metric)?;
            let snap = mem.current();
            let entries = snap.entries(&key);
            if entries.is_empty() {
                bail!("no ranking for {key:?}");
            }
            println!("rank\tmodel\tscore\tsupport");
            for (i, e) in entries.iter().take(top.unwrap_or(usize::MAX)).enumerate() {
                println!("{}\t{}\t{:.4}\t{}", i + 1, e.model_id, e.score, e.support);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn agent_run(cfg: &EngineConfig, a: &AgentArgs) -> anyhow::Result<ExitCode> {
    let problems = load_problems(&a.bench)?;
    let mem = RankingMemory::load(cfg.memory()?)?;
    let gw = gateway(cfg)?;
    let exec = LocalExecutor { sandbox: Sandbox::new(cfg.sandbox.clone()) };
    let config = AgentConfig {
        candidates_per_stage: a.candidates,
        target_metric: a.metric.parse().map_err(|e: String| anyhow!(e))?,
        refine_strategy: a.strategy.parse().map_err(|e: String| anyhow!(e))?,
        validation_suite: parse_suite(&a.suite)?,
        fix_with_feedback: a.fix_with_feedback,
        measurement: cfg.measurement.clone(),
        workers: cfg.worker_pool_size,
        ..AgentConfig::default()
    };
    let mut agent = Agent::new(&gw, &exec, mem.current(), config);
    agent.templates = templates(cfg, a.fix_with_feedback)?;
    tracing::info!(problems = problems.len(), "agent started");
    let results = agent.run_all(&problems)?;
    let mut logs: Vec<RunLog> = Vec::new();
    let mut failed = 0usize;
    for (p, r) in problems.iter().zip(results) {
        match r {
            Ok(l) => {
                tracing::info!(task = %l.task_id, status = ?l.final_status, "task finished");
                logs.push(l);
            }
            Err(e) => {
                failed += 1;
                tracing::error!(task = %p.task_id, error = %e, "task not run");
            }
        }
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    append_run_logs(&a.out, &logs)?;
    let solved = logs.iter().filter(|l| l.solved()).count();
    tracing::info!(solved, total = problems.len(), out = %a.out.display(), "agent finished");
    if failed > 0 {
        bail!("{failed} task(s) could not be run");
    }
    Ok(ExitCode::SUCCESS)
}

fn find<'a>(problems: &'a [ProblemSpec], id: &str) -> anyhow::Result<&'a ProblemSpec> {
    problems.iter().find(|p| p.task_id == id).ok_or_else(|| anyhow!("no problem {id:?} in benchmark"))
}

fn solution_for(problem: &ProblemSpec, file: Option<&Path>) -> anyhow::Result<Solution> {
    match file {
        Some(f) => read_solution(f, problem.language),
        None => Solution::canonical(problem).ok_or_else(|| anyhow!("{} has no canonical solution", problem.task_id)),
    }
}

pub fn profile(cfg: &EngineConfig, bench: &BenchArgs, id: &str, solution: Option<&Path>, out: Option<&Path>) -> anyhow::Result<ExitCode> {
    let problems = load_problems(bench)?;
    let problem = find(&problems, id)?;
    let sol = solution_for(problem, solution)?;
    let exec = LocalExecutor { sandbox: Sandbox::new(cfg.sandbox.clone()) };
    let p = match exec.measure(problem, &sol, &cfg.measurement) {
        Ok(p) => p,
        Err(ExecError::Program(v)) => bail!("program failed during measurement: {:?}\n{}", v.kind, v.feedback()),
        Err(e) => return Err(e.into()),
    };
    eprint!("{}", profiler::render_overhead_report(&p));
    let json = serde_json::to_string_pretty(&p)? + "\n";
    match out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(json.as_bytes())?;
            w.flush()?;
        }
        None => print!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(serde::Serialize)]
struct JudgeLine<'a> {
    task_id: &'a str,
    verdict: String,
    duration_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    feedback: Option<String>,
}

pub fn judge(cfg: &EngineConfig, bench: &BenchArgs, id: Option<&str>, solution: Option<&Path>, suite: &str, out: Option<&Path>) -> anyhow::Result<ExitCode> {
    let problems = load_problems(bench)?;
    let suite = parse_suite(suite)?;
    let selected: Vec<&ProblemSpec> = match id {
        Some(id) => vec![find(&problems, id)?],
        None if solution.is_some() => bail!("--solution needs --problem"),
        None => problems.iter().collect(),
    };
    let sandbox = Sandbox::new(cfg.sandbox.clone());
    let mut lines = Vec::new();
    let mut passed = 0usize;
    for p in &selected {
        let sol = solution_for(p, solution)?;
        let v = sandbox.judge(p, &sol, suite)?;
        if v.passed() {
            passed += 1;
        } else {
            tracing::warn!(task = %p.task_id, kind = ?v.kind, "not passed");
        }
        lines.push(serde_json::to_string(&JudgeLine {
            task_id: &p.task_id,
            verdict: format!("{:?}", v.kind),
            duration_ms: v.duration_ms,
            feedback: (!v.passed()).then(|| v.feedback()),
        })?);
    }
    let text = lines.join("\n") + "\n";
    match out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => print!("{text}"),
    }
    tracing::info!(passed, total = selected.len(), "judging finished");
    Ok(if passed == selected.len() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

enum ReportMetric {
    PassAt1,
    FixAt1,
    Perf(Metric),
}

pub fn report(runs: Option<&Path>, records: Option<&Path>, metric: &str, formats: &[String], out_dir: &Path) -> anyhow::Result<ExitCode> {
    if runs.is_none() && records.is_none() {
        bail!("report needs --runs and/or --records");
    }
    let kind = match metric.to_ascii_lowercase().replace('@', "_at_").as_str() {
        "pass_at_1" | "pass1" => ReportMetric::PassAt1,
        "fix_at_1" | "fix1" => ReportMetric::FixAt1,
        other => ReportMetric::Perf(other.parse().map_err(|e: String| anyhow!(e))?),
    };
    let formats: Vec<EmitFormat> = formats.iter().map(|f| f.parse().map_err(|e: String| anyhow!(e))).collect::<anyhow::Result<_>>()?;
    let logs = runs.map(read_run_logs).transpose()?.unwrap_or_default();
    let recs = records.map(read_records).transpose()?.unwrap_or_default();
    let mut languages: Vec<LanguageId> = logs.iter().map(|l| l.language).chain(recs.iter().map(|r| r.language)).collect();
    languages.sort();
    languages.dedup();
    let name = match kind {
        ReportMetric::PassAt1 => "pass_at_1".to_string(),
        ReportMetric::FixAt1 => "fix_at_1".to_string(),
        ReportMetric::Perf(m) => m.as_str().to_string(),
    };
    let mut written = 0usize;
    for lang in languages {
        let logs: Vec<RunLog> = logs.iter().filter(|l| l.language == lang).cloned().collect();
        let recs: Vec<StudyRecord> = recs.iter().filter(|r| r.language == lang).cloned().collect();
        let (table, groups) = match kind {
            ReportMetric::PassAt1 => {
                let mut rows = metrics::pass_at_1(&recs, Grouping::Language);
                rows.extend(metrics::agent_pass_at_1(&logs, Grouping::Language));
                (ReportBody::Rows(rows), None)
            }
            ReportMetric::FixAt1 => (ReportBody::Rows(metrics::fix_at_1(&recs, Grouping::Language)), None),
            ReportMetric::Perf(m) => {
                let mut s = metrics::record_improvement_summary(&recs, m);
                s.extend(metrics::improvement_summary(&logs, m));
                (ReportBody::Summaries(s), Some(ReportBody::Groups(metrics::improvement_groups(&recs, &logs, m))))
            }
        };
        for &f in &formats {
            let body = match f {
                EmitFormat::Csv | EmitFormat::Json => table.clone(),
                EmitFormat::BoxplotData | EmitFormat::Svg => groups.clone().ok_or_else(|| anyhow!("{f:?} output needs a performance metric"))?,
            };
            let report = Report { metric: name.clone(), language: lang.as_str().to_string(), body };
            match metrics::emit(&report, &[f], out_dir) {
                Ok(e) => {
                    for w in &e.warnings {
                        tracing::warn!(language = lang.as_str(), "{w}");
                    }
                    for p in &e.files {
                        tracing::info!(file = %p.display(), "written");
                    }
                    written += e.files.len();
                }
                Err(metrics::ReportError::Empty) => tracing::warn!(language = lang.as_str(), format = ?f, "nothing to report"),
                Err(e) => return Err(e.into()),
            }
        }
    }
    if written == 0 {
        bail!("no report files written");
    }
    Ok(ExitCode::SUCCESS)
}

pub fn env_check() -> anyhow::Result<ExitCode> {
    let warnings = profiler::env_check();
    if warnings.is_empty() {
        println!("ok: host settings look stable for measurement");
    }
    for w in warnings {
        println!("warning: {w}");
    }
    Ok(ExitCode::SUCCESS)
}
