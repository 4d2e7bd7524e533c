//! Acceptance suite: one PASS/FAIL/SKIP line per criterion. Exits non-zero
//! when a gating criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::calib::{self, ALLOC, BUSY};
use common::scenario::{flow_scenario, problem, refine_scenario, BASE_MS};
use perforch::bench::{load_benchmark, BenchmarkFormat, CategoryTag, LanguageId, Solution};
use perforch::gateway::Purpose;
use perforch::metrics::{self, Grouping};
use perforch::orchestrator::{AgentConfig, Executor, FinalStatus, RefineStrategy, ScriptedExecutor};
use perforch::profiler::{self, measure, MeasurementConfig, MeasurementGuard, Metric};
use perforch::ranking::{rank_order, weighted_score, MemorySnapshot, RankKey, RankingMemory, Stage, StudyRecord};
use perforch::sandbox::{Sandbox, SandboxConfig, ValidationSuite};
use perforch::taxonomy::{consensus, TagVote};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

const SEED: u64 = 0x5eed_2024;
const FLOW_BUDGET: Duration = Duration::from_secs(60);
const SEQ_SCENARIOS: usize = 100;
const ROLLBACK_SCENARIOS: usize = 500;
const METRIC_CASES: usize = 1000;
const RANKING_CASES: usize = 300;
const CONSENSUS_CASES: usize = 1000;
const SCORE_TOL: f64 = 1e-9;
const TIMING_TOL: f64 = 0.20;
const CPU_RANGE: (f64, f64) = (0.9, 1.1);
const ALLOC_FLOOR_KIB: f64 = 102_400.0;
const CALIBRATION_BUDGET: Duration = Duration::from_secs(120);
const HUMANEVAL_PROBLEMS: usize = 164;
const E2E_BUDGET: Duration = Duration::from_secs(30 * 60);

#[derive(PartialEq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Verdict {
    status: Status,
    gating: bool,
    detail: String,
}

impl Verdict {
    fn pass(detail: impl Into<String>) -> Self {
        Self { status: Status::Pass, gating: true, detail: detail.into() }
    }
}

type Check = Result<Verdict, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Rounded percentage in hundredths, half up, from integer counts.
fn pct_oracle(count: u64, total: u64) -> String {
    let h = (count * 20_000 + total) / (2 * total);
    format!("{}.{:02}", h / 100, h % 100)
}

fn flow_analytics() -> Check {
    let t = Instant::now();
    let (n, gen_ok, fixed) = (50, 30, 10);
    let r = flow_scenario(n, gen_ok, fixed);
    let elapsed = t.elapsed();
    let rows = metrics::agent_pass_at_1(&r.logs, Grouping::Language);
    ensure(rows.len() == 1, || format!("{} rows", rows.len()))?;
    let got = format!("{:.2}", rows[0].value);
    let want = pct_oracle((gen_ok + fixed) as u64, n as u64);
    ensure(got == want && want == "80.00", || format!("pass@1 {got}, oracle {want}"))?;
    // every failing problem asks fix model #1 and then fix model #2
    let (want_gen, want_fix) = (n, 2 * (n - gen_ok));
    ensure(r.generate_calls == want_gen && r.fix_calls == want_fix, || {
        format!("calls generate {} fix {}, expected {want_gen} / {want_fix}", r.generate_calls, r.fix_calls)
    })?;
    ensure(elapsed < FLOW_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(Verdict::pass(format!("pass@1 {got}%, generate {} + fix {} calls, {elapsed:.2?}", r.generate_calls, r.fix_calls)))
}

fn random_candidates(rng: &mut StdRng) -> Vec<Option<f64>> {
    let n = rng.gen_range(1..=5);
    (0..n)
        .map(|_| match rng.gen_range(0..4) {
            0 => None,
            _ => Some(rng.gen_range(-10..=40) as f64),
        })
        .collect()
}

fn sequential_semantics() -> Check {
    let ens = [None, Some(8.0), Some(20.0), Some(1.0), None];
    let calls = |s| {
        let r = refine_scenario(&ens, s);
        (r.accepted, r.log.calls(Purpose::Refine))
    };
    let seq = calls(RefineStrategy::SequentialAcceptance);
    let best = calls(RefineStrategy::BestOfN);
    let top1 = calls(RefineStrategy::Top1Only);
    ensure(seq == (Some(1), 2), || format!("sequential accepted {:?} after {} calls", seq.0, seq.1))?;
    ensure(best == (Some(2), 5), || format!("best-of-n accepted {:?} after {} calls", best.0, best.1))?;
    ensure(top1.0.is_none(), || format!("top-1 accepted {:?}", top1.0))?;

    let mut rng = StdRng::seed_from_u64(SEED);
    for i in 0..SEQ_SCENARIOS {
        let c = random_candidates(&mut rng);
        let n = |s| refine_scenario(&c, s).log.calls(Purpose::Refine);
        let (a, b, d) = (n(RefineStrategy::Top1Only), n(RefineStrategy::SequentialAcceptance), n(RefineStrategy::BestOfN));
        ensure(a <= b && b <= d, || format!("scenario {i} {c:?}: calls top1 {a}, seq {b}, best {d}"))?;
    }
    Ok(Verdict::pass(format!("seq cand 2 / 2 calls, best cand 3 / 5 calls, top1 none; ordering held on {SEQ_SCENARIOS} scenarios")))
}

fn measurable_oracle(before: f64, after: f64, cfg: &MeasurementConfig) -> bool {
    let gain = before - after;
    gain > 0.0 && gain * 100.0 / before >= cfg.improvement_epsilon_relative * 100.0 && gain >= cfg.epsilon_time_ms
}

fn expected_accept(c: &[Option<f64>], s: RefineStrategy, cfg: &MeasurementConfig) -> Option<usize> {
    let ok: Vec<(usize, f64)> = c
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|p| (i, p)))
        .filter(|(_, p)| measurable_oracle(BASE_MS, BASE_MS * (1.0 - p / 100.0), cfg))
        .collect();
    match s {
        RefineStrategy::Top1Only => ok.first().filter(|(i, _)| *i == 0).map(|(i, _)| *i),
        RefineStrategy::SequentialAcceptance => ok.first().map(|(i, _)| *i),
        RefineStrategy::BestOfN => ok.iter().fold(None::<(usize, f64)>, |b, &(i, p)| if b.map_or(true, |(_, bp)| p > bp) { Some((i, p)) } else { b }).map(|(i, _)| i),
    }
}

fn rollback_safety() -> Check {
    let cfg = AgentConfig::default().measurement;
    let exec = ScriptedExecutor::default();
    let prob = problem(0);
    let strategies = [RefineStrategy::SequentialAcceptance, RefineStrategy::Top1Only, RefineStrategy::BestOfN];
    let mut rng = StdRng::seed_from_u64(SEED ^ 1);
    let (mut refined, mut rolled_back) = (0, 0);
    for i in 0..ROLLBACK_SCENARIOS {
        let c: Vec<Option<f64>> = if i % 5 == 0 { vec![None; rng.gen_range(1..=5)] } else { random_candidates(&mut rng) };
        let s = strategies[i % 3];
        let r = refine_scenario(&c, s);
        let fin = r.log.final_solution.as_ref().ok_or_else(|| format!("scenario {i}: no final solution"))?;
        let v = exec.validate(&prob, fin, ValidationSuite::Full).map_err(|e| e.to_string())?;
        ensure(v.passed(), || format!("scenario {i} {c:?}: final solution {:?}", v.kind))?;
        ensure(r.accepted == expected_accept(&c, s, &cfg), || format!("scenario {i} {c:?} {s:?}: accepted {:?}", r.accepted))?;
        match r.log.final_status {
            FinalStatus::SolvedRefined => {
                refined += 1;
                let (b, f) = (r.log.baseline_profile.as_ref().unwrap(), r.log.final_profile.as_ref().unwrap());
                ensure(measurable_oracle(b.execution_time_ms, f.execution_time_ms, &cfg), || {
                    format!("scenario {i}: refined {} -> {} ms is not measurable", b.execution_time_ms, f.execution_time_ms)
                })?;
            }
            FinalStatus::SolvedUnrefined => {
                rolled_back += 1;
                let generated = r.log.outcomes.iter().find(|o| o.stage == Stage::Generate && o.accepted).and_then(|o| o.solution.as_ref());
                ensure(generated == Some(fin), || format!("scenario {i}: rollback did not keep the generated solution"))?;
            }
            other => return Err(format!("scenario {i}: status {other:?}")),
        }
    }
    Ok(Verdict::pass(format!("{ROLLBACK_SCENARIOS} scenarios: {refined} refined, {rolled_back} rolled back, all finals pass")))
}

const LANGS: [LanguageId; 2] = [LanguageId::Python, LanguageId::Rust];
const TAGS: [CategoryTag; 3] = [CategoryTag::Array, CategoryTag::Math, CategoryTag::String];
const METRICS: [Metric; 2] = [Metric::ExecutionTime, Metric::MaxMemory];

fn random_records(rng: &mut StdRng) -> Vec<StudyRecord> {
    let models: Vec<String> = (0..rng.gen_range(1..=4)).map(|m| format!("m{m}")).collect();
    let tasks = rng.gen_range(1..=12);
    let mut out = Vec::new();
    for lang in LANGS {
        for t in 0..tasks {
            let tags: Vec<CategoryTag> = TAGS.iter().copied().filter(|_| rng.gen_bool(0.4)).collect();
            for m in &models {
                for stage in [Stage::Generate, Stage::Fix, Stage::Refine] {
                    if !rng.gen_bool(0.8) {
                        continue;
                    }
                    let mut r = StudyRecord::new(m.clone(), format!("{}/{t}", lang.as_str()), lang, stage, rng.gen_bool(0.6)).with_tags(tags.clone());
                    if stage == Stage::Refine && r.outcome {
                        for metric in METRICS {
                            if rng.gen_bool(0.9) {
                                r = r.with_improvement(metric, (rng.gen_range(-2000..15000) as f64) / 100.0);
                            }
                        }
                    }
                    out.push(r);
                }
            }
        }
    }
    out
}

fn rate_oracle(records: &[StudyRecord], stage: Stage) -> BTreeMap<(String, LanguageId), (u64, u64)> {
    let mut m = BTreeMap::new();
    for r in records.iter().filter(|r| r.stage == stage) {
        let e = m.entry((r.model_id.clone(), r.language)).or_insert((0, 0));
        e.0 += r.outcome as u64;
        e.1 += 1;
    }
    m
}

fn weighted_oracle(records: &[StudyRecord], model: &str, lang: LanguageId, tag: Option<CategoryTag>, metric: Metric) -> f64 {
    let mut s = 0.0;
    for r in records {
        if r.model_id != model || r.stage != Stage::Refine || r.language != lang || !tag.map_or(true, |t| r.tags.contains(&t)) || !r.outcome {
            continue;
        }
        let p = r.improvement_pct.get(&metric).copied().unwrap_or(0.0);
        s += if p <= 0.0 {
            0.0
        } else if p >= 100.0 {
            1.0
        } else {
            p / 100.0
        };
    }
    s
}

fn median_oracle(v: &mut [f64]) -> Option<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(v[n / 2]),
        _ => Some((v[n / 2 - 1] + v[n / 2]) / 2.0),
    }
}

fn check_metric_set(records: &[StudyRecord]) -> Result<(), String> {
    for (stage, rows) in [(Stage::Generate, metrics::pass_at_1(records, Grouping::Language)), (Stage::Fix, metrics::fix_at_1(records, Grouping::Language))] {
        let want = rate_oracle(records, stage);
        ensure(rows.len() == want.len(), || format!("{stage}: {} rows, oracle {}", rows.len(), want.len()))?;
        for row in rows {
            let (c, n) = want[&(row.subject.clone(), row.language)];
            ensure((row.count, row.support) == (c, n) && format!("{:.2}", row.value) == pct_oracle(c, n), || {
                format!("{stage} {} {}: {:.2} ({}/{}), oracle {} ({c}/{n})", row.subject, row.language.as_str(), row.value, row.count, row.support, pct_oracle(c, n))
            })?;
        }
    }

    let snap = RankingMemory::new().ingest(records).map_err(|e| e.to_string())?;
    let models: BTreeSet<&str> = records.iter().map(|r| r.model_id.as_str()).collect();
    for lang in LANGS {
        for tag in std::iter::once(None).chain(TAGS.map(Some)) {
            for metric in METRICS {
                let key = RankKey::new(Stage::Refine, lang, tag, Some(metric)).unwrap();
                for m in &models {
                    let want = weighted_oracle(records, m, lang, tag, metric);
                    let got = weighted_score(m, &key, records).map_err(|e| e.to_string())?;
                    ensure((got - want).abs() <= SCORE_TOL, || format!("weighted {m} {key:?}: {got} vs {want}"))?;
                    if let Some(e) = snap.entries(&key).iter().find(|e| e.model_id == *m) {
                        ensure((e.score - want).abs() <= SCORE_TOL, || format!("memory {m} {key:?}: {} vs {want}", e.score))?;
                    }
                }
            }
        }
    }

    for metric in METRICS {
        for s in metrics::record_improvement_summary(records, metric) {
            let mut improved = Vec::new();
            let (mut attempted, mut regressed) = (0, 0);
            for r in records.iter().filter(|r| r.stage == Stage::Refine && r.model_id == s.subject && r.language == s.language) {
                attempted += 1;
                if let (true, Some(p)) = (r.outcome, r.improvement_pct.get(&metric)) {
                    if *p > 0.0 {
                        improved.push(*p);
                    } else if *p < 0.0 {
                        regressed += 1;
                    }
                }
            }
            let min = improved.iter().cloned().reduce(f64::min);
            let max = improved.iter().cloned().reduce(f64::max);
            let n_imp = improved.len();
            let med = median_oracle(&mut improved);
            let got = (s.refined_attempted, s.improved_count, s.regressed_count, s.unimproved_count, s.median_improvement_pct, s.min_pct, s.max_pct);
            let want = (attempted, n_imp, regressed, attempted - n_imp - regressed, med, min, max);
            ensure(got == want, || format!("summary {} {}: {got:?} vs {want:?}", s.subject, metric))?;
        }
    }
    Ok(())
}

fn metric_oracles() -> Check {
    let gen = |n: u64, ok: u64, stage| -> Vec<StudyRecord> { (0..n).map(|i| StudyRecord::new("m", format!("Python/{i}"), LanguageId::Python, stage, i < ok)).collect() };
    let p = format!("{:.2}", metrics::pass_at_1(&gen(164, 153, Stage::Generate), Grouping::Language)[0].value);
    let f = format!("{:.2}", metrics::fix_at_1(&gen(164, 160, Stage::Fix), Grouping::Language)[0].value);
    ensure(p == "93.29" && f == "97.56", || format!("153/164 -> {p}, 160/164 -> {f}"))?;
    let mut rng = StdRng::seed_from_u64(SEED ^ 2);
    for case in 0..METRIC_CASES {
        let recs = random_records(&mut rng);
        check_metric_set(&recs).map_err(|e| format!("case {case}: {e}"))?;
    }
    Ok(Verdict::pass(format!("153/164 -> {p}%, 160/164 -> {f}%; {METRIC_CASES} random record sets match brute force")))
}

fn ranking_properties() -> Check {
    let rec = |m: &str, t: &str, tag, pct| {
        StudyRecord::new(m, t, LanguageId::Python, Stage::Refine, true).with_tags([tag]).with_improvement(Metric::ExecutionTime, pct)
    };
    let hand = vec![
        rec("A", "Python/1", CategoryTag::Array, 50.0),
        rec("A", "Python/2", CategoryTag::Math, 40.0),
        rec("B", "Python/1", CategoryTag::Array, 60.0),
        rec("B", "Python/2", CategoryTag::Math, 20.0),
    ];
    let snap = RankingMemory::new().ingest(&hand).map_err(|e| e.to_string())?;
    let keys: Vec<RankKey> = [CategoryTag::Array, CategoryTag::Math].map(|t| RankKey::new(Stage::Refine, LanguageId::Python, Some(t), Some(Metric::ExecutionTime)).unwrap()).to_vec();
    let both = snap.top_k(&keys, 2).map_err(|e| e.to_string())?;
    let array_only = snap.top_k(&keys[..1], 2).map_err(|e| e.to_string())?;
    ensure(both == ["A", "B"] && array_only == ["B", "A"], || format!("multi-tag {both:?}, array-only {array_only:?}"))?;

    let mut rng = StdRng::seed_from_u64(SEED ^ 3);
    for case in 0..RANKING_CASES {
        let recs = random_records(&mut rng);
        let snap = RankingMemory::new().ingest(&recs).map_err(|e| e.to_string())?;
        let mut shuffled = recs.clone();
        shuffled.shuffle(&mut rng);
        let again: std::sync::Arc<MemorySnapshot> = RankingMemory::new().ingest(&shuffled).map_err(|e| e.to_string())?;
        ensure(snap.content_hash == again.content_hash && snap.tables() == again.tables(), || format!("case {case}: ingest order changed the memory"))?;

        let c = rng.gen_range(0.01..100.0);
        for table in snap.tables() {
            let scores: BTreeMap<String, f64> = table.entries.iter().map(|e| (e.model_id.clone(), e.score)).collect();
            let tie: BTreeMap<String, f64> = snap.entries(&table.key.language_level()).iter().map(|e| (e.model_id.clone(), e.score)).collect();
            let scaled = |m: &BTreeMap<String, f64>| m.iter().map(|(k, v)| (k.clone(), v * c)).collect::<BTreeMap<_, _>>();
            let order = rank_order(&scores, &tie);
            ensure(order == rank_order(&scaled(&scores), &scaled(&tie)), || format!("case {case}: scaling by {c} reordered {:?}", table.key))?;
            let served = snap.top_k(&[table.key], order.len()).map_err(|e| e.to_string())?;
            ensure(served == order, || format!("case {case}: top_k {served:?} vs {order:?}"))?;
        }
    }
    Ok(Verdict::pass(format!("A 0.9 beats B 0.8 over two tags; scaling and ingest order invariant on {RANKING_CASES} sets")))
}

fn profiler_calibration() -> Check {
    let t = Instant::now();
    let eq = profiler::compare_values(Metric::ExecutionTime, 200.0, 150.0, 0.01, 1.0).map_err(|e| e.to_string())?;
    ensure(eq.improvement_pct == 25.0 && eq.measurable, || format!("200 -> 150 ms gave {}%", eq.improvement_pct))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SandboxConfig { root: dir.path().to_path_buf(), ..SandboxConfig::default() };
    let mc = MeasurementConfig::default();
    let probe = calib::c_bundle(&cfg, BUSY, vec!["./main".into(), "1".into()]);
    let alloc = calib::c_bundle(&cfg, ALLOC, vec!["./main".into()]);
    let lock = MeasurementGuard::acquire();
    let w = calib::measure_busy_loop(&cfg, &probe, &mc, &lock);
    let m = measure(&alloc, &mc, &lock).map_err(|e| e.to_string())?;
    drop(lock);
    let elapsed = t.elapsed();

    let p = &w.profile;
    ensure((CPU_RANGE.0..=CPU_RANGE.1).contains(&p.cpu_utilization), || format!("cpu utilization {:.3}", p.cpu_utilization))?;
    ensure(m.max_memory_kib >= ALLOC_FLOOR_KIB, || format!("100 MiB oracle max memory {} KiB", m.max_memory_kib))?;
    for prof in [p, &m] {
        ensure(prof.max_memory_kib >= prof.mean_memory_kib, || format!("max {} < mean {}", prof.max_memory_kib, prof.mean_memory_kib))?;
    }
    ensure(elapsed < CALIBRATION_BUDGET, || format!("took {elapsed:?}"))?;

    let nominal = (w.stopwatch_before_ms + w.stopwatch_after_ms) / 2.0;
    let drift = (p.execution_time_ms - calib::TARGET_MS).abs() / calib::TARGET_MS;
    let detail = format!(
        "busy loop {:.1} ms vs {:.0} ms target ({:+.1}%), stopwatch {:.1}/{:.1} ms (nominal {nominal:.1}), window {} {}, timer {}; cpu {:.3}; 100 MiB -> {:.0} KiB; 200->150 = 25%; {elapsed:.1?}",
        p.execution_time_ms,
        calib::TARGET_MS,
        (p.execution_time_ms / calib::TARGET_MS - 1.0) * 100.0,
        w.stopwatch_before_ms,
        w.stopwatch_after_ms,
        w.windows_tried,
        if w.stable { "stable" } else { "unstable" },
        p.host_fingerprint.rsplit("timer=").next().unwrap_or("?"),
        p.cpu_utilization,
        m.max_memory_kib,
    );
    if drift <= TIMING_TOL {
        Ok(Verdict::pass(detail))
    } else {
        // Other sub-checks passed above; only the timing fidelity missed.
        Ok(Verdict { status: Status::Fail, gating: false, detail: format!("timing outside ±{:.0}% (non-gating on this host): {detail}", TIMING_TOL * 100.0) })
    }
}

fn votes(sets: &[&[CategoryTag]]) -> Vec<TagVote> {
    sets.iter().enumerate().map(|(i, s)| TagVote { annotator_id: format!("a{i}"), tags: s.iter().copied().collect() }).collect()
}

fn consensus_protocol() -> Check {
    use CategoryTag::*;
    let two = consensus(&votes(&[&[Array, Math], &[Array], &[String]])).map_err(|e| e.to_string())?;
    ensure(two.tags == BTreeSet::from([Array]) && !two.fallback_used, || format!("two-of-three gave {:?}", two.tags))?;
    let all = consensus(&votes(&[&[Math], &[Math], &[Math]])).map_err(|e| e.to_string())?;
    ensure(all.tags == BTreeSet::from([Math]) && !all.fallback_used, || format!("unanimity gave {:?}", all.tags))?;
    let disjoint = consensus(&votes(&[&[String], &[Math], &[Sorting]])).map_err(|e| e.to_string())?;
    let top = [String, Math, Sorting].into_iter().max_by_key(|t| t.taxonomy_frequency()).unwrap();
    ensure(disjoint.tags == BTreeSet::from([top]) && disjoint.fallback_used, || format!("disjoint gave {:?}", disjoint.tags))?;
    ensure(consensus(&votes(&[&[], &[], &[]])).is_err(), || "all-empty votes were accepted".into())?;

    let mut rng = StdRng::seed_from_u64(SEED ^ 4);
    for case in 0..CONSENSUS_CASES {
        let n = [3, 5][rng.gen_range(0..2)];
        let mut v: Vec<TagVote> = (0..n)
            .map(|i| TagVote { annotator_id: format!("a{i}"), tags: CategoryTag::ALL.into_iter().filter(|_| rng.gen_bool(0.2)).collect() })
            .collect();
        let Ok(base) = consensus(&v) else { continue };
        let mut shuffled = v.clone();
        shuffled.shuffle(&mut rng);
        let again = consensus(&shuffled).map_err(|e| e.to_string())?;
        ensure(again.tags == base.tags && again.fallback_used == base.fallback_used, || format!("case {case}: order changed the result"))?;
        let who = rng.gen_range(0..n);
        let add = CategoryTag::ALL[rng.gen_range(0..10)];
        v[who].tags.insert(add);
        let more = consensus(&v).map_err(|e| e.to_string())?;
        if !base.fallback_used {
            ensure(base.tags.is_subset(&more.tags), || format!("case {case}: adding a vote dropped tags {:?} -> {:?}", base.tags, more.tags))?;
        }
        for (t, c) in &base.per_tag_votes {
            ensure(more.per_tag_votes.get(t).copied().unwrap_or(0) >= *c, || format!("case {case}: vote count for {t:?} fell"))?;
        }
    }
    Ok(Verdict::pass(format!("three worked examples; permutation and monotonicity on {CONSENSUS_CASES} vote sets")))
}

fn judge_all(path: &Path, expect: Option<usize>) -> Result<String, String> {
    let problems = load_benchmark(path, BenchmarkFormat::HumanEvalX).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(n) = expect {
        ensure(problems.len() == n, || format!("{}: {} problems, expected {n}", path.display(), problems.len()))?;
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sb = Sandbox::new(SandboxConfig { root: dir.path().to_path_buf(), ..SandboxConfig::default() });
    let mut failed = Vec::new();
    for p in &problems {
        let sol = Solution::canonical(p).ok_or_else(|| format!("{} has no canonical solution", p.task_id))?;
        match sb.judge(p, &sol, ValidationSuite::Full) {
            Ok(v) if v.passed() => {}
            Ok(v) => failed.push(format!("{} {:?}", p.task_id, v.kind)),
            Err(e) => failed.push(format!("{} {e}", p.task_id)),
        }
    }
    ensure(failed.is_empty(), || format!("{}: {}/{} pass; failures: {}", path.display(), problems.len() - failed.len(), problems.len(), failed.join(", ")))?;
    Ok(format!("{}/{} pass", problems.len(), problems.len()))
}

fn end_to_end() -> Check {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/humanevalx_mini.jsonl");
    let mini = judge_all(&fixture, None)?;
    let Some(spec) = std::env::var_os("PERFORCH_HUMANEVALX").filter(|v| !v.is_empty()) else {
        return Ok(Verdict { status: Status::Skip, gating: true, detail: format!("bundled fixture {mini}; set PERFORCH_HUMANEVALX to a HumanEval-X file to run the 164-problem check") });
    };
    let t = Instant::now();
    let mut parts = vec![format!("fixture {mini}")];
    for path in std::env::split_paths(&spec).collect::<Vec<PathBuf>>() {
        parts.push(format!("{}: {}", path.display(), judge_all(&path, Some(HUMANEVAL_PROBLEMS))?));
    }
    let elapsed = t.elapsed();
    ensure(elapsed < E2E_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(Verdict::pass(format!("{}; {elapsed:.1?}", parts.join("; "))))
}

fn main() {
    let checks: [(&str, fn() -> Check); 8] = [
        ("flow-analytics", flow_analytics),
        ("sequential-acceptance", sequential_semantics),
        ("rollback-safety", rollback_safety),
        ("metric-oracles", metric_oracles),
        ("ranking-properties", ranking_properties),
        ("profiler-calibration", profiler_calibration),
        ("consensus-protocol", consensus_protocol),
        ("end-to-end-smoke", end_to_end),
    ];
    let mut gating_failures = 0;
    for (name, f) in checks {
        let t = Instant::now();
        let v = match std::panic::catch_unwind(f) {
            Ok(Ok(v)) => v,
            Ok(Err(msg)) => Verdict { status: Status::Fail, gating: true, detail: msg },
            Err(_) => Verdict { status: Status::Fail, gating: true, detail: "panicked".into() },
        };
        let tag = match v.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        if v.status == Status::Fail && v.gating {
            gating_failures += 1;
        }
        println!("{tag} {name} [{:.1?}]: {}", t.elapsed(), v.detail);
    }
    if gating_failures > 0 {
        println!("{gating_failures} gating criterion/criteria failed");
        std::process::exit(1);
    }
}
