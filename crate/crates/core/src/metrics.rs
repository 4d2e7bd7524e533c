//! Evaluation metrics over study records and run logs, and their emission as
//! CSV, JSON, box-plot data and SVG.
//!
//! Rates are computed on exact counts and rounded half-up to hundredths.
//! Improvement medians and ranges cover improved instances only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{CategoryTag, LanguageId};
use crate::numeric::{self, percent_hundredths, BoxplotData};
use crate::orchestrator::RunLog;
use crate::profiler::Metric;
use crate::ranking::{Stage, StudyRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    /// Model id, or "agent" for orchestrated runs.
    pub subject: String,
    pub language: LanguageId,
    pub tag: Option<CategoryTag>,
    pub metric_name: String,
    /// Percentage rounded half-up to two decimals.
    pub value: f64,
    pub count: u64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Grouping {
    #[default]
    Language,
    LanguageTag,
}

fn rate_rows<'a>(
    metric_name: &str,
    items: impl Iterator<Item = (&'a str, LanguageId, &'a std::collections::BTreeSet<CategoryTag>, bool)>,
    grouping: Grouping,
) -> Vec<AggregateRow> {
    let mut counts: BTreeMap<(String, LanguageId, Option<CategoryTag>), (u64, u64)> = BTreeMap::new();
    for (subject, lang, tags, ok) in items {
        let mut bump = |tag| {
            let c = counts.entry((subject.to_string(), lang, tag)).or_insert((0, 0));
            c.0 += ok as u64;
            c.1 += 1;
        };
        match grouping {
            Grouping::Language => bump(None),
            Grouping::LanguageTag => tags.iter().for_each(|t| bump(Some(*t))),
        }
    }
    counts
        .into_iter()
        .map(|((subject, language, tag), (count, support))| AggregateRow {
            subject,
            language,
            tag,
            metric_name: metric_name.to_string(),
            value: percent_hundredths(count, support).expect("support > 0") as f64 / 100.0,
            count,
            support,
        })
        .collect()
}

/// Per-model first-attempt correctness from Generate records.
pub fn pass_at_1(records: &[StudyRecord], grouping: Grouping) -> Vec<AggregateRow> {
    rate_rows(
        "pass_at_1",
        records.iter().filter(|r| r.stage == Stage::Generate).map(|r| (r.model_id.as_str(), r.language, &r.tags, r.outcome)),
        grouping,
    )
}

/// Per-model repair success from Fix records.
pub fn fix_at_1(records: &[StudyRecord], grouping: Grouping) -> Vec<AggregateRow> {
    rate_rows(
        "fix_at_1",
        records.iter().filter(|r| r.stage == Stage::Fix).map(|r| (r.model_id.as_str(), r.language, &r.tags, r.outcome)),
        grouping,
    )
}

/// Agent correctness: tasks whose final solution passes, over all tasks.
pub fn agent_pass_at_1(logs: &[RunLog], grouping: Grouping) -> Vec<AggregateRow> {
    rate_rows("pass_at_1", logs.iter().map(|l| ("agent", l.language, &l.tags, l.solved())), grouping)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementSummary {
    pub subject: String,
    pub language: LanguageId,
    pub metric: Metric,
    pub refined_attempted: usize,
    pub improved_count: usize,
    pub unimproved_count: usize,
    pub regressed_count: usize,
    pub median_improvement_pct: Option<f64>,
    pub min_pct: Option<f64>,
    pub max_pct: Option<f64>,
}

/// Summarize one group. `None` entries are attempts without a comparable
/// result; `(pct, measurable)` otherwise.
pub fn summarize(subject: &str, language: LanguageId, metric: Metric, attempts: &[Option<(f64, bool)>]) -> ImprovementSummary {
    let improved: Vec<f64> = attempts.iter().flatten().filter(|(p, m)| *m && *p > 0.0).map(|(p, _)| *p).collect();
    let regressed = attempts.iter().flatten().filter(|(p, _)| *p < 0.0).count();
    let s = numeric::sorted(&improved);
    ImprovementSummary {
        subject: subject.to_string(),
        language,
        metric,
        refined_attempted: attempts.len(),
        improved_count: improved.len(),
        unimproved_count: attempts.len() - improved.len() - regressed,
        regressed_count: regressed,
        median_improvement_pct: numeric::median(&improved),
        min_pct: s.first().copied(),
        max_pct: s.last().copied(),
    }
}

/// Improvement of final over baseline, per language, for agent runs that
/// reached refinement.
pub fn improvement_summary(logs: &[RunLog], metric: Metric) -> Vec<ImprovementSummary> {
    let mut groups: BTreeMap<LanguageId, Vec<Option<(f64, bool)>>> = BTreeMap::new();
    for l in logs.iter().filter(|l| l.baseline_profile.is_some()) {
        groups.entry(l.language).or_default().push(l.improvement(metric).map(|i| (i.improvement_pct, i.measurable)));
    }
    groups.into_iter().map(|(lang, a)| summarize("agent", lang, metric, &a)).collect()
}

/// Per-model improvement summaries from Refine study records; a record's
/// stored percentage counts as a measurable improvement when positive.
pub fn record_improvement_summary(records: &[StudyRecord], metric: Metric) -> Vec<ImprovementSummary> {
    let mut groups: BTreeMap<(String, LanguageId), Vec<Option<(f64, bool)>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.stage == Stage::Refine) {
        let v = if r.outcome { r.improvement_pct.get(&metric).map(|p| (*p, *p > 0.0)) } else { None };
        groups.entry((r.model_id.clone(), r.language)).or_default().push(v);
    }
    groups.into_iter().map(|((m, lang), a)| summarize(&m, lang, metric, &a)).collect()
}

/// Improved-instance percentages keyed by subject, for box plots.
pub fn improvement_groups(records: &[StudyRecord], logs: &[RunLog], metric: Metric) -> BTreeMap<String, Vec<f64>> {
    let mut g: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.stage == Stage::Refine && r.outcome) {
        let e = g.entry(r.model_id.clone()).or_default();
        if let Some(p) = r.improvement_pct.get(&metric).filter(|p| **p > 0.0) {
            e.push(*p);
        }
    }
    for l in logs.iter().filter(|l| l.baseline_profile.is_some()) {
        let e = g.entry("agent".to_string()).or_default();
        if let Some(i) = l.improvement(metric).filter(|i| i.measurable && i.improvement_pct > 0.0) {
            e.push(i.improvement_pct);
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmitFormat {
    Csv,
    Json,
    BoxplotData,
    Svg,
}

impl EmitFormat {
    pub fn extension(self) -> &'static str {
        match self {
            EmitFormat::Csv => "csv",
            EmitFormat::Json => "json",
            EmitFormat::BoxplotData => "boxplot.json",
            EmitFormat::Svg => "svg",
        }
    }
}

impl std::str::FromStr for EmitFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(EmitFormat::Csv),
            "json" => Ok(EmitFormat::Json),
            "boxplot" | "boxplotdata" | "box" => Ok(EmitFormat::BoxplotData),
            "svg" => Ok(EmitFormat::Svg),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReportBody {
    Rows(Vec<AggregateRow>),
    Summaries(Vec<ImprovementSummary>),
    Groups(BTreeMap<String, Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Used in the file name, e.g. `time` or `pass_at_1`.
    pub metric: String,
    /// Used in the file name, e.g. `rust` or `all`.
    pub language: String,
    pub body: ReportBody,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("nothing to emit")]
    Empty,
    #[error("{0:?} output is not available for this report")]
    Unsupported(EmitFormat),
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Emitted {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn fmt2(v: f64) -> String {
    format!("{:.2}", numeric::round2(v))
}

fn opt2(v: Option<f64>) -> String {
    v.map(fmt2).unwrap_or_default()
}

fn csv_text(body: &ReportBody) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| ReportError::Write { path: "<csv>".into(), message: e.to_string() };
    match body {
        ReportBody::Rows(rows) => {
            w.write_record(["subject", "language", "tag", "metric", "value", "count", "support"]).map_err(err)?;
            for r in rows {
                let tag = r.tag.map(|t| t.display_name().to_string()).unwrap_or_default();
                w.write_record([&r.subject, r.language.as_str(), &tag, &r.metric_name, &fmt2(r.value), &r.count.to_string(), &r.support.to_string()])
                    .map_err(err)?;
            }
        }
        ReportBody::Summaries(ss) => {
            w.write_record(["subject", "language", "metric", "refined_attempted", "improved", "unimproved", "regressed", "median_pct", "min_pct", "max_pct"])
                .map_err(err)?;
            for s in ss {
                w.write_record([
                    s.subject.as_str(),
                    s.language.as_str(),
                    s.metric.as_str(),
                    &s.refined_attempted.to_string(),
                    &s.improved_count.to_string(),
                    &s.unimproved_count.to_string(),
                    &s.regressed_count.to_string(),
                    &opt2(s.median_improvement_pct),
                    &opt2(s.min_pct),
                    &opt2(s.max_pct),
                ])
                .map_err(err)?;
            }
        }
        ReportBody::Groups(g) => {
            w.write_record(["group", "value"]).map_err(err)?;
            for (k, vs) in g {
                for v in vs {
                    w.write_record([k.as_str(), &fmt2(*v)]).map_err(err)?;
                }
            }
        }
    }
    String::from_utf8(w.into_inner().map_err(|e| ReportError::Write { path: "<csv>".into(), message: e.to_string() })?)
        .map_err(|e| ReportError::Write { path: "<csv>".into(), message: e.to_string() })
}

fn json_text(body: &ReportBody) -> String {
    let v = match body {
        ReportBody::Rows(r) => serde_json::to_value(r),
        ReportBody::Summaries(s) => serde_json::to_value(s),
        ReportBody::Groups(g) => serde_json::to_value(g),
    }
    .expect("report data serializes");
    serde_json::to_string_pretty(&v).expect("json value prints") + "\n"
}

fn box_stats(groups: &BTreeMap<String, Vec<f64>>, warnings: &mut Vec<String>) -> Vec<BoxplotData<f64>> {
    groups
        .iter()
        .filter_map(|(k, v)| {
            let b = BoxplotData::from_values(k.clone(), v);
            if b.is_none() {
                warnings.push(format!("group {k:?} is empty; skipped"));
            }
            b
        })
        .collect()
}

/// One box per group on a shared vertical axis.
pub fn render_svg(boxes: &[BoxplotData<f64>], title: &str) -> String {
    let (w_box, pad_l, pad_t, h) = (90.0, 60.0, 40.0, 240.0);
    let width = pad_l + w_box * boxes.len() as f64 + 20.0;
    let height = pad_t + h + 50.0;
    let lo = boxes.iter().map(|b| b.min).fold(f64::INFINITY, f64::min);
    let hi = boxes.iter().map(|b| b.max).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let y = |v: f64| pad_t + h - (v - lo) / span * h;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#, width / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{:.2}" stroke="black"/>"#, pad_t + h);
    for v in [lo, (lo + hi) / 2.0, hi] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{:.2}</text>"#, pad_l - 4.0, y(v) + 4.0, v);
    }
    for (i, b) in boxes.iter().enumerate() {
        let cx = pad_l + w_box * (i as f64 + 0.5);
        let (x0, bw) = (cx - 25.0, 50.0);
        let _ = writeln!(s, r#"<g class="box" data-group="{}">"#, escape(&b.group));
        let _ = writeln!(s, r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#, y(b.whisker_high), y(b.q3));
        let _ = writeln!(s, r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#, y(b.q1), y(b.whisker_low));
        let _ = writeln!(s, r#"<rect x="{x0:.2}" y="{:.2}" width="{bw:.2}" height="{:.2}" fill="lightsteelblue" stroke="black"/>"#, y(b.q3), (y(b.q1) - y(b.q3)).max(0.5));
        let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#, y(b.median), x0 + bw, y(b.median));
        for o in &b.outliers {
            let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{:.2}" r="2.5" fill="none" stroke="black"/>"#, y(*o));
        }
        let _ = writeln!(s, r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{} (n={})</text>"#, pad_t + h + 18.0, escape(&b.group), b.n);
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Write `report` in each format to `<metric>_<language>.<ext>` under `dir`.
pub fn emit(report: &Report, formats: &[EmitFormat], dir: &Path) -> Result<Emitted, ReportError> {
    let empty = match &report.body {
        ReportBody::Rows(r) => r.is_empty(),
        ReportBody::Summaries(s) => s.is_empty(),
        ReportBody::Groups(g) => g.is_empty(),
    };
    if empty {
        return Err(ReportError::Empty);
    }
    let write_err = |p: &Path, e: std::io::Error| ReportError::Write { path: p.display().to_string(), message: e.to_string() };
    std::fs::create_dir_all(dir).map_err(|e| write_err(dir, e))?;
    let mut out = Emitted::default();
    for &f in formats {
        let text = match (f, &report.body) {
            (EmitFormat::Csv, b) => csv_text(b)?,
            (EmitFormat::Json, b) => json_text(b),
            (EmitFormat::BoxplotData, ReportBody::Groups(g)) => {
                serde_json::to_string_pretty(&box_stats(g, &mut out.warnings)).expect("box data serializes") + "\n"
            }
            (EmitFormat::Svg, ReportBody::Groups(g)) => {
                let boxes = box_stats(g, &mut out.warnings);
                if boxes.is_empty() {
                    out.warnings.push("no non-empty groups; SVG not written".into());
                    continue;
                }
                render_svg(&boxes, &format!("{} improvement (%), {}", report.metric, report.language))
            }
            (f, _) => return Err(ReportError::Unsupported(f)),
        };
        let path = dir.join(format!("{}_{}.{}", report.metric, report.language, f.extension()));
        std::fs::write(&path, text).map_err(|e| write_err(&path, e))?;
        out.files.push(path);
    }
    out.warnings.dedup();
    Ok(out)
}
