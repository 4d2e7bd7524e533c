//! Ranked model memory built from study records.
//!
//! Generate and Fix keys score a model by its success rate. Refine keys score
//! it by the weighted sum of normalized improvements, where each problem
//! contributes `clamp(pct / 100, 0, 1)` on the key's metric.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{CategoryTag, LanguageId};
use crate::profiler::Metric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Generate,
    Fix,
    Refine,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Fix => "fix",
            Stage::Refine => "refine",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "generate" | "generation" | "gen" => Ok(Stage::Generate),
            "fix" | "fixing" | "repair" => Ok(Stage::Fix),
            "refine" | "refinement" => Ok(Stage::Refine),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub model_id: String,
    pub task_id: String,
    pub language: LanguageId,
    #[serde(default)]
    pub tags: BTreeSet<CategoryTag>,
    pub stage: Stage,
    /// Correct (Generate), fixed (Fix), or refined solution still correct (Refine).
    pub outcome: bool,
    /// Raw improvement percentage per metric; Refine only.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub improvement_pct: BTreeMap<Metric, f64>,
}

impl StudyRecord {
    pub fn new(model_id: impl Into<String>, task_id: impl Into<String>, language: LanguageId, stage: Stage, outcome: bool) -> Self {
        Self {
            model_id: model_id.into(),
            task_id: task_id.into(),
            language,
            tags: BTreeSet::new(),
            stage,
            outcome,
            improvement_pct: BTreeMap::new(),
        }
    }

    pub fn with_tags(mut self, tags: impl IntoIterator<Item = CategoryTag>) -> Self {
        self.tags = tags.into_iter().collect();
        self
    }

    pub fn with_improvement(mut self, metric: Metric, pct: f64) -> Self {
        self.improvement_pct.insert(metric, pct);
        self
    }

    /// Normalized contribution to a Refine score: 0 when absent, negative,
    /// or the refined solution was incorrect.
    pub fn improvement_fraction(&self, metric: Metric) -> f64 {
        if !self.outcome {
            return 0.0;
        }
        match self.improvement_pct.get(&metric) {
            Some(p) if p.is_finite() => (p / 100.0).clamp(0.0, 1.0),
            _ => 0.0,
        }
    }

    fn identity(&self) -> (String, LanguageId, String, Stage) {
        (self.model_id.clone(), self.language, self.task_id.clone(), self.stage)
    }

    fn validate(&self) -> Result<(), RankingError> {
        if self.model_id.is_empty() || self.task_id.is_empty() {
            return Err(RankingError::Malformed(format!("empty model or task id in {self:?}")));
        }
        if self.stage != Stage::Refine && !self.improvement_pct.is_empty() {
            return Err(RankingError::Malformed(format!("{} {} {}: improvements on a non-refine record", self.model_id, self.task_id, self.stage)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RankKey {
    pub stage: Stage,
    pub language: LanguageId,
    /// `None` is the language-level aggregate over all problems.
    pub tag: Option<CategoryTag>,
    pub metric: Option<Metric>,
}

impl RankKey {
    pub fn new(stage: Stage, language: LanguageId, tag: Option<CategoryTag>, metric: Option<Metric>) -> Result<Self, RankingError> {
        let key = Self { stage, language, tag, metric };
        key.validate()?;
        Ok(key)
    }

    pub fn validate(&self) -> Result<(), RankingError> {
        if (self.stage == Stage::Refine) != self.metric.is_some() {
            return Err(RankingError::InvalidKey(*self));
        }
        Ok(())
    }

    pub fn language_level(&self) -> Self {
        Self { tag: None, ..*self }
    }

    fn matches(&self, r: &StudyRecord) -> bool {
        r.stage == self.stage && r.language == self.language && self.tag.map_or(true, |t| r.tags.contains(&t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub model_id: String,
    pub score: f64,
    pub support: usize,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RankingError {
    #[error("conflicting records for {model} {task} {stage}: {first} vs {second}")]
    Conflict { model: String, task: String, stage: Stage, first: String, second: String },
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("invalid rank key {0:?}: metric must be present exactly for the refine stage")]
    InvalidKey(RankKey),
    #[error("keys must share stage, language and metric")]
    MixedKeys,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("no ranking entries for {0:?}")]
    NoEntries(Vec<RankKey>),
    #[error("record for {found} passed when registering {expected}")]
    ForeignRecord { expected: String, found: String },
    #[error("unknown memory version {0}")]
    UnknownVersion(u64),
    #[error("memory persistence: {0}")]
    Io(String),
}

/// Score of `model_id` under `key` computed directly from `records`.
pub fn key_score(model_id: &str, key: &RankKey, records: &[StudyRecord]) -> Option<RankEntry> {
    let mine: Vec<&StudyRecord> = records.iter().filter(|r| r.model_id == model_id && key.matches(r)).collect();
    if mine.is_empty() {
        return None;
    }
    let score = match key.metric {
        Some(m) => mine.iter().map(|r| r.improvement_fraction(m)).sum(),
        None => mine.iter().filter(|r| r.outcome).count() as f64 / mine.len() as f64,
    };
    Some(RankEntry { model_id: model_id.to_string(), score, support: mine.len() })
}

/// Weighted-sum score over a Refine key.
pub fn weighted_score(model_id: &str, key: &RankKey, records: &[StudyRecord]) -> Result<f64, RankingError> {
    if key.stage != Stage::Refine {
        return Err(RankingError::InvalidKey(*key));
    }
    key.validate()?;
    Ok(key_score(model_id, key, records).map_or(0.0, |e| e.score))
}

/// Order models by descending score, then descending tie-break score, then id.
pub fn rank_order(scores: &BTreeMap<String, f64>, tie_break: &BTreeMap<String, f64>) -> Vec<String> {
    let mut ids: Vec<&String> = scores.keys().collect();
    ids.sort_by(|a, b| {
        scores[*b]
            .total_cmp(&scores[*a])
            .then_with(|| tie_break.get(*b).unwrap_or(&0.0).total_cmp(tie_break.get(*a).unwrap_or(&0.0)))
            .then_with(|| a.cmp(b))
    });
    ids.into_iter().cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTable {
    pub key: RankKey,
    pub entries: Vec<RankEntry>,
}

/// Immutable, content-addressed view of the memory.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorySnapshot {
    pub version: u64,
    pub content_hash: String,
    records: Arc<Vec<StudyRecord>>,
    rankings: Arc<BTreeMap<RankKey, Vec<RankEntry>>>,
}

fn content_hash(records: &[StudyRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update(serde_json::to_vec(r).expect("records serialize"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn compute_rankings(records: &[StudyRecord]) -> BTreeMap<RankKey, Vec<RankEntry>> {
    let mut keys = BTreeSet::new();
    for r in records {
        let metrics: Vec<Option<Metric>> = match r.stage {
            Stage::Refine => Metric::ALL.iter().map(|m| Some(*m)).collect(),
            _ => vec![None],
        };
        for metric in metrics {
            keys.insert(RankKey { stage: r.stage, language: r.language, tag: None, metric });
            for t in &r.tags {
                keys.insert(RankKey { stage: r.stage, language: r.language, tag: Some(*t), metric });
            }
        }
    }
    let models: BTreeSet<&str> = records.iter().map(|r| r.model_id.as_str()).collect();
    keys.into_iter()
        .map(|key| {
            let scores: BTreeMap<String, f64> =
                models.iter().filter_map(|m| key_score(m, &key, records)).map(|e| (e.model_id, e.score)).collect();
            let support: BTreeMap<String, usize> =
                models.iter().filter_map(|m| key_score(m, &key, records)).map(|e| (e.model_id, e.support)).collect();
            let entries = rank_order(&scores, &BTreeMap::new())
                .into_iter()
                .map(|m| RankEntry { score: scores[&m], support: support[&m], model_id: m })
                .collect();
            (key, entries)
        })
        .collect()
}

impl MemorySnapshot {
    fn build(version: u64, mut records: Vec<StudyRecord>) -> Self {
        records.sort_by(|a, b| a.identity().cmp(&b.identity()));
        let rankings = compute_rankings(&records);
        Self { version, content_hash: content_hash(&records), records: Arc::new(records), rankings: Arc::new(rankings) }
    }

    pub fn empty() -> Self {
        Self::build(0, Vec::new())
    }

    pub fn records(&self) -> &[StudyRecord] {
        &self.records
    }

    pub fn entries(&self, key: &RankKey) -> &[RankEntry] {
        self.rankings.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn tables(&self) -> Vec<RankingTable> {
        self.rankings.iter().map(|(k, v)| RankingTable { key: *k, entries: v.clone() }).collect()
    }

    pub fn models(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.model_id.clone()).collect()
    }

    pub fn has_language(&self, stage: Stage, language: LanguageId) -> bool {
        self.rankings.keys().any(|k| k.stage == stage && k.language == language)
    }

    /// Top `k` models for a problem carrying all the given keys' tags.
    pub fn top_k(&self, keys: &[RankKey], k: usize) -> Result<Vec<String>, RankingError> {
        if k == 0 {
            return Err(RankingError::InvalidK);
        }
        let first = keys.first().ok_or_else(|| RankingError::NoEntries(Vec::new()))?;
        for key in keys {
            key.validate()?;
            if (key.stage, key.language, key.metric) != (first.stage, first.language, first.metric) {
                return Err(RankingError::MixedKeys);
            }
        }
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for key in keys {
            for e in self.entries(key) {
                *sums.entry(e.model_id.clone()).or_insert(0.0) += e.score;
            }
        }
        if sums.is_empty() {
            return Err(RankingError::NoEntries(keys.to_vec()));
        }
        let lang: BTreeMap<String, f64> = self.entries(&first.language_level()).iter().map(|e| (e.model_id.clone(), e.score)).collect();
        let mut order = rank_order(&sums, &lang);
        order.truncate(k);
        Ok(order)
    }

    /// Ranked models for a problem's tags; an untagged problem uses the
    /// language-level ranking.
    pub fn top_k_for(
        &self,
        stage: Stage,
        language: LanguageId,
        tags: &BTreeSet<CategoryTag>,
        metric: Option<Metric>,
        k: usize,
    ) -> Result<Vec<String>, RankingError> {
        let keys: Vec<RankKey> = if tags.is_empty() {
            vec![RankKey::new(stage, language, None, metric)?]
        } else {
            tags.iter().map(|t| RankKey::new(stage, language, Some(*t), metric)).collect::<Result<_, _>>()?
        };
        self.top_k(&keys, k)
    }
}

fn describe(r: &StudyRecord) -> String {
    if r.improvement_pct.is_empty() {
        format!("outcome={}", r.outcome)
    } else {
        format!("outcome={} improvements={:?}", r.outcome, r.improvement_pct)
    }
}

fn merge(existing: &[StudyRecord], incoming: &[StudyRecord]) -> Result<Vec<StudyRecord>, RankingError> {
    let mut by_id: BTreeMap<_, StudyRecord> = existing.iter().map(|r| (r.identity(), r.clone())).collect();
    for r in incoming {
        r.validate()?;
        match by_id.get(&r.identity()) {
            Some(prev) if prev == r => {}
            Some(prev) => {
                return Err(RankingError::Conflict {
                    model: r.model_id.clone(),
                    task: r.task_id.clone(),
                    stage: r.stage,
                    first: describe(prev),
                    second: describe(r),
                })
            }
            None => {
                by_id.insert(r.identity(), r.clone());
            }
        }
    }
    Ok(by_id.into_values().collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u64,
    content_hash: String,
    record_count: usize,
}

/// Versioned history of snapshots; readers hold `Arc`s and are never
/// affected by later ingests.
#[derive(Debug, Clone)]
pub struct RankingMemory {
    history: Vec<Arc<MemorySnapshot>>,
}

impl Default for RankingMemory {
    fn default() -> Self {
        Self { history: vec![Arc::new(MemorySnapshot::empty())] }
    }
}

impl RankingMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current(&self) -> Arc<MemorySnapshot> {
        self.history.last().expect("history is never empty").clone()
    }

    pub fn versions(&self) -> Vec<u64> {
        self.history.iter().map(|s| s.version).collect()
    }

    pub fn ingest(&mut self, records: &[StudyRecord]) -> Result<Arc<MemorySnapshot>, RankingError> {
        let cur = self.current();
        let merged = merge(cur.records(), records)?;
        let next = MemorySnapshot::build(cur.version + 1, merged);
        if next.content_hash == cur.content_hash {
            return Ok(cur);
        }
        let next = Arc::new(next);
        self.history.push(next.clone());
        Ok(next)
    }

    pub fn register_model(&mut self, model_id: &str, records: &[StudyRecord]) -> Result<Arc<MemorySnapshot>, RankingError> {
        if let Some(r) = records.iter().find(|r| r.model_id != model_id) {
            return Err(RankingError::ForeignRecord { expected: model_id.to_string(), found: r.model_id.clone() });
        }
        self.ingest(records)
    }

    /// Make `version` current again, dropping later snapshots.
    pub fn rollback(&mut self, version: u64) -> Result<Arc<MemorySnapshot>, RankingError> {
        let at = self.history.iter().position(|s| s.version == version).ok_or(RankingError::UnknownVersion(version))?;
        self.history.truncate(at + 1);
        Ok(self.current())
    }

    /// Write records.jsonl, rankings.json and manifest.json for the current snapshot.
    pub fn save(&self, dir: &Path) -> Result<(), RankingError> {
        let io = |e: std::io::Error| RankingError::Io(format!("{}: {e}", dir.display()));
        let snap = self.current();
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("records.jsonl")).map_err(io)?);
        for r in snap.records() {
            serde_json::to_writer(&mut f, r).map_err(|e| RankingError::Io(e.to_string()))?;
            f.write_all(b"\n").map_err(io)?;
        }
        f.flush().map_err(io)?;
        let rankings = serde_json::to_string_pretty(&snap.tables()).map_err(|e| RankingError::Io(e.to_string()))?;
        std::fs::write(dir.join("rankings.json"), rankings + "\n").map_err(io)?;
        let manifest = Manifest { version: snap.version, content_hash: snap.content_hash.clone(), record_count: snap.records().len() };
        let manifest = serde_json::to_string_pretty(&manifest).map_err(|e| RankingError::Io(e.to_string()))?;
        std::fs::write(dir.join("manifest.json"), manifest + "\n").map_err(io)?;
        Ok(())
    }

    /// Load a saved memory; rankings are recomputed and the hash verified.
    pub fn load(dir: &Path) -> Result<Self, RankingError> {
        let manifest: Manifest = serde_json::from_str(
            &std::fs::read_to_string(dir.join("manifest.json")).map_err(|e| RankingError::Io(format!("{}: {e}", dir.display())))?,
        )
        .map_err(|e| RankingError::Io(format!("manifest.json: {e}")))?;
        let records = read_records(&dir.join("records.jsonl"))?;
        let snap = MemorySnapshot::build(manifest.version, merge(&[], &records)?);
        if snap.content_hash != manifest.content_hash {
            return Err(RankingError::Io(format!("content hash mismatch: manifest {} vs records {}", manifest.content_hash, snap.content_hash)));
        }
        Ok(Self { history: vec![Arc::new(snap)] })
    }
}

/// Read study records from a JSON-lines file.
pub fn read_records(path: &Path) -> Result<Vec<StudyRecord>, RankingError> {
    let f = std::fs::File::open(path).map_err(|e| RankingError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| RankingError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RankingError::Malformed(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use CategoryTag::*;

    fn gen(model: &str, task: usize, ok: bool) -> StudyRecord {
        StudyRecord::new(model, format!("Python/{task}"), LanguageId::Python, Stage::Generate, ok)
    }

    fn refine(model: &str, task: usize, pct: Option<f64>) -> StudyRecord {
        let r = StudyRecord::new(model, format!("Rust/{task}"), LanguageId::Rust, Stage::Refine, true).with_tags([Array]);
        match pct {
            Some(p) => r.with_improvement(Metric::ExecutionTime, p),
            None => r,
        }
    }

    #[test]
    fn language_level_pass_rate() {
        let records: Vec<_> = (0..164).map(|i| gen("gpt-4o", i, i < 153)).collect();
        let mut mem = RankingMemory::new();
        let snap = mem.ingest(&records).unwrap();
        let key = RankKey::new(Stage::Generate, LanguageId::Python, None, None).unwrap();
        let e = &snap.entries(&key)[0];
        assert_eq!((e.score * 10_000.0).round() as u64, 9329);
        assert_eq!(e.support, 164);
    }

    #[test]
    fn weighted_sum_examples() {
        let key = RankKey::new(Stage::Refine, LanguageId::Rust, Some(Array), Some(Metric::ExecutionTime)).unwrap();
        let rs = vec![refine("m", 0, Some(20.0)), refine("m", 1, None), refine("m", 2, Some(30.0))];
        assert!((weighted_score("m", &key, &rs).unwrap() - 0.5).abs() < 1e-12);
        let zeros = vec![refine("m", 0, Some(0.0)), refine("m", 1, Some(-4.0))];
        assert_eq!(weighted_score("m", &key, &zeros).unwrap(), 0.0);
        let extreme = vec![refine("m", 0, Some(99.99))];
        assert!((weighted_score("m", &key, &extreme).unwrap() - 0.9999).abs() < 1e-12);
        let gkey = RankKey::new(Stage::Generate, LanguageId::Rust, None, None).unwrap();
        assert_eq!(weighted_score("m", &gkey, &rs), Err(RankingError::InvalidKey(gkey)));
    }

    #[test]
    fn key_validation() {
        assert!(RankKey::new(Stage::Refine, LanguageId::Rust, None, None).is_err());
        assert!(RankKey::new(Stage::Fix, LanguageId::Rust, None, Some(Metric::ExecutionTime)).is_err());
    }

    fn scored(model: &str, tag: CategoryTag, score_pct: f64, lang_extra: usize) -> Vec<StudyRecord> {
        // One refine record per tag gives score = pct/100 under that tag.
        let mut v = vec![StudyRecord::new(model, format!("{model}-{tag:?}"), LanguageId::Rust, Stage::Refine, true)
            .with_tags([tag])
            .with_improvement(Metric::ExecutionTime, score_pct)];
        for i in 0..lang_extra {
            v.push(StudyRecord::new(model, format!("{model}-extra{i}"), LanguageId::Rust, Stage::Refine, true).with_improvement(Metric::ExecutionTime, 50.0));
        }
        v
    }

    #[test]
    fn top_k_orders_and_aggregates() {
        let mut mem = RankingMemory::new();
        let mut rs = Vec::new();
        rs.extend(scored("A", Array, 90.0, 0));
        rs.extend(scored("B", Array, 80.0, 0));
        rs.extend(scored("C", Array, 70.0, 0));
        let snap = mem.ingest(&rs).unwrap();
        let t = BTreeSet::from([Array]);
        assert_eq!(snap.top_k_for(Stage::Refine, LanguageId::Rust, &t, Some(Metric::ExecutionTime), 5).unwrap(), ["A", "B", "C"]);
        assert_eq!(snap.top_k_for(Stage::Refine, LanguageId::Rust, &t, Some(Metric::ExecutionTime), 2).unwrap(), ["A", "B"]);

        let mut mem = RankingMemory::new();
        let mut rs = Vec::new();
        rs.extend(scored("A", Array, 50.0, 0));
        rs.extend(scored("A", Math, 40.0, 0));
        rs.extend(scored("B", Array, 60.0, 0));
        rs.extend(scored("B", Math, 20.0, 0));
        let snap = mem.ingest(&rs).unwrap();
        let t = BTreeSet::from([Array, Math]);
        assert_eq!(snap.top_k_for(Stage::Refine, LanguageId::Rust, &t, Some(Metric::ExecutionTime), 5).unwrap(), ["A", "B"]);
    }

    #[test]
    fn ties_break_on_language_then_id() {
        let mut mem = RankingMemory::new();
        let mut rs = Vec::new();
        rs.extend(scored("zeta", Array, 50.0, 1));
        rs.extend(scored("beta", Array, 50.0, 0));
        rs.extend(scored("alpha", Array, 50.0, 0));
        let snap = mem.ingest(&rs).unwrap();
        let t = BTreeSet::from([Array]);
        assert_eq!(snap.top_k_for(Stage::Refine, LanguageId::Rust, &t, Some(Metric::ExecutionTime), 5).unwrap(), ["zeta", "alpha", "beta"]);
    }

    #[test]
    fn missing_keys() {
        let snap = MemorySnapshot::empty();
        let t = BTreeSet::from([Array]);
        assert!(matches!(snap.top_k_for(Stage::Fix, LanguageId::Go, &t, None, 5), Err(RankingError::NoEntries(_))));
        assert_eq!(snap.top_k_for(Stage::Fix, LanguageId::Go, &t, None, 0), Err(RankingError::InvalidK));
    }

    #[test]
    fn ingest_idempotent_and_conflicts() {
        let mut mem = RankingMemory::new();
        let rs: Vec<_> = (0..10).map(|i| gen("m", i, i % 2 == 0)).collect();
        let a = mem.ingest(&rs).unwrap();
        let b = mem.ingest(&rs).unwrap();
        assert_eq!(a, b);
        assert_eq!(mem.versions(), [0, 1]);
        let err = mem.ingest(&[gen("m", 0, false)]).unwrap_err();
        assert!(matches!(err, RankingError::Conflict { ref first, ref second, .. } if first == "outcome=true" && second == "outcome=false"));
    }

    #[test]
    fn register_and_rollback() {
        let mut mem = RankingMemory::new();
        let base = mem.ingest(&scored("A", Array, 40.0, 0)).unwrap();
        let t = BTreeSet::from([Array]);
        let snap = mem.register_model("N", &scored("N", Array, 95.0, 0)).unwrap();
        assert_eq!(snap.top_k_for(Stage::Refine, LanguageId::Rust, &t, Some(Metric::ExecutionTime), 5).unwrap()[0], "N");
        assert!(mem.register_model("N", &scored("X", Array, 1.0, 0)).is_err());
        let back = mem.rollback(base.version).unwrap();
        assert_eq!(back, base);
        assert!(!mem.current().models().contains("N"));

        // A model with only generate records stays out of refine rankings.
        let snap = mem.register_model("G", &[gen("G", 0, true)]).unwrap();
        assert!(!snap.top_k_for(Stage::Refine, LanguageId::Rust, &t, Some(Metric::ExecutionTime), 5).unwrap().contains(&"G".to_string()));
        assert_eq!(snap.top_k_for(Stage::Generate, LanguageId::Python, &BTreeSet::new(), None, 5).unwrap(), ["G"]);
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut mem = RankingMemory::new();
        let mut rs: Vec<_> = (0..5).map(|i| gen("m", i, i != 3)).collect();
        rs.extend(scored("A", Math, 33.0, 2));
        mem.ingest(&rs).unwrap();
        mem.save(dir.path()).unwrap();
        let back = RankingMemory::load(dir.path()).unwrap();
        assert_eq!(back.current().content_hash, mem.current().content_hash);
        assert_eq!(back.current().version, mem.current().version);
        assert_eq!(back.current().tables(), mem.current().tables());
        std::fs::write(dir.path().join("records.jsonl"), "").unwrap();
        assert!(matches!(RankingMemory::load(dir.path()), Err(RankingError::Io(_))));
    }
}
