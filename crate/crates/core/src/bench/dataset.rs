use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde_json::Value;

use super::{CategoryTag, LanguageId, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkFormat {
    HumanEvalX,
    EffiBenchX,
}

impl FromStr for BenchmarkFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "humanevalx" | "humaneval" | "humanevalpack" => Ok(Self::HumanEvalX),
            "effibenchx" | "effibench" => Ok(Self::EffiBenchX),
            _ => Err(DatasetError::UnknownFormat(s.to_string())),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at index {index}: {message}")]
    Malformed { index: usize, message: String },
    #[error("unknown benchmark format {0:?}")]
    UnknownFormat(String),
}

// Field aliases per format, first match wins.
struct Fields {
    task_id: &'static [&'static str],
    language: &'static [&'static str],
    prompt: &'static [&'static str],
    declaration: &'static [&'static str],
    test: &'static [&'static str],
    example_test: &'static [&'static str],
    canonical: &'static [&'static str],
    buggy: &'static [&'static str],
    entry_point: &'static [&'static str],
    test_setup: &'static [&'static str],
    imports: &'static [&'static str],
    workload: &'static [&'static str],
}

const HUMANEVAL_X: Fields = Fields {
    task_id: &["task_id"],
    language: &["language"],
    prompt: &["prompt"],
    declaration: &["declaration"],
    test: &["test"],
    example_test: &["example_test"],
    canonical: &["canonical_solution"],
    buggy: &["buggy_solution"],
    entry_point: &["entry_point"],
    test_setup: &["test_setup"],
    imports: &["import"],
    workload: &["workload"],
};

const EFFIBENCH_X: Fields = Fields {
    task_id: &["task_id", "id", "problem_id"],
    language: &["language", "lang"],
    prompt: &["prompt", "description", "markdown_description", "problem"],
    declaration: &["declaration", "starter_code"],
    test: &["test", "test_code", "test_runner"],
    example_test: &["example_test", "small_test_cases"],
    canonical: &["canonical_solution", "solution", "reference_solution"],
    buggy: &["buggy_solution"],
    entry_point: &["entry_point"],
    test_setup: &["test_setup"],
    imports: &["import", "imports"],
    workload: &["workload", "perf_input", "performance_test"],
};

fn field(rec: &serde_json::Map<String, Value>, names: &[&str]) -> Option<String> {
    names.iter().find_map(|n| match rec.get(*n) {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        _ => None,
    })
}

fn language_from_name(text: &str) -> Option<LanguageId> {
    let lower = text.to_ascii_lowercase();
    // Check the longer names first so "javascript" and "cpp" are not misread.
    if lower.contains("javascript") || lower.contains("js/") {
        return None;
    }
    [
        ("python", LanguageId::Python),
        ("cpp", LanguageId::Cpp),
        ("c++", LanguageId::Cpp),
        ("java", LanguageId::Java),
        ("rust", LanguageId::Rust),
        ("golang", LanguageId::Go),
        ("_go", LanguageId::Go),
        ("go/", LanguageId::Go),
    ]
    .into_iter()
    .find(|(k, _)| lower.contains(k))
    .map(|(_, l)| l)
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    let io = |source| DatasetError::Io { path: path.display().to_string(), source };
    let bytes = std::fs::read(path).map_err(io)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut s = String::new();
        flate2::read::GzDecoder::new(&bytes[..]).read_to_string(&mut s).map_err(io)?;
        Ok(s)
    } else {
        String::from_utf8(bytes).map_err(|e| io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
    }
}

/// Load a line-delimited JSON benchmark file (optionally gzip-compressed).
///
/// Records keep file order. The language comes from the record's `language`
/// field, else the `task_id` prefix (`"CPP/12"`), else the file name.
pub fn load_benchmark(path: &Path, format: BenchmarkFormat) -> Result<Vec<ProblemSpec>, DatasetError> {
    let text = read_text(path)?;
    let fields = match format {
        BenchmarkFormat::HumanEvalX => &HUMANEVAL_X,
        BenchmarkFormat::EffiBenchX => &EFFIBENCH_X,
    };
    let file_lang = path.file_name().and_then(|n| n.to_str()).and_then(language_from_name);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (index, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let bad = |message: String| DatasetError::Malformed { index, message };
        let value: Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let Value::Object(rec) = value else {
            return Err(bad("record is not a JSON object".into()));
        };
        let task_id = field(&rec, fields.task_id).ok_or_else(|| bad("missing task_id".into()))?;
        let language = match field(&rec, fields.language) {
            Some(l) => LanguageId::from_str(&l).map_err(|e| bad(e.to_string()))?,
            None => task_id
                .split('/')
                .next()
                .and_then(|p| p.parse::<LanguageId>().ok())
                .or(file_lang)
                .ok_or_else(|| bad(format!("cannot infer language of {task_id}")))?,
        };
        let prompt = field(&rec, fields.prompt).filter(|s| !s.trim().is_empty()).ok_or_else(|| bad("empty prompt".into()))?;
        let mut test_suite = field(&rec, fields.test).filter(|s| !s.trim().is_empty()).ok_or_else(|| bad("empty test suite".into()))?;
        let entry_point = field(&rec, fields.entry_point);
        // Original HumanEval defines check() without calling it.
        if language == LanguageId::Python {
            if let Some(ep) = &entry_point {
                if !test_suite.contains(&format!("check({ep})")) {
                    test_suite.push_str(&format!("\n\ncheck({ep})\n"));
                }
            }
        }
        if !seen.insert(task_id.clone()) {
            return Err(bad(format!("duplicate task_id {task_id}")));
        }
        out.push(ProblemSpec {
            task_id,
            language,
            prompt,
            declaration: field(&rec, fields.declaration),
            test_suite,
            example_test: field(&rec, fields.example_test),
            canonical_solution: field(&rec, fields.canonical),
            buggy_solution: field(&rec, fields.buggy),
            entry_point,
            test_setup: field(&rec, fields.test_setup),
            imports: field(&rec, fields.imports),
            tags: BTreeSet::new(),
            workload: field(&rec, fields.workload),
        });
    }
    if out.is_empty() {
        return Err(DatasetError::Malformed { index: 0, message: "no records".into() });
    }
    Ok(out)
}

/// Read a sidecar tags file: a JSON object mapping task_id to tag names.
pub fn load_tags(path: &Path) -> Result<BTreeMap<String, BTreeSet<CategoryTag>>, DatasetError> {
    let text = read_text(path)?;
    let raw: BTreeMap<String, Vec<String>> =
        serde_json::from_str(&text).map_err(|e| DatasetError::Malformed { index: 0, message: e.to_string() })?;
    raw.into_iter()
        .enumerate()
        .map(|(index, (task, names))| {
            let tags = names
                .iter()
                .map(|n| n.parse::<CategoryTag>())
                .collect::<Result<BTreeSet<_>, _>>()
                .map_err(|e| DatasetError::Malformed { index, message: format!("{task}: {e}") })?;
            Ok((task, tags))
        })
        .collect()
}

pub fn write_tags(path: &Path, tags: &BTreeMap<String, BTreeSet<CategoryTag>>) -> std::io::Result<()> {
    let named: BTreeMap<&String, Vec<&str>> =
        tags.iter().map(|(k, v)| (k, v.iter().map(|t| t.display_name()).collect())).collect();
    let json = serde_json::to_string_pretty(&named).map_err(std::io::Error::other)?;
    std::fs::write(path, json + "\n")
}

/// Attach sidecar tags to matching problems; returns how many were tagged.
pub fn apply_tags(problems: &mut [ProblemSpec], tags: &BTreeMap<String, BTreeSet<CategoryTag>>) -> usize {
    let mut n = 0;
    for p in problems.iter_mut() {
        if let Some(t) = tags.get(&p.task_id) {
            p.tags = t.clone();
            n += 1;
        }
    }
    n
}
