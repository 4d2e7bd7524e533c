//! Benchmark data model: languages, the category taxonomy, problems and
//! candidate solutions, plus dataset loading, prompt templates and
//! code-block extraction.

mod dataset;
mod extract;
mod template;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use dataset::{apply_tags, load_benchmark, load_tags, write_tags, BenchmarkFormat, DatasetError};
pub use extract::{extract_code_block, Extracted};
pub use template::{
    PromptTemplate, TemplateError, TemplateKind, TemplateSet, FIXING_TEMPLATE, FIXING_TEMPLATE_EXTENDED,
    GENERATION_TEMPLATE, CLASSIFICATION_TEMPLATE, KNOWN_PLACEHOLDERS, REFINEMENT_TEMPLATE,
};

#[derive(Debug, thiserror::Error)]
#[error("unknown {what}: {value:?}")]
pub struct ParseNameError {
    what: &'static str,
    value: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageId {
    Python,
    Java,
    Cpp,
    Go,
    Rust,
}

impl LanguageId {
    pub const ALL: [LanguageId; 5] = [Self::Python, Self::Java, Self::Cpp, Self::Go, Self::Rust];

    /// Lowercase identifier, also used as the code-fence label.
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Python => "python",
            Self::Java => "java",
            Self::Cpp => "cpp",
            Self::Go => "go",
            Self::Rust => "rust",
        }
    }

    /// Fence labels models commonly use for this language.
    pub fn fence_labels(self) -> &'static [&'static str] {
        match self {
            Self::Python => &["python", "py", "python3"],
            Self::Java => &["java"],
            Self::Cpp => &["cpp", "c++", "cxx", "cc"],
            Self::Go => &["go", "golang"],
            Self::Rust => &["rust", "rs"],
        }
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LanguageId {
    type Err = ParseNameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|l| l.fence_labels().contains(&lower.as_str()))
            .ok_or(ParseNameError { what: "language", value: s.to_string() })
    }
}

/// The ten-label problem taxonomy, in descending order of benchmark frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CategoryTag {
    Array,
    Math,
    String,
    Counting,
    NumberTheory,
    Simulation,
    Sorting,
    Enumeration,
    GreedyAlgorithm,
    HashTable,
}

impl CategoryTag {
    pub const ALL: [CategoryTag; 10] = [
        Self::Array,
        Self::Math,
        Self::String,
        Self::Counting,
        Self::NumberTheory,
        Self::Simulation,
        Self::Sorting,
        Self::Enumeration,
        Self::GreedyAlgorithm,
        Self::HashTable,
    ];

    /// Number of HumanEval-X problems carrying this label.
    pub fn taxonomy_frequency(self) -> u32 {
        match self {
            Self::Array => 77,
            Self::Math => 76,
            Self::String => 74,
            Self::Counting => 50,
            Self::NumberTheory => 33,
            Self::Simulation => 32,
            Self::Sorting => 29,
            Self::Enumeration => 12,
            Self::GreedyAlgorithm => 11,
            Self::HashTable => 11,
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::Array => "Array",
            Self::Math => "Math",
            Self::String => "String",
            Self::Counting => "Counting",
            Self::NumberTheory => "Number Theory",
            Self::Simulation => "Simulation",
            Self::Sorting => "Sorting",
            Self::Enumeration => "Enumeration",
            Self::GreedyAlgorithm => "Greedy Algorithm",
            Self::HashTable => "Hash Table",
        }
    }

    /// Case-, space- and punctuation-insensitive lookup. Accepts the short
    /// forms "Greedy" and "Num Theory".
    pub fn parse_loose(s: &str) -> Option<Self> {
        let key: std::string::String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<std::string::String>().to_ascii_lowercase();
        let tag = match key.as_str() {
            "array" | "arrays" => Self::Array,
            "math" | "mathematics" => Self::Math,
            "string" | "strings" => Self::String,
            "counting" => Self::Counting,
            "numbertheory" | "numtheory" => Self::NumberTheory,
            "simulation" => Self::Simulation,
            "sorting" | "sort" => Self::Sorting,
            "enumeration" => Self::Enumeration,
            "greedyalgorithm" | "greedy" => Self::GreedyAlgorithm,
            "hashtable" | "hashmap" => Self::HashTable,
            _ => return None,
        };
        Some(tag)
    }
}

impl fmt::Display for CategoryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for CategoryTag {
    type Err = ParseNameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_loose(s).ok_or(ParseNameError { what: "category tag", value: s.to_string() })
    }
}

/// One benchmark task in one language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub task_id: String,
    pub language: LanguageId,
    /// Signature plus docstring shown to the model.
    pub prompt: String,
    /// Language-specific preamble (imports, signature) used when assembling.
    #[serde(default)]
    pub declaration: Option<String>,
    pub test_suite: String,
    /// Prompt-visible example tests, when the benchmark provides them.
    #[serde(default)]
    pub example_test: Option<String>,
    #[serde(default)]
    pub canonical_solution: Option<String>,
    /// Known-bad implementation used by the repair study.
    #[serde(default)]
    pub buggy_solution: Option<String>,
    #[serde(default)]
    pub entry_point: Option<String>,
    /// Harness header placed before everything else (Go: package and test imports).
    #[serde(default)]
    pub test_setup: Option<String>,
    /// Import block the prompt relies on, when the benchmark lists it separately.
    #[serde(default)]
    pub imports: Option<String>,
    #[serde(default)]
    pub tags: BTreeSet<CategoryTag>,
    /// Input set used for performance measurement, when distinct from the tests.
    #[serde(default)]
    pub workload: Option<String>,
}

impl ProblemSpec {
    pub fn new(task_id: impl Into<String>, language: LanguageId, prompt: impl Into<String>, test_suite: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            language,
            prompt: prompt.into(),
            declaration: None,
            test_suite: test_suite.into(),
            example_test: None,
            canonical_solution: None,
            buggy_solution: None,
            entry_point: None,
            test_setup: None,
            imports: None,
            tags: BTreeSet::new(),
            workload: None,
        }
    }

    /// Best-effort function signature: the last line of the declaration (or
    /// prompt) that opens a function.
    pub fn signature(&self) -> String {
        let source = self.declaration.as_deref().unwrap_or(&self.prompt);
        source
            .lines()
            .filter(|l| l.contains('('))
            .filter(|l| {
                let t = l.trim_start();
                !(t.starts_with('#') || t.starts_with("//") || t.starts_with("*") || t.starts_with("/*"))
            })
            .last()
            .map(|l| l.trim().to_string())
            .unwrap_or_else(|| source.trim().to_string())
    }

    /// Tests bound to the "small test cases" slot of the refinement prompt.
    pub fn visible_tests(&self) -> &str {
        self.example_test.as_deref().filter(|t| !t.trim().is_empty()).unwrap_or(&self.test_suite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SolutionStage {
    Generate,
    Fix,
    Refine,
    Canonical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solution {
    /// Content address of `(source, produced_by, stage)`.
    pub id: String,
    pub source: String,
    /// Model identifier, `"canonical"` or `"buggy"`.
    pub produced_by: String,
    pub stage: SolutionStage,
    pub parent: Option<String>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SolutionError {
    #[error("solution source is empty")]
    EmptySource,
    #[error("refined solutions require a parent")]
    MissingParent,
}

impl Solution {
    pub fn new(
        source: impl Into<String>,
        produced_by: impl Into<String>,
        stage: SolutionStage,
        parent: Option<&Solution>,
    ) -> Result<Self, SolutionError> {
        let source = source.into();
        if source.trim().is_empty() {
            return Err(SolutionError::EmptySource);
        }
        if stage == SolutionStage::Refine && parent.is_none() {
            return Err(SolutionError::MissingParent);
        }
        let produced_by = produced_by.into();
        let mut h = Sha256::new();
        h.update(source.as_bytes());
        h.update([0]);
        h.update(produced_by.as_bytes());
        h.update([0]);
        h.update(format!("{stage:?}").as_bytes());
        let id = hex::encode(&h.finalize()[..8]);
        Ok(Self { id, source, produced_by, stage, parent: parent.map(|p| p.id.clone()) })
    }

    pub fn canonical(problem: &ProblemSpec) -> Option<Self> {
        let src = problem.canonical_solution.as_deref()?;
        Self::new(src, "canonical", SolutionStage::Canonical, None).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn language_names_round_trip() {
        for l in LanguageId::ALL {
            assert_eq!(l.as_str().parse::<LanguageId>().unwrap(), l);
        }
        assert_eq!("C++".parse::<LanguageId>().unwrap(), LanguageId::Cpp);
        assert!("cobol".parse::<LanguageId>().is_err());
    }

    #[test]
    fn taxonomy_frequencies_descend() {
        let f: Vec<u32> = CategoryTag::ALL.iter().map(|t| t.taxonomy_frequency()).collect();
        assert_eq!(f, vec![77, 76, 74, 50, 33, 32, 29, 12, 11, 11]);
        for t in CategoryTag::ALL {
            assert_eq!(CategoryTag::parse_loose(t.display_name()), Some(t));
        }
        assert_eq!(CategoryTag::parse_loose("hash table"), Some(CategoryTag::HashTable));
        assert_eq!(CategoryTag::parse_loose("Greedy"), Some(CategoryTag::GreedyAlgorithm));
        assert_eq!(CategoryTag::parse_loose("Dynamic Programming"), None);
    }

    #[test]
    fn refine_solution_needs_parent() {
        assert_eq!(
            Solution::new("x", "m", SolutionStage::Refine, None).unwrap_err(),
            SolutionError::MissingParent
        );
        assert_eq!(Solution::new("  ", "m", SolutionStage::Generate, None).unwrap_err(), SolutionError::EmptySource);
        let p = Solution::new("x", "m", SolutionStage::Generate, None).unwrap();
        let r = Solution::new("y", "n", SolutionStage::Refine, Some(&p)).unwrap();
        assert_eq!(r.parent.as_deref(), Some(p.id.as_str()));
    }

    #[test]
    fn signature_is_last_function_line() {
        let p = ProblemSpec {
            declaration: Some("from typing import List\n\n\ndef f(xs: List[int]) -> int:\n".into()),
            ..ProblemSpec::new(
                "Python/0",
                LanguageId::Python,
                "from typing import List\n\n\ndef f(xs: List[int]) -> int:\n    \"\"\"doc (x)\"\"\"\n",
                "check(f)",
            )
        };
        assert_eq!(p.signature(), "def f(xs: List[int]) -> int:");
        assert_eq!(p.visible_tests(), "check(f)");
    }
}
