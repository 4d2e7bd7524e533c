//! Consensus tagging of problems by several model annotators.
//!
//! Each annotator sees the classification prompt and answers with tag names.
//! A tag is kept when at least two annotators chose it. When no tag reaches
//! two votes, the voted tag with the highest taxonomy frequency is used.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bench::{CategoryTag, ProblemSpec, TemplateError, TemplateSet};
use crate::gateway::{CallLedger, ChatService, Purpose};

/// Votes a tag needs to enter the consensus set.
pub const MIN_VOTES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagVote {
    pub annotator_id: String,
    pub tags: BTreeSet<CategoryTag>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub tags: BTreeSet<CategoryTag>,
    pub per_tag_votes: BTreeMap<CategoryTag, usize>,
    pub fallback_used: bool,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("need an odd number of at least 3 annotators, got {0}")]
    AnnotatorCount(usize),
    #[error("every annotator vote was empty")]
    ClassificationFailed,
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Parsed tags plus the names that are not in the taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedTags {
    pub tags: BTreeSet<CategoryTag>,
    pub unknown: Vec<String>,
}

/// Read tag names out of a free-form annotator response.
///
/// Lines are stripped of any `label:` prefix, split on commas, semicolons and
/// the word "and", and each piece is matched case-insensitively against the
/// taxonomy.
pub fn parse_tags(response: &str) -> ParsedTags {
    let mut out = ParsedTags::default();
    for line in response.lines() {
        let line = match line.rfind(':') {
            Some(i) => &line[i + 1..],
            None => line,
        };
        for piece in line.split([',', ';', '|']).flat_map(|p| p.split(" and ")) {
            let cleaned = piece
                .trim()
                .trim_start_matches(|c: char| c == '-' || c == '*' || c == '•' || c.is_ascii_digit() || c == '.' || c == ')')
                .trim_matches(|c: char| c == '*' || c == '`' || c == '"' || c == '\'' || c == '[' || c == ']' || c == '.' || c.is_whitespace());
            if cleaned.is_empty() {
                continue;
            }
            match CategoryTag::parse_loose(cleaned) {
                Some(t) => {
                    out.tags.insert(t);
                }
                None => out.unknown.push(cleaned.to_string()),
            }
        }
    }
    out
}

pub fn available_tags_text() -> String {
    CategoryTag::ALL.iter().map(|t| t.display_name()).collect::<Vec<_>>().join(", ")
}

/// Ask every annotator to classify `problem`. A failed annotator contributes
/// an empty vote.
pub fn collect_votes(
    problem: &ProblemSpec,
    annotators: &[String],
    chat: &dyn ChatService,
    templates: &TemplateSet,
    sink: &CallLedger,
) -> Result<Vec<TagVote>, TaxonomyError> {
    if annotators.len() < 3 || annotators.len() % 2 == 0 {
        return Err(TaxonomyError::AnnotatorCount(annotators.len()));
    }
    let bindings = BTreeMap::from([
        ("problem_description".to_string(), problem.prompt.clone()),
        ("problem_solution".to_string(), problem.canonical_solution.clone().unwrap_or_default()),
        ("available_tags".to_string(), available_tags_text()),
    ]);
    let prompt = templates.classification.render(&bindings)?;
    Ok(annotators
        .iter()
        .map(|id| {
            let tags = match chat.complete(id, &prompt, Purpose::Classify, sink) {
                Ok(ex) => {
                    let parsed = parse_tags(&ex.response_text);
                    if !parsed.unknown.is_empty() {
                        tracing::warn!(annotator = %id, task = %problem.task_id, unknown = ?parsed.unknown, "dropping out-of-taxonomy tags");
                    }
                    parsed.tags
                }
                Err(e) => {
                    tracing::warn!(annotator = %id, task = %problem.task_id, error = %e, "annotator failed");
                    BTreeSet::new()
                }
            };
            TagVote { annotator_id: id.clone(), tags }
        })
        .collect())
}

pub fn consensus(votes: &[TagVote]) -> Result<ConsensusResult, TaxonomyError> {
    if votes.len() < 3 {
        return Err(TaxonomyError::AnnotatorCount(votes.len()));
    }
    let mut per_tag_votes = BTreeMap::new();
    for v in votes {
        for t in &v.tags {
            *per_tag_votes.entry(*t).or_insert(0) += 1;
        }
    }
    let tags: BTreeSet<CategoryTag> = per_tag_votes.iter().filter(|(_, n)| **n >= MIN_VOTES).map(|(t, _)| *t).collect();
    if !tags.is_empty() {
        return Ok(ConsensusResult { tags, per_tag_votes, fallback_used: false });
    }
    // CategoryTag's order is descending frequency, so the first voted tag wins ties too.
    let best = per_tag_votes.keys().min_by_key(|t| (std::cmp::Reverse(t.taxonomy_frequency()), **t)).copied();
    match best {
        Some(t) => Ok(ConsensusResult { tags: BTreeSet::from([t]), per_tag_votes, fallback_used: true }),
        None => Err(TaxonomyError::ClassificationFailed),
    }
}
