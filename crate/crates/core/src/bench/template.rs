use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateKind {
    Generation,
    Fixing,
    Refinement,
    Classification,
}

impl TemplateKind {
    pub fn file_name(self) -> &'static str {
        match self {
            Self::Generation => "generation.txt",
            Self::Fixing => "fixing.txt",
            Self::Refinement => "refinement.txt",
            Self::Classification => "classification.txt",
        }
    }
}

/// Placeholder names recognised by [`PromptTemplate::render`]. Any other
/// bracketed text (for example `[Your Code Here]`) is literal template text.
pub const KNOWN_PLACEHOLDERS: &[&str] = &[
    "language",
    "signature",
    "task description",
    "example test",
    "buggy solution",
    "small test cases",
    "Original Code",
    "overhead analysis report",
    "available_tags",
    "problem_description",
    "problem_solution",
    "test feedback",
];

pub const GENERATION_TEMPLATE: &str = "\
Please complete [language] code [signature] based on the task description and test cases.

**Task Description:** [task description]

**Test Case:** [example test]

**Rules:**
- Encapsulate the code within a [language] code block (i.e., ```[language]\\n[Your Code Here]\\n```)
- **Do not** include the test case within the code block.
- Ensure the provided test case passes with your solution.
- Implement **all logic** strictly **within a single method**.
- **Do not** split code into multiple methods, helper functions, or classes for any reason.
  - There should be **only one method** in your implementation.
  - **Do not** change the function signature.

**Solution Code:**

[Your Code Here]
";

pub const FIXING_TEMPLATE: &str = "\
Please fix the following code:
[buggy solution]
";

/// Fixing prompt that also carries the task and the failing test output.
pub const FIXING_TEMPLATE_EXTENDED: &str = "\
Please fix the following code:
[buggy solution]

**Task Description:** [task description]

**Test Results:**
[test feedback]
";

pub const REFINEMENT_TEMPLATE: &str = "\
Optimize the efficiency of the following [language] code based on the task, test case, and overhead analysis provided.
Ensure the optimized code can pass the given test case.

**Task Description:**
[task description]

**Test Case:**
[small test cases]

**Original Code:**
[Original Code]

**Overhead Analysis:**
[overhead analysis report]

**Optimization Rules:**
- Focus solely on code optimization.
- Encapsulate the code within a [language] code block (i.e., ```[language]\\n[Your Code Here]\\n```)
- **Do not** include the test case within the code block.
- Ensure the provided test case passes with your solution.
- Implement **all logic** strictly **within a single method**.
- **Do not** split code into multiple methods, helper functions, or classes for any reason.
  - There should be **only one method** in your implementation.
  - **Do not** change the function signature.

**Optimized Code:**

[Your Code Here]
";

pub const CLASSIFICATION_TEMPLATE: &str = "\
Please classify the following coding problem by assigning the appropriate tags based on the problem description and solution:

**Problem Description:** [problem_description]

**Problem Solution:** [problem_solution]

**Available Tags:**
[available_tags]

Please select the appropriate tags from the available tags based on the nature of the problem.
If the problem is not related to any of the available tags, please select the closest tag.
";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("missing binding for placeholder [{0}]")]
    MissingBinding(String),
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(kind: TemplateKind, body: impl Into<String>) -> Self {
        Self { kind, body: body.into() }
    }

    pub fn default_for(kind: TemplateKind) -> Self {
        let body = match kind {
            TemplateKind::Generation => GENERATION_TEMPLATE,
            TemplateKind::Fixing => FIXING_TEMPLATE,
            TemplateKind::Refinement => REFINEMENT_TEMPLATE,
            TemplateKind::Classification => CLASSIFICATION_TEMPLATE,
        };
        Self::new(kind, body)
    }

    /// Known placeholders occurring in the body, in first-occurrence order.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for seg in scan(&self.body) {
            if let Segment::Placeholder(name) = seg {
                if !out.contains(&name) {
                    out.push(name);
                }
            }
        }
        out
    }

    /// Substitute every known placeholder. Bindings naming placeholders absent
    /// from the body are ignored with a warning.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        let used = self.placeholders();
        for key in bindings.keys() {
            if !used.contains(&key.as_str()) {
                tracing::warn!(placeholder = %key, kind = ?self.kind, "binding not used by template");
            }
        }
        let mut out = String::with_capacity(self.body.len());
        for seg in scan(&self.body) {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Placeholder(name) => {
                    let v = bindings.get(name).ok_or_else(|| TemplateError::MissingBinding(name.to_string()))?;
                    out.push_str(v);
                }
            }
        }
        Ok(out)
    }
}

enum Segment<'a> {
    Text(&'a str),
    Placeholder(&'static str),
}

fn scan(body: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let hit = after
            .find(']')
            .and_then(|close| KNOWN_PLACEHOLDERS.iter().find(|p| **p == &after[..close]).map(|p| (*p, close)));
        match hit {
            Some((name, close)) => {
                out.push(Segment::Text(&rest[..open]));
                out.push(Segment::Placeholder(name));
                rest = &after[close + 1..];
            }
            None => {
                out.push(Segment::Text(&rest[..=open]));
                rest = after;
            }
        }
    }
    out.push(Segment::Text(rest));
    out
}

/// The four prompt templates used by the engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub generation: PromptTemplate,
    pub fixing: PromptTemplate,
    pub refinement: PromptTemplate,
    pub classification: PromptTemplate,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            generation: PromptTemplate::default_for(TemplateKind::Generation),
            fixing: PromptTemplate::default_for(TemplateKind::Fixing),
            refinement: PromptTemplate::default_for(TemplateKind::Refinement),
            classification: PromptTemplate::default_for(TemplateKind::Classification),
        }
    }
}

impl TemplateSet {
    /// Defaults, with the fixing prompt swapped for the variant that also
    /// shows the task and test output.
    pub fn with_extended_fixing(mut self) -> Self {
        self.fixing = PromptTemplate::new(TemplateKind::Fixing, FIXING_TEMPLATE_EXTENDED);
        self
    }

    /// Override defaults with `<kind>.txt` files found in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::default();
        for kind in [TemplateKind::Generation, TemplateKind::Fixing, TemplateKind::Refinement, TemplateKind::Classification] {
            let path = dir.join(kind.file_name());
            if !path.exists() {
                continue;
            }
            let body = std::fs::read_to_string(&path)
                .map_err(|e| TemplateError::Io { path: path.display().to_string(), message: e.to_string() })?;
            *set.get_mut(kind) = PromptTemplate::new(kind, body);
        }
        Ok(set)
    }

    pub fn get(&self, kind: TemplateKind) -> &PromptTemplate {
        match kind {
            TemplateKind::Generation => &self.generation,
            TemplateKind::Fixing => &self.fixing,
            TemplateKind::Refinement => &self.refinement,
            TemplateKind::Classification => &self.classification,
        }
    }

    fn get_mut(&mut self, kind: TemplateKind) -> &mut PromptTemplate {
        match kind {
            TemplateKind::Generation => &mut self.generation,
            TemplateKind::Fixing => &mut self.fixing,
            TemplateKind::Refinement => &mut self.refinement,
            TemplateKind::Classification => &mut self.classification,
        }
    }
}
