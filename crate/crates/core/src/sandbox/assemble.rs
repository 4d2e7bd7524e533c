//! Per-language assembly of one translation unit from problem + solution + tests.
//!
//! Two shapes of solution are handled. A continuation (the canonical body, or a
//! model answer that omits the signature) is appended to the prompt. A full
//! definition gets only the import-like preamble of the declaration, minus
//! lines it already contains.

use crate::bench::{LanguageId, ProblemSpec};

/// Name of the function under test.
pub fn entry_name(problem: &ProblemSpec) -> Option<String> {
    if let Some(ep) = &problem.entry_point {
        return Some(ep.clone());
    }
    let sig = problem.signature();
    let open = sig.find('(')?;
    let name: String = sig[..open]
        .chars()
        .rev()
        .skip_while(|c| c.is_whitespace())
        .take_while(|c| c.is_alphanumeric() || *c == '_')
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    (!name.is_empty()).then_some(name)
}

/// Whether `source` defines `name` itself rather than only its body.
pub fn defines_function(source: &str, name: &str, language: LanguageId) -> bool {
    match language {
        LanguageId::Python => source.lines().any(|l| l.trim_start().starts_with(&format!("def {name}("))),
        LanguageId::Rust => source.contains(&format!("fn {name}(")) || source.contains(&format!("fn {name}<")),
        LanguageId::Go => source.lines().any(|l| l.trim_start().starts_with("func ") && l.contains(&format!("{name}("))),
        LanguageId::Cpp | LanguageId::Java => source.lines().any(|l| {
            let Some(at) = l.find(&format!("{name}(")) else { return false };
            let before = l[..at].trim_end();
            let last_word = before.rsplit(|c: char| c.is_whitespace()).next().unwrap_or("");
            !before.is_empty()
                && before.ends_with(|c: char| c.is_alphanumeric() || "_>*&]".contains(c))
                && !matches!(last_word, "return" | "new" | "else")
                && !l.trim_end().ends_with(';')
        }),
    }
}

fn preamble_lines(text: &str, language: LanguageId) -> Vec<String> {
    let keep = |t: &str| match language {
        LanguageId::Python => t.starts_with("import ") || t.starts_with("from "),
        LanguageId::Rust => t.starts_with("use "),
        LanguageId::Cpp => t.starts_with("#include") || t.starts_with("using namespace"),
        LanguageId::Java => t.starts_with("import "),
        LanguageId::Go => false,
    };
    text.lines().map(str::trim).filter(|t| keep(t)).map(str::to_string).collect()
}

// Go import declarations, including parenthesised blocks.
fn go_imports(text: &str) -> String {
    let mut out = String::new();
    let mut in_block = false;
    for line in text.lines() {
        let t = line.trim();
        if in_block {
            out.push_str(line);
            out.push('\n');
            if t.starts_with(')') {
                in_block = false;
            }
        } else if t.starts_with("import") {
            out.push_str(line);
            out.push('\n');
            in_block = t.ends_with('(');
        }
    }
    out
}

fn strip_go_header(text: &str) -> String {
    let imports = go_imports(text);
    let import_lines: Vec<&str> = imports.lines().collect();
    text.lines()
        .filter(|l| !import_lines.contains(l) && !l.trim().starts_with("package "))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Build the single source file for `problem` with `solution_source` and the
/// chosen test text.
pub fn assemble_source(problem: &ProblemSpec, solution_source: &str, continuation: bool, tests: &str) -> String {
    let lang = problem.language;
    let mut out = String::new();
    if lang == LanguageId::Go {
        out.push_str(problem.test_setup.as_deref().unwrap_or("package main\n\nimport (\n    \"testing\"\n)\n"));
        out.push('\n');
        let decl = problem.declaration.as_deref().unwrap_or(&problem.prompt);
        let mut imports = problem.imports.clone().unwrap_or_else(|| go_imports(decl));
        if imports.is_empty() {
            imports = go_imports(&problem.prompt);
        }
        out.push_str(&imports);
        out.push('\n');
        if continuation {
            out.push_str(&strip_go_header(&problem.prompt));
            out.push('\n');
            out.push_str(solution_source);
        } else {
            out.push_str(&strip_go_header(solution_source));
        }
        out.push('\n');
        out.push_str(&strip_go_header(tests));
        out.push('\n');
        return out;
    }

    if continuation {
        out.push_str(&problem.prompt);
        out.push_str(solution_source);
    } else {
        let decl = problem.declaration.as_deref().unwrap_or(&problem.prompt);
        let present: Vec<&str> = solution_source.lines().map(str::trim).collect();
        for line in preamble_lines(decl, lang) {
            if !present.contains(&line.as_str()) {
                out.push_str(&line);
                out.push('\n');
            }
        }
        if lang == LanguageId::Rust && !solution_source.contains("fn main(") && decl.contains("fn main(") {
            out.push_str("fn main() {}\n");
        }
        if lang == LanguageId::Java && !solution_source.contains("class Solution") {
            out.push_str("class Solution {\n");
            out.push_str(solution_source);
            out.push_str("\n}\n");
        } else {
            out.push('\n');
            out.push_str(solution_source);
        }
    }
    out.push('\n');
    out.push_str(tests);
    out.push('\n');
    out
}
