use super::LanguageId;

/// Result of pulling source code out of a model response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extracted {
    pub source: String,
    /// True only when a fence labelled with the requested language was found.
    pub exact_fence_match: bool,
}

struct Fence<'a> {
    label: &'a str,
    body: &'a str,
}

/// Select code from `response`: the first fence labelled with `language`, else
/// the first fence of any label, else the whole response.
pub fn extract_code_block(response: &str, language: LanguageId) -> Extracted {
    let fences = fences(response);
    let labels = language.fence_labels();
    if let Some(f) = fences.iter().find(|f| labels.contains(&f.label.to_ascii_lowercase().as_str())) {
        return Extracted { source: f.body.to_string(), exact_fence_match: true };
    }
    if let Some(f) = fences.first() {
        return Extracted { source: f.body.to_string(), exact_fence_match: false };
    }
    Extracted { source: response.to_string(), exact_fence_match: false }
}

// A fence opens on a line whose trimmed text starts with three backticks; the
// body is the exact text between the newline ending that line and the newline
// preceding the closing fence line. An unclosed fence runs to end of input.
fn fences(text: &str) -> Vec<Fence<'_>> {
    let mut out = Vec::new();
    let mut pos = 0;
    let mut open: Option<(&str, usize)> = None;
    while pos < text.len() {
        let end = text[pos..].find('\n').map(|i| pos + i).unwrap_or(text.len());
        let line = text[pos..end].trim_end_matches('\r');
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("```") {
            match open.take() {
                None => {
                    let label = rest.trim().split_whitespace().next().unwrap_or("");
                    let label = label.trim_start_matches('{').trim_end_matches('}');
                    open = Some((label, (end + 1).min(text.len())));
                }
                Some((label, start)) => {
                    let body_end = if pos > start { pos - 1 } else { start };
                    out.push(Fence { label, body: &text[start..body_end] });
                }
            }
        }
        pos = end + 1;
    }
    if let Some((label, start)) = open {
        let body = text[start.min(text.len())..].trim_end_matches('\n');
        out.push(Fence { label, body });
    }
    out
}
