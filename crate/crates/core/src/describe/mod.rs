//! Natural-language descriptions for functions: docstrings first, then
//! README sections, then generated summaries for what is missing or weak.

mod summarize;

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::ingest::FunctionRecord;

pub use summarize::{
    clean_summary, render_summary_prompt, summary_template_hash, CacheEntry, CompletionRequest,
    CompletionTransport, HttpTransport, SummarizeError, SummarizerConfig, SummaryClient,
    TransportError, API_KEY_ENV, SUMMARY_TEMPLATE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Docstring,
    Readme,
    Generated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityFlag {
    TooShort,
    InterfaceOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionRecord {
    pub function_id: String,
    pub text: String,
    pub origin: Origin,
    #[serde(default)]
    pub quality_flags: BTreeSet<QualityFlag>,
    /// SHA-256 of the rendered summarization prompt, for generated text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
}

/// Thresholds deciding when a description gets replaced by a summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityPolicy {
    pub min_words: usize,
    /// Fraction of non-empty lines that must look like parameter/return
    /// documentation for the text to count as interface-only.
    pub interface_ratio: f64,
    /// Line prefixes marking parameter/return documentation.
    pub tags: Vec<String>,
}

impl Default for QualityPolicy {
    fn default() -> Self {
        let tags = [
            ":param",
            ":type",
            ":return",
            ":rtype",
            ":raises",
            ":arg",
            ":keyword",
            "@param",
            "@type",
            "@return",
            "@rtype",
            "@raise",
            "Args:",
            "Arguments:",
            "Parameters:",
            "Params:",
            "Returns:",
            "Return:",
            "Raises:",
            "Yields:",
            "Keyword Args:",
        ];
        QualityPolicy {
            min_words: 5,
            interface_ratio: 0.5,
            tags: tags.iter().map(|t| t.to_string()).collect(),
        }
    }
}

impl QualityPolicy {
    pub fn assess(&self, text: &str) -> BTreeSet<QualityFlag> {
        let mut flags = BTreeSet::new();
        if text.split_whitespace().count() < self.min_words {
            flags.insert(QualityFlag::TooShort);
        }
        if self.is_interface_only(text) {
            flags.insert(QualityFlag::InterfaceOnly);
        }
        flags
    }

    pub fn is_interface_only(&self, text: &str) -> bool {
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            return false;
        }
        let tagged = lines.iter().filter(|l| self.is_parameter_line(l)).count();
        tagged as f64 >= self.interface_ratio * lines.len() as f64
    }

    fn is_parameter_line(&self, line: &str) -> bool {
        self.tags.iter().any(|t| line.starts_with(t.as_str())) || is_typed_entry(line)
    }
}

/// `name (type): ...` or `name : type`, the entry shapes of Google and
/// NumPy style parameter lists.
fn is_typed_entry(line: &str) -> bool {
    let name_len = line
        .find(|c: char| !(c.is_alphanumeric() || c == '_' || c == '*'))
        .unwrap_or(line.len());
    if name_len == 0 {
        return false;
    }
    let rest = &line[name_len..];
    if let Some(after) = rest.strip_prefix(" (") {
        return after
            .find(')')
            .is_some_and(|i| after[i + 1..].starts_with(':'));
    }
    rest.starts_with(" : ")
}

/// Docstring when present, else the first README section whose heading
/// names the function, scored with the default [`QualityPolicy`].
pub fn extract_description(
    function: &FunctionRecord,
    readmes: &[(PathBuf, String)],
) -> Option<DescriptionRecord> {
    extract_description_with(function, readmes, &QualityPolicy::default())
}

pub fn extract_description_with(
    function: &FunctionRecord,
    readmes: &[(PathBuf, String)],
    policy: &QualityPolicy,
) -> Option<DescriptionRecord> {
    let (text, origin) = match function.docstring.as_deref().map(str::trim) {
        Some(doc) if !doc.is_empty() => (doc.to_string(), Origin::Docstring),
        _ => {
            let section = readmes
                .iter()
                .find_map(|(_, text)| readme_section(text, &function.name))?;
            (section, Origin::Readme)
        }
    };
    Some(DescriptionRecord {
        function_id: function.qualified_name.clone(),
        quality_flags: policy.assess(&text),
        text,
        origin,
        prompt_hash: None,
    })
}

pub fn needs_augmentation(desc: Option<&DescriptionRecord>, policy: &QualityPolicy) -> bool {
    match desc {
        None => true,
        Some(d) => {
            let flags = policy.assess(&d.text);
            flags.contains(&QualityFlag::TooShort) || flags.contains(&QualityFlag::InterfaceOnly)
        }
    }
}

/// Body of the first Markdown section whose ATX heading contains `name` as a
/// whole word. The section runs to the next heading of the same or a higher
/// level. Sections with an empty body are skipped.
pub fn readme_section(markdown: &str, name: &str) -> Option<String> {
    let lines: Vec<&str> = markdown.lines().collect();
    let mut in_fence = false;
    let mut headings = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let trimmed = line.trim_start();
        if trimmed.starts_with("```") || trimmed.starts_with("~~~") {
            in_fence = !in_fence;
            continue;
        }
        if !in_fence {
            if let Some((level, title)) = atx_heading(line) {
                headings.push((i, level, title));
            }
        }
    }
    for (n, &(start, level, title)) in headings.iter().enumerate() {
        if !contains_word(title, name) {
            continue;
        }
        let end = headings[n + 1..]
            .iter()
            .find(|(_, l, _)| *l <= level)
            .map_or(lines.len(), |(i, _, _)| *i);
        let body = lines[start + 1..end].join("\n");
        let body = body.trim();
        if !body.is_empty() {
            return Some(body.to_string());
        }
    }
    None
}

fn atx_heading(line: &str) -> Option<(usize, &str)> {
    if line.starts_with("    ") {
        return None;
    }
    let trimmed = line.trim_start();
    let level = trimmed.chars().take_while(|&c| c == '#').count();
    if level == 0 || level > 6 {
        return None;
    }
    let rest = &trimmed[level..];
    if !(rest.is_empty() || rest.starts_with(' ') || rest.starts_with('\t')) {
        return None;
    }
    Some((level, rest.trim().trim_end_matches('#').trim_end()))
}

/// `word` occurs in `text` delimited by characters that cannot continue an
/// identifier.
pub fn contains_word(text: &str, word: &str) -> bool {
    if word.is_empty() {
        return false;
    }
    let is_ident = |c: char| c.is_alphanumeric() || c == '_';
    text.match_indices(word).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let after = text[i + word.len()..].chars().next();
        !before.is_some_and(is_ident) && !after.is_some_and(is_ident)
    })
}
