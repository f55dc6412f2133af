//! Training samples pairing a description `x` and dependencies `d` with a
//! target `y`, their prompt rendering, and the JSONL dataset format.

mod dataset;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::describe::DescriptionRecord;
use crate::graph::DependencyTree;
use crate::ingest::FunctionRecord;

pub use dataset::{
    manifest_path, read_dataset, read_formal_records, write_dataset, DatasetError, DatasetManifest,
    TaskTokens, WriteOptions,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Code,
    Math,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dependency {
    pub name: String,
    #[serde(alias = "statement")]
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CafSample {
    pub task: Task,
    pub input_x: String,
    pub dependencies_d: Vec<Dependency>,
    pub target_y: String,
    pub provenance: String,
    #[serde(default)]
    pub alpha_tag: Option<String>,
    pub schema_version: u32,
}

/// A Lean 4 statement with its informal text and the library declarations
/// it relies on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormalStatementRecord {
    pub informal: String,
    #[serde(default)]
    pub formal: String,
    #[serde(default)]
    pub dependencies: Vec<Dependency>,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AssembleError {
    #[error("no function record for {0}")]
    MissingBody(String),
    #[error("no description for {0}")]
    MissingDescription(String),
    #[error("description belongs to {found}, not {expected}")]
    DescriptionMismatch { expected: String, found: String },
    #[error("record {0} has an empty formal statement")]
    EmptyFormal(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependencyScope {
    /// Every function in the tree.
    #[default]
    Transitive,
    /// Only functions the root calls directly.
    Direct,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyMode {
    #[default]
    Full,
    /// Decorators and the `def` header only.
    Signature,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssembleOptions {
    pub scope: DependencyScope,
    pub bodies: BodyMode,
    /// Leave `dependencies_d` empty.
    pub unaligned: bool,
}

/// Provenance string of a code sample: repository and root function.
pub fn code_provenance(repo_id: &str, root: &str) -> String {
    format!("{repo_id}#{root}")
}

/// Functions of `tree` other than its root, breadth first, each once.
pub fn dependency_order(tree: &DependencyTree, scope: DependencyScope) -> Vec<&str> {
    let mut seen = BTreeSet::from([tree.root.as_str()]);
    tree.iter_bfs()
        .filter(|(_, level)| match scope {
            DependencyScope::Transitive => true,
            DependencyScope::Direct => *level <= 2,
        })
        .filter_map(|(node, _)| {
            seen.insert(node.root.as_str())
                .then_some(node.root.as_str())
        })
        .collect()
}

pub fn assemble_code_sample(
    repo_id: &str,
    tree: &DependencyTree,
    bodies: &BTreeMap<String, FunctionRecord>,
    desc: Option<&DescriptionRecord>,
    options: &AssembleOptions,
) -> Result<CafSample, AssembleError> {
    let root = bodies
        .get(&tree.root)
        .ok_or_else(|| AssembleError::MissingBody(tree.root.clone()))?;
    let desc = desc
        .filter(|d| !d.text.trim().is_empty())
        .ok_or_else(|| AssembleError::MissingDescription(tree.root.clone()))?;
    if desc.function_id != tree.root {
        return Err(AssembleError::DescriptionMismatch {
            expected: tree.root.clone(),
            found: desc.function_id.clone(),
        });
    }
    let mut dependencies = Vec::new();
    for name in dependency_order(tree, options.scope) {
        let record = bodies
            .get(name)
            .ok_or_else(|| AssembleError::MissingBody(name.to_string()))?;
        let body = match options.bodies {
            BodyMode::Full => record.body_text.clone(),
            BodyMode::Signature => signature_of(&record.body_text).to_string(),
        };
        dependencies.push(Dependency {
            name: name.to_string(),
            body,
        });
    }
    if options.unaligned {
        dependencies.clear();
    }
    Ok(CafSample {
        task: Task::Code,
        input_x: desc.text.clone(),
        dependencies_d: dependencies,
        target_y: root.body_text.clone(),
        provenance: code_provenance(repo_id, &tree.root),
        alpha_tag: None,
        schema_version: SCHEMA_VERSION,
    })
}

pub fn assemble_math_sample(record: &FormalStatementRecord) -> Result<CafSample, AssembleError> {
    if record.formal.trim().is_empty() {
        return Err(AssembleError::EmptyFormal(record.source_id.clone()));
    }
    if record.informal.trim().is_empty() {
        return Err(AssembleError::MissingDescription(record.source_id.clone()));
    }
    Ok(CafSample {
        task: Task::Math,
        input_x: record.informal.clone(),
        dependencies_d: record.dependencies.clone(),
        target_y: record.formal.clone(),
        provenance: record.source_id.clone(),
        alpha_tag: None,
        schema_version: SCHEMA_VERSION,
    })
}

/// Source up to the colon closing the `def` header, decorators included.
pub fn signature_of(body: &str) -> &str {
    let Some(def_at) = find_def(body) else {
        return body;
    };
    let mut depth = 0i32;
    let mut quote: Option<char> = None;
    let mut chars = body[def_at..].char_indices();
    while let Some((i, c)) = chars.next() {
        if let Some(q) = quote {
            if c == '\\' {
                chars.next();
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '\'' | '"' => quote = Some(c),
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            ':' if depth == 0 => return &body[..def_at + i + 1],
            _ => {}
        }
    }
    body
}

fn find_def(body: &str) -> Option<usize> {
    let mut offset = 0;
    for line in body.split_inclusive('\n') {
        let trimmed = line.trim_start();
        let indent = line.len() - trimmed.len();
        for keyword in ["def ", "async def "] {
            if trimmed.starts_with(keyword) {
                return Some(offset + indent);
            }
        }
        offset += line.len();
    }
    None
}

const MATH_PROMPT_HEAD: &str = "Use the following pre-defined Lean 4 dependencies:\n";
const MATH_PROMPT_TAIL: &str = "\n\nBased on the context and the problem description, generate a single, syntactically correct Lean 4 formal statement that accurately captures the problem's meaning.\n\nProblem Description:\n";
const CODE_PROMPT_HEAD: &str = "Use the following pre-defined functions:\n";
const CODE_PROMPT_TAIL: &str = "\n\nBased on the context and the problem description, generate a syntactically correct function implementation that accurately captures the problem's meaning.\nProblem Description:\n";

/// Instruction text for a sample. Dependency bodies are separated by one
/// blank line.
pub fn render_prompt(sample: &CafSample) -> String {
    let (head, tail) = match sample.task {
        Task::Math => (MATH_PROMPT_HEAD, MATH_PROMPT_TAIL),
        Task::Code => (CODE_PROMPT_HEAD, CODE_PROMPT_TAIL),
    };
    let dependencies: Vec<&str> = sample
        .dependencies_d
        .iter()
        .map(|d| d.body.as_str())
        .collect();
    let mut out = String::with_capacity(head.len() + tail.len() + sample.input_x.len());
    out.push_str(head);
    out.push_str(&dependencies.join("\n\n"));
    out.push_str(tail);
    out.push_str(&sample.input_x);
    out
}
