use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{render_prompt, CafSample, FormalStatementRecord, Task, SCHEMA_VERSION};
use crate::digest::{sha256_hex, write_atomic};
use crate::metrics::{SplitTokenizer, Tokenizer};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: unsupported schema version {found}")]
    Schema {
        path: PathBuf,
        line: usize,
        found: u32,
    },
}

pub struct WriteOptions<'a> {
    pub tokenizer: &'a dyn Tokenizer,
    /// Samples whose rendered prompt is longer than this many tokens are
    /// left out and counted in the manifest.
    pub token_budget: Option<usize>,
    /// Free-form markers copied into the manifest.
    pub flags: BTreeSet<String>,
}

impl Default for WriteOptions<'_> {
    fn default() -> Self {
        WriteOptions {
            tokenizer: &SplitTokenizer,
            token_budget: None,
            flags: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTokens {
    pub prompt: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub file: String,
    pub sample_count: usize,
    pub counts: BTreeMap<Task, usize>,
    pub tokens: BTreeMap<Task, TaskTokens>,
    pub tokenizer: String,
    pub token_budget: Option<usize>,
    pub dropped_oversized: usize,
    /// SHA-256 of the dataset file bytes.
    pub content_hash: String,
    #[serde(default)]
    pub flags: BTreeSet<String>,
}

/// `data/code.jsonl` → `data/code.manifest.json`.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("manifest.json")
}

/// Writes one JSON object per line, in stream order, then the manifest
/// beside it. Both files are replaced atomically.
pub fn write_dataset<I>(
    samples: I,
    path: &Path,
    options: &WriteOptions<'_>,
) -> Result<DatasetManifest, DatasetError>
where
    I: IntoIterator,
    I::Item: Borrow<CafSample>,
{
    let mut body = Vec::new();
    let mut counts = BTreeMap::from([(Task::Code, 0), (Task::Math, 0)]);
    let mut tokens = BTreeMap::from([
        (Task::Code, TaskTokens::default()),
        (Task::Math, TaskTokens::default()),
    ]);
    let mut dropped = 0;
    for sample in samples {
        let sample = sample.borrow();
        let prompt_tokens = options.tokenizer.count(&render_prompt(sample));
        if options
            .token_budget
            .is_some_and(|budget| prompt_tokens > budget)
        {
            dropped += 1;
            continue;
        }
        serde_json::to_writer(&mut body, sample).expect("samples serialize");
        body.push(b'\n');
        *counts.entry(sample.task).or_default() += 1;
        let t = tokens.entry(sample.task).or_default();
        t.prompt += prompt_tokens;
        t.target += options.tokenizer.count(&sample.target_y);
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    write_atomic(path, &body).map_err(io(path))?;
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        file: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sample_count: counts.values().sum(),
        counts,
        tokens,
        tokenizer: options.tokenizer.name().to_string(),
        token_budget: options.token_budget,
        dropped_oversized: dropped,
        content_hash: sha256_hex(&body),
        flags: options.flags.clone(),
    };
    let manifest_file = manifest_path(path);
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(&manifest_file, &json).map_err(io(&manifest_file))?;
    Ok(manifest)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map(|value| (i + 1, value))
                .map_err(|e| DatasetError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}

pub fn read_dataset(path: &Path) -> Result<Vec<CafSample>, DatasetError> {
    read_jsonl::<CafSample>(path)?
        .into_iter()
        .map(|(line, sample)| {
            if sample.schema_version == SCHEMA_VERSION {
                Ok(sample)
            } else {
                Err(DatasetError::Schema {
                    path: path.to_path_buf(),
                    line,
                    found: sample.schema_version,
                })
            }
        })
        .collect()
}

/// Reads formal statement records, one JSON object per line with fields
/// `informal`, `formal`, `dependencies` and `source_id`.
pub fn read_formal_records(path: &Path) -> Result<Vec<FormalStatementRecord>, DatasetError> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}
