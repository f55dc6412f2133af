//! End-to-end orchestration: scan → analyze → filter → augment → assemble →
//! mix, plus corpus statistics.
//!
//! Every stage writes its outputs under `<output_dir>/<stage>/` together
//! with a `stage.json` record holding the hash of everything it read. A
//! stage whose recorded input hash still matches and whose outputs are
//! intact is skipped. The run manifest collects the stage records and is
//! free of timings and absolute paths, so identical inputs give a
//! byte-identical manifest. Wall times go to `timings.json`.

mod config;
mod stages;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::describe::{CompletionTransport, SummarizeError};
use crate::digest::{sha256_hex, sha256_parts, write_atomic, TOOL_VERSION};
use crate::metrics::HistogramError;
use crate::mix::MixError;
use crate::sample::DatasetError;

pub use config::{
    load_config, validate_config, validate_config_at, AssembleSettings, ConfigError,
    FieldDiagnostic, MixSettings, RunConfig, RunMode,
};
pub use stages::{
    analyze_directory, resolve_total, sample_roots, FileEntry, RepoAnalysis, RepoDecision,
    RepoListing, ANALYSIS_CACHE_DIR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Scan,
    Analyze,
    Filter,
    Augment,
    Assemble,
    Mix,
    Stats,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Scan,
        Stage::Analyze,
        Stage::Filter,
        Stage::Augment,
        Stage::Assemble,
        Stage::Mix,
        Stage::Stats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Scan => "scan",
            Stage::Analyze => "analyze",
            Stage::Filter => "filter",
            Stage::Augment => "augment",
            Stage::Assemble => "assemble",
            Stage::Mix => "mix",
            Stage::Stats => "stats",
        }
    }

    /// Stages whose outputs this one reads.
    pub fn inputs(self, mode: RunMode) -> &'static [Stage] {
        match self {
            Stage::Scan => &[],
            Stage::Analyze => &[Stage::Scan],
            Stage::Filter => &[Stage::Analyze],
            Stage::Augment => &[Stage::Scan, Stage::Analyze, Stage::Filter],
            Stage::Assemble if mode == RunMode::MathOnly => &[],
            Stage::Assemble => &[Stage::Analyze, Stage::Filter, Stage::Augment],
            Stage::Mix => &[Stage::Assemble],
            Stage::Stats => &[Stage::Filter],
        }
    }

    /// Whether the stage only concerns repository code.
    pub fn is_code_stage(self) -> bool {
        matches!(
            self,
            Stage::Scan | Stage::Analyze | Stage::Filter | Stage::Augment | Stage::Stats
        )
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|stage| stage.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    ConfigInvalid(#[from] ConfigError),
    #[error("stage {stage} needs {} which has not been produced", .path.display())]
    StageInputMissing { stage: Stage, path: PathBuf },
    #[error("I/O on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {}: {source}", .path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Summarize(#[from] SummarizeError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error(transparent)]
    Histogram(#[from] HistogramError),
    #[error("CSV output {}: {message}", .path.display())]
    Csv { path: PathBuf, message: String },
    #[error("worker pool: {0}")]
    WorkerPool(String),
}

impl PipelineError {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::ConfigInvalid(_) => "ConfigInvalid",
            PipelineError::StageInputMissing { .. } => "StageInputMissing",
            PipelineError::Io { .. } => "IOFailure",
            PipelineError::Json { .. } => "MalformedJson",
            PipelineError::Summarize(SummarizeError::ServiceUnavailable { .. }) => {
                "ServiceUnavailable"
            }
            PipelineError::Summarize(SummarizeError::CacheMiss { .. }) => "CacheMiss",
            PipelineError::Summarize(SummarizeError::EmptyResponse(_)) => "EmptyResponse",
            PipelineError::Summarize(_) => "SummarizerFailure",
            PipelineError::Dataset(_) => "DatasetFailure",
            PipelineError::Mix(MixError::InsufficientSamples { .. }) => "InsufficientSamples",
            PipelineError::Histogram(HistogramError::EmptyInput) => "EmptyInput",
            PipelineError::Histogram(_) => "HistogramFailure",
            PipelineError::Csv { .. } => "IOFailure",
            PipelineError::WorkerPool(_) => "WorkerPool",
        }
    }

    /// `{"error": kind, "message": text, ...details}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut value = serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
        });
        match self {
            PipelineError::ConfigInvalid(e) => {
                value["diagnostics"] = serde_json::to_value(&e.diagnostics).unwrap_or_default();
            }
            PipelineError::StageInputMissing { stage, path } => {
                value["stage"] = stage.name().into();
                value["path"] = path.display().to_string().into();
            }
            PipelineError::Mix(MixError::InsufficientSamples {
                task,
                needed,
                available,
            }) => {
                value["task"] = serde_json::to_value(task).unwrap_or_default();
                value["needed"] = (*needed).into();
                value["available"] = (*available).into();
            }
            _ => {}
        }
        value
    }
}

pub(crate) fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// What a stage read and wrote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub tool_version: String,
    pub input_hash: String,
    /// Output path relative to the output directory → SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
    #[serde(default)]
    pub flags: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRun {
    pub stage: Stage,
    /// Inputs were unchanged and the outputs were left as they were.
    pub noop: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub mode: RunMode,
    pub stages: Vec<StageRecord>,
    /// Stages requested by this invocation, in order.
    pub executed: Vec<StageRun>,
    /// Written to `timings.json` instead of the manifest.
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

impl RunManifest {
    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    pub fn all_noop(&self) -> bool {
        self.executed.iter().all(|r| r.noop)
    }
}

/// A configured run. Reuse it to run several stage subsets.
pub struct Pipeline {
    config: RunConfig,
    transport: Option<Arc<dyn CompletionTransport>>,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self, PipelineError> {
        config.check()?;
        Ok(Pipeline {
            config,
            transport: None,
        })
    }

    /// Sends summarization requests through `transport` instead of HTTP.
    pub fn with_transport(mut self, transport: Arc<dyn CompletionTransport>) -> Self {
        self.transport = Some(transport);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Runs the requested stages in pipeline order.
    pub fn run(&self, requested: &[Stage]) -> Result<RunManifest, PipelineError> {
        let cfg = &self.config;
        let wanted: BTreeSet<Stage> = requested
            .iter()
            .copied()
            .filter(|s| {
                let keep = cfg.mode.uses_code() || !s.is_code_stage();
                if !keep {
                    log::info!("skipping {s}: not part of a {:?} run", cfg.mode);
                }
                keep
            })
            .collect();
        fs::create_dir_all(&cfg.output_dir).map_err(io_error(&cfg.output_dir))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallelism)
            .build()
            .map_err(|e| PipelineError::WorkerPool(e.to_string()))?;
        let store = Store {
            root: cfg.output_dir.clone(),
        };
        let mut ctx = stages::Context::new(cfg, &store, &pool, self.transport.clone())?;

        let mut executed = Vec::new();
        let mut timings = Vec::new();
        for stage in wanted {
            let started = Instant::now();
            let mut upstream = Vec::new();
            for input in stage.inputs(cfg.mode) {
                let record =
                    store
                        .read_record(*input)
                        .ok_or_else(|| PipelineError::StageInputMissing {
                            stage,
                            path: store.record_path(*input),
                        })?;
                upstream.push(record);
            }
            let input_hash = ctx.input_hash(stage, &upstream)?;
            let noop = match store.read_record(stage) {
                Some(prev)
                    if prev.input_hash == input_hash && prev.tool_version == TOOL_VERSION =>
                {
                    store.outputs_intact(&prev)
                }
                _ => false,
            };
            if noop {
                log::info!("{stage}: inputs unchanged, skipping");
            } else {
                log::info!("{stage}: running");
                let produced = ctx.run(stage)?;
                store.write_record(&StageRecord {
                    stage,
                    tool_version: TOOL_VERSION.to_string(),
                    input_hash,
                    outputs: produced.outputs,
                    counts: produced.counts,
                    flags: produced.flags,
                })?;
            }
            executed.push(StageRun { stage, noop });
            timings.push(StageTiming {
                stage,
                wall_ms: started.elapsed().as_millis(),
            });
        }

        let manifest = RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            mode: cfg.mode,
            stages: Stage::ALL
                .into_iter()
                .filter_map(|s| store.read_record(s))
                .collect(),
            executed,
            timings,
        };
        store.write_json(Path::new("manifest.json"), &manifest)?;
        store.write_json(Path::new("timings.json"), &manifest.timings)?;
        Ok(manifest)
    }
}

/// Runs `stages` under `cfg`.
pub fn run_pipeline(cfg: &RunConfig, stages: &[Stage]) -> Result<RunManifest, PipelineError> {
    Pipeline::new(cfg.clone())?.run(stages)
}

/// Output directory access with atomic writes.
pub(crate) struct Store {
    root: PathBuf,
}

impl Store {
    pub(crate) fn path(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    fn record_path(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.name()).join("stage.json")
    }

    fn read_record(&self, stage: Stage) -> Option<StageRecord> {
        let bytes = fs::read(self.record_path(stage)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    fn write_record(&self, record: &StageRecord) -> Result<(), PipelineError> {
        let rel = PathBuf::from(record.stage.name()).join("stage.json");
        self.write_json(&rel, record).map(|_| ())
    }

    fn outputs_intact(&self, record: &StageRecord) -> bool {
        record.outputs.iter().all(|(rel, hash)| {
            fs::read(self.root.join(rel)).is_ok_and(|bytes| sha256_hex(&bytes) == *hash)
        })
    }

    /// Writes `bytes` atomically and returns their hash.
    pub(crate) fn write(&self, rel: &Path, bytes: &[u8]) -> Result<String, PipelineError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_error(parent))?;
        }
        write_atomic(&path, bytes).map_err(io_error(&path))?;
        Ok(sha256_hex(bytes))
    }

    pub(crate) fn write_json<T: Serialize>(
        &self,
        rel: &Path,
        value: &T,
    ) -> Result<String, PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("pipeline values serialize");
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(
        &self,
        rel: &Path,
    ) -> Result<T, PipelineError> {
        let path = self.root.join(rel);
        let bytes = fs::read(&path).map_err(io_error(&path))?;
        serde_json::from_slice(&bytes).map_err(|source| PipelineError::Json { path, source })
    }
}

/// Hash over the stage name, tool version, stage settings and upstream
/// output hashes.
pub(crate) fn combine_hash<S: Serialize>(
    stage: Stage,
    settings: &S,
    upstream: &[StageRecord],
    extra: &[String],
) -> String {
    let settings = serde_json::to_string(settings).expect("settings serialize");
    let upstream: Vec<String> = upstream
        .iter()
        .map(|r| serde_json::to_string(&(r.stage, &r.outputs)).expect("records serialize"))
        .collect();
    sha256_parts(
        [stage.name(), TOOL_VERSION, settings.as_str()]
            .into_iter()
            .chain(upstream.iter().map(String::as_str))
            .chain(extra.iter().map(String::as_str)),
    )
}
