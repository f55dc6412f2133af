use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::{combine_hash, io_error, PipelineError, RunConfig, RunMode, Stage, StageRecord, Store};
use crate::describe::{
    extract_description_with, needs_augmentation, summary_template_hash, CompletionRequest,
    CompletionTransport, DescriptionRecord, Origin, SummarizeError, SummaryClient, TransportError,
};
use crate::digest::{sha256_hex, sha256_parts, TOOL_VERSION};
use crate::graph::{
    build_call_tree, build_project_graph, enumerate_roots, index_functions, DependencyGraph,
    TreeError,
};
use crate::ingest::{
    parse_file, Diagnostic, FileAnalysis, FunctionRecord, GrammarAdapter, PythonGrammar,
};
use crate::metrics::{
    filter_repo, histogram, repo_metrics_with, tokenizer_by_name, write_metrics_csv, BinSpec,
    DropReason, FilterDecision, MetricField, RepoMetrics, Tokenizer,
};
use crate::mix::{mix_stream, Alpha, MixConfig, MixPolicy};
use crate::sample::{
    assemble_code_sample, assemble_math_sample, manifest_path, read_dataset, read_formal_records,
    write_dataset, AssembleError, AssembleOptions, CafSample, DatasetManifest, WriteOptions,
};

/// Parsed files keyed by content, under the output directory.
pub const ANALYSIS_CACHE_DIR: &str = "cache/analysis";

const SKIPPED_DIRS: &[&str] = &["__pycache__", "node_modules", "venv", "site-packages"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the repository root, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoListing {
    pub repo_id: String,
    pub sources: Vec<FileEntry>,
    pub readmes: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoAnalysis {
    pub repo_id: String,
    pub functions: BTreeMap<String, FunctionRecord>,
    pub graph: DependencyGraph,
    pub file_count: usize,
    pub parse_error_files: Vec<String>,
    pub undecodable_files: Vec<String>,
    /// File → diagnostics raised while analyzing it.
    pub diagnostics: BTreeMap<String, Vec<Diagnostic>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoDecision {
    pub repo_id: String,
    /// Absent when a call tree exceeded the node limit.
    pub metrics: Option<RepoMetrics>,
    #[serde(flatten)]
    pub decision: FilterDecision,
}

pub(super) struct Produced {
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
    pub flags: BTreeSet<String>,
}

impl Produced {
    fn new() -> Self {
        Produced {
            outputs: BTreeMap::new(),
            counts: BTreeMap::new(),
            flags: BTreeSet::new(),
        }
    }

    fn count(&mut self, key: &str, n: usize) {
        *self.counts.entry(key.to_string()).or_default() += n as u64;
    }

    fn json<T: Serialize>(
        &mut self,
        store: &Store,
        rel: &str,
        value: &T,
    ) -> Result<(), PipelineError> {
        let hash = store.write_json(Path::new(rel), value)?;
        self.outputs.insert(rel.to_string(), hash);
        Ok(())
    }

    fn bytes(&mut self, store: &Store, rel: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let hash = store.write(Path::new(rel), bytes)?;
        self.outputs.insert(rel.to_string(), hash);
        Ok(())
    }

    /// Records a dataset written by [`write_dataset`] and its manifest.
    fn dataset(&mut self, store: &Store, rel: &str) -> Result<(), PipelineError> {
        let path = store.path(Path::new(rel));
        for (key, file) in [
            (rel.to_string(), path.clone()),
            (
                manifest_path(Path::new(rel))
                    .to_string_lossy()
                    .replace('\\', "/"),
                manifest_path(&path),
            ),
        ] {
            let bytes = fs::read(&file).map_err(io_error(&file))?;
            self.outputs.insert(key, sha256_hex(bytes));
        }
        Ok(())
    }
}

/// Lets the summarizer own a handle to a transport the caller also keeps.
struct SharedTransport(Arc<dyn CompletionTransport>);

impl CompletionTransport for SharedTransport {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        self.0.complete(request)
    }
}

pub(super) struct Context<'a> {
    cfg: &'a RunConfig,
    store: &'a Store,
    pool: &'a rayon::ThreadPool,
    transport: Option<Arc<dyn CompletionTransport>>,
    tokenizer: Box<dyn Tokenizer>,
    grammar: PythonGrammar,
    listing: Option<Vec<RepoListing>>,
}

impl<'a> Context<'a> {
    pub(super) fn new(
        cfg: &'a RunConfig,
        store: &'a Store,
        pool: &'a rayon::ThreadPool,
        transport: Option<Arc<dyn CompletionTransport>>,
    ) -> Result<Self, PipelineError> {
        let tokenizer = tokenizer_by_name(&cfg.tokenizer).ok_or_else(|| {
            PipelineError::ConfigInvalid(super::ConfigError {
                diagnostics: vec![super::FieldDiagnostic {
                    field: "tokenizer".into(),
                    message: format!("unknown tokenizer {:?}", cfg.tokenizer),
                }],
            })
        })?;
        Ok(Context {
            cfg,
            store,
            pool,
            transport,
            tokenizer,
            grammar: PythonGrammar,
            listing: None,
        })
    }

    pub(super) fn input_hash(
        &mut self,
        stage: Stage,
        upstream: &[StageRecord],
    ) -> Result<String, PipelineError> {
        let cfg = self.cfg;
        let hash = match stage {
            Stage::Scan => {
                let listing = self.scan_corpus()?;
                let hash = combine_hash(stage, &listing, upstream, &[]);
                self.listing = Some(listing);
                hash
            }
            Stage::Analyze => combine_hash(stage, &self.grammar.name(), upstream, &[]),
            Stage::Filter => combine_hash(
                stage,
                &(&cfg.filter_policy, cfg.sibling_mode, &cfg.tokenizer),
                upstream,
                &[],
            ),
            Stage::Augment => {
                let s = &cfg.summarizer;
                combine_hash(
                    stage,
                    &(
                        cfg.mode,
                        &cfg.quality,
                        &s.model,
                        s.temperature,
                        s.cache_only,
                    ),
                    upstream,
                    &[summary_template_hash()],
                )
            }
            Stage::Assemble => {
                let math = match (&cfg.math_records, cfg.mode.uses_math()) {
                    (Some(path), true) => sha256_hex(fs::read(path).map_err(io_error(path))?),
                    _ => String::new(),
                };
                combine_hash(
                    stage,
                    &(cfg.mode, &cfg.assemble, &cfg.tokenizer),
                    upstream,
                    &[math],
                )
            }
            Stage::Mix => combine_hash(
                stage,
                &(cfg.mode, cfg.effective_alpha(), &cfg.mix, &cfg.tokenizer),
                upstream,
                &[],
            ),
            Stage::Stats => combine_hash(stage, &(), upstream, &[]),
        };
        Ok(hash)
    }

    pub(super) fn run(&mut self, stage: Stage) -> Result<Produced, PipelineError> {
        match stage {
            Stage::Scan => self.scan(),
            Stage::Analyze => self.analyze(),
            Stage::Filter => self.filter(),
            Stage::Augment => self.augment(),
            Stage::Assemble => self.assemble(),
            Stage::Mix => self.mix(),
            Stage::Stats => self.stats(),
        }
    }

    /// Each sorted, non-hidden subdirectory of the corpus is a repository.
    fn scan_corpus(&self) -> Result<Vec<RepoListing>, PipelineError> {
        let root = &self.cfg.corpus_root;
        let entries = fs::read_dir(root).map_err(io_error(root))?;
        let mut dirs = Vec::new();
        for entry in entries {
            let entry = entry.map_err(io_error(root))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.path().is_dir() && !skipped_dir(&name) {
                dirs.push((name, entry.path()));
            }
        }
        dirs.sort();
        dirs.into_iter()
            .map(|(repo_id, dir)| list_repo(&self.grammar, repo_id, &dir))
            .collect()
    }

    fn listing(&mut self) -> Result<Vec<RepoListing>, PipelineError> {
        match &self.listing {
            Some(listing) => Ok(listing.clone()),
            None => self.store.read_json(Path::new("scan/repos.json")),
        }
    }

    fn scan(&mut self) -> Result<Produced, PipelineError> {
        let listing = match self.listing.take() {
            Some(listing) => listing,
            None => self.scan_corpus()?,
        };
        let mut out = Produced::new();
        out.count("repos", listing.len());
        out.count(
            "source_files",
            listing.iter().map(|r| r.sources.len()).sum(),
        );
        out.count("readmes", listing.iter().map(|r| r.readmes.len()).sum());
        out.json(self.store, "scan/repos.json", &listing)?;
        self.listing = Some(listing);
        Ok(out)
    }

    fn analyze(&mut self) -> Result<Produced, PipelineError> {
        let listing = self.listing()?;
        let hits = AtomicUsize::new(0);
        let analyses: Vec<RepoAnalysis> = self.pool.install(|| {
            listing
                .par_iter()
                .map(|repo| self.analyze_repo(repo, &hits))
                .collect::<Result<_, _>>()
        })?;
        log::info!(
            "analyze: {} file analyses served from cache",
            hits.load(Ordering::Relaxed)
        );
        let mut out = Produced::new();
        for analysis in &analyses {
            out.count("repos", 1);
            out.count("files", analysis.file_count);
            out.count("function_count", analysis.functions.len());
            out.count(
                "cached_analyses",
                analysis.file_count - analysis.undecodable_files.len(),
            );
            out.count("edges", analysis.graph.edges.len());
            out.count("unresolved_calls", analysis.graph.unresolved_count);
            out.count("parse_error_files", analysis.parse_error_files.len());
            out.count("undecodable_files", analysis.undecodable_files.len());
            out.json(
                self.store,
                &format!("analyze/{}.json", analysis.repo_id),
                analysis,
            )?;
        }
        Ok(out)
    }

    fn analyze_repo(
        &self,
        repo: &RepoListing,
        cached: &AtomicUsize,
    ) -> Result<RepoAnalysis, PipelineError> {
        let dir = self.cfg.corpus_root.join(&repo.repo_id);
        let files: Vec<Option<FileAnalysis>> = repo
            .sources
            .par_iter()
            .map(|file| self.analyze_file(&dir, file, cached))
            .collect::<Result<_, _>>()?;
        Ok(combine_analyses(repo, files))
    }

    /// `None` for files that are not valid UTF-8.
    fn analyze_file(
        &self,
        dir: &Path,
        file: &FileEntry,
        cached: &AtomicUsize,
    ) -> Result<Option<FileAnalysis>, PipelineError> {
        let key = sha256_parts([TOOL_VERSION, self.grammar.name(), &file.path, &file.sha256]);
        let cache_rel = PathBuf::from(ANALYSIS_CACHE_DIR).join(format!("{key}.json"));
        if let Ok(hit) = self.store.read_json::<FileAnalysis>(&cache_rel) {
            cached.fetch_add(1, Ordering::Relaxed);
            return Ok(Some(hit));
        }
        let path = dir.join(&file.path);
        let bytes = fs::read(&path).map_err(io_error(&path))?;
        let Ok(source) = String::from_utf8(bytes) else {
            log::warn!("{}: not UTF-8, skipped", path.display());
            return Ok(None);
        };
        let analysis = parse_file(&source, &file.path, &self.grammar)
            .expect("scan only lists files the grammar handles");
        self.store.write_json(&cache_rel, &analysis)?;
        Ok(Some(analysis))
    }

    fn repo_analysis(&self, repo_id: &str) -> Result<RepoAnalysis, PipelineError> {
        self.store
            .read_json(Path::new(&format!("analyze/{repo_id}.json")))
    }

    fn repo_ids(&self) -> Result<Vec<String>, PipelineError> {
        let listing: Vec<RepoListing> = self.store.read_json(Path::new("scan/repos.json"))?;
        Ok(listing.into_iter().map(|r| r.repo_id).collect())
    }

    fn filter(&mut self) -> Result<Produced, PipelineError> {
        let repo_ids = self.repo_ids()?;
        let decisions: Vec<RepoDecision> = self.pool.install(|| {
            repo_ids
                .par_iter()
                .map(|id| Ok(self.decide(&self.repo_analysis(id)?)))
                .collect::<Result<_, PipelineError>>()
        })?;
        let mut out = Produced::new();
        for d in &decisions {
            match &d.decision {
                FilterDecision::Keep => out.count("kept", 1),
                FilterDecision::Drop(reason) => {
                    out.count(&format!("dropped.{}", reason_key(*reason)), 1)
                }
            }
        }
        out.count("repos", decisions.len());
        out.json(self.store, "filter/decisions.json", &decisions)?;
        let metrics: Vec<RepoMetrics> =
            decisions.iter().filter_map(|d| d.metrics.clone()).collect();
        let mut csv = Vec::new();
        write_metrics_csv(&metrics, &mut csv)
            .map_err(|e| csv_error(self.store, "filter/metrics.csv", e))?;
        out.bytes(self.store, "filter/metrics.csv", &csv)?;
        Ok(out)
    }

    fn decide(&self, analysis: &RepoAnalysis) -> RepoDecision {
        let mut trees = Vec::new();
        for root in enumerate_roots(&analysis.graph) {
            match build_call_tree(&analysis.graph, &root) {
                Ok(tree) => trees.push(tree),
                Err(TreeError::TooLarge { root, limit }) => {
                    log::warn!(
                        "{}: call tree of {root} exceeds {limit} nodes",
                        analysis.repo_id
                    );
                    return RepoDecision {
                        repo_id: analysis.repo_id.clone(),
                        metrics: None,
                        decision: FilterDecision::Drop(DropReason::TreeTooLarge),
                    };
                }
                Err(TreeError::RootNotFound(_)) => unreachable!("roots come from the graph"),
            }
        }
        let functions: Vec<FunctionRecord> = analysis.functions.values().cloned().collect();
        let metrics = repo_metrics_with(
            &analysis.repo_id,
            &trees,
            &functions,
            self.tokenizer.as_ref(),
            self.cfg.sibling_mode,
        );
        RepoDecision {
            repo_id: analysis.repo_id.clone(),
            decision: filter_repo(&metrics, &self.cfg.filter_policy),
            metrics: Some(metrics),
        }
    }

    fn kept_repos(&self) -> Result<Vec<String>, PipelineError> {
        let decisions: Vec<RepoDecision> =
            self.store.read_json(Path::new("filter/decisions.json"))?;
        Ok(decisions
            .into_iter()
            .filter(|d| d.decision.is_keep())
            .map(|d| d.repo_id)
            .collect())
    }

    fn summary_client(&self) -> Result<SummaryClient, PipelineError> {
        let config = self.cfg.summarizer.clone();
        Ok(match &self.transport {
            Some(t) => {
                SummaryClient::with_transport(config, Box::new(SharedTransport(Arc::clone(t))))
            }
            None => SummaryClient::new(config)?,
        })
    }

    fn augment(&mut self) -> Result<Produced, PipelineError> {
        let listing: BTreeMap<String, RepoListing> = self
            .listing()?
            .into_iter()
            .map(|r| (r.repo_id.clone(), r))
            .collect();
        let client = self.summary_client()?;
        let mut out = Produced::new();
        for repo_id in self.kept_repos()? {
            let analysis = self.repo_analysis(&repo_id)?;
            let readmes = match listing.get(&repo_id) {
                Some(repo) => self.read_readmes(repo)?,
                None => Vec::new(),
            };
            let roots = sample_roots(&analysis.graph);
            let results: Vec<(String, Described)> = self.pool.install(|| {
                roots
                    .par_iter()
                    .map(|root| {
                        let f = &analysis.functions[root];
                        self.describe(f, &readmes, &client)
                            .map(|d| (root.clone(), d))
                    })
                    .collect::<Result<_, PipelineError>>()
            })?;
            let mut records = BTreeMap::new();
            for (root, described) in results {
                match described {
                    Described::Found(record) => {
                        out.count(origin_key(record.origin), 1);
                        records.insert(root, record);
                    }
                    Described::Fallback(record) => {
                        out.count("cache_misses", 1);
                        out.count("fallbacks", 1);
                        out.count(origin_key(record.origin), 1);
                        records.insert(root, record);
                    }
                    Described::Missing { cache_miss } => {
                        if cache_miss {
                            out.count("cache_misses", 1);
                        }
                        out.count("skipped", 1);
                    }
                }
            }
            out.count("repos", 1);
            out.count("descriptions", records.len());
            out.json(self.store, &format!("augment/{repo_id}.json"), &records)?;
        }
        log::info!("augment: {} summarizer requests", client.network_calls());
        Ok(out)
    }

    fn read_readmes(&self, repo: &RepoListing) -> Result<Vec<(PathBuf, String)>, PipelineError> {
        let dir = self.cfg.corpus_root.join(&repo.repo_id);
        let mut readmes = Vec::new();
        for entry in &repo.readmes {
            let path = dir.join(&entry.path);
            let bytes = fs::read(&path).map_err(io_error(&path))?;
            readmes.push((
                PathBuf::from(&entry.path),
                String::from_utf8_lossy(&bytes).into_owned(),
            ));
        }
        Ok(readmes)
    }

    fn describe(
        &self,
        function: &FunctionRecord,
        readmes: &[(PathBuf, String)],
        client: &SummaryClient,
    ) -> Result<Described, PipelineError> {
        if self.cfg.mode == RunMode::CodeOnly {
            let raw = function
                .docstring
                .as_deref()
                .map(str::trim)
                .filter(|d| !d.is_empty());
            return Ok(match raw {
                Some(doc) => Described::Found(DescriptionRecord {
                    function_id: function.qualified_name.clone(),
                    text: doc.to_string(),
                    origin: Origin::Docstring,
                    quality_flags: self.cfg.quality.assess(doc),
                    prompt_hash: None,
                }),
                None => Described::Missing { cache_miss: false },
            });
        }
        let extracted = extract_description_with(function, readmes, &self.cfg.quality);
        if !needs_augmentation(extracted.as_ref(), &self.cfg.quality) {
            return Ok(Described::Found(
                extracted.expect("adequate descriptions exist"),
            ));
        }
        match client.summarize(&function.qualified_name, &function.body_text) {
            Ok(generated) => Ok(Described::Found(generated)),
            Err(SummarizeError::CacheMiss { .. }) => Ok(match extracted {
                Some(record) => Described::Fallback(record),
                None => Described::Missing { cache_miss: true },
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn assemble(&mut self) -> Result<Produced, PipelineError> {
        let cfg = self.cfg;
        let mut out = Produced::new();
        if cfg.mode == RunMode::CodeOnly {
            out.flags.insert("unaligned".into());
        }
        if cfg.mode.uses_code() {
            let options = AssembleOptions {
                scope: cfg.assemble.scope,
                bodies: cfg.assemble.bodies,
                unaligned: cfg.unaligned(),
            };
            let mut samples = Vec::new();
            for repo_id in self.kept_repos()? {
                let analysis = self.repo_analysis(&repo_id)?;
                let descriptions: BTreeMap<String, DescriptionRecord> = self
                    .store
                    .read_json(Path::new(&format!("augment/{repo_id}.json")))?;
                for (root, desc) in &descriptions {
                    let sample = build_call_tree(&analysis.graph, root)
                        .map_err(|e| AssembleError::MissingBody(e.to_string()))
                        .and_then(|tree| {
                            assemble_code_sample(
                                &repo_id,
                                &tree,
                                &analysis.functions,
                                Some(desc),
                                &options,
                            )
                        });
                    match sample {
                        Ok(sample) => samples.push(sample),
                        Err(e) => {
                            log::warn!("{repo_id}: {e}");
                            out.count("code_skipped", 1);
                        }
                    }
                }
            }
            let manifest = self.write_samples("assemble/code.jsonl", &samples, &out.flags)?;
            out.count("code_samples", manifest.sample_count);
            out.count("code_over_budget", manifest.dropped_oversized);
            out.dataset(self.store, "assemble/code.jsonl")?;
        }
        if let (Some(path), true) = (&cfg.math_records, cfg.mode.uses_math()) {
            let mut samples = Vec::new();
            for record in read_formal_records(path)? {
                match assemble_math_sample(&record) {
                    Ok(sample) => samples.push(sample),
                    Err(e) => {
                        log::warn!("{e}");
                        out.count("math_skipped", 1);
                    }
                }
            }
            let manifest = self.write_samples("assemble/math.jsonl", &samples, &out.flags)?;
            out.count("math_samples", manifest.sample_count);
            out.count("math_over_budget", manifest.dropped_oversized);
            out.dataset(self.store, "assemble/math.jsonl")?;
        }
        Ok(out)
    }

    fn write_samples(
        &self,
        rel: &str,
        samples: &[CafSample],
        flags: &BTreeSet<String>,
    ) -> Result<DatasetManifest, PipelineError> {
        let options = WriteOptions {
            tokenizer: self.tokenizer.as_ref(),
            token_budget: self.cfg.assemble.token_budget,
            flags: flags.clone(),
        };
        Ok(write_dataset(
            samples,
            &self.store.path(Path::new(rel)),
            &options,
        )?)
    }

    fn pool_samples(&self, rel: &str) -> Result<Vec<CafSample>, PipelineError> {
        let path = self.store.path(Path::new(rel));
        if path.exists() {
            Ok(read_dataset(&path)?)
        } else {
            Ok(Vec::new())
        }
    }

    fn mix(&mut self) -> Result<Produced, PipelineError> {
        let cfg = self.cfg;
        let math = self.pool_samples("assemble/math.jsonl")?;
        let code = self.pool_samples("assemble/code.jsonl")?;
        let alpha = cfg.effective_alpha();
        let total = match cfg.mix.total {
            Some(total) => total,
            None => resolve_total(&math, &code, alpha, cfg.mix.seed, cfg.mix.policy),
        };
        let mixed = mix_stream(
            &math,
            &code,
            &MixConfig {
                alpha,
                seed: cfg.mix.seed,
                total,
                policy: cfg.mix.policy,
            },
        )?;
        let mut out = Produced::new();
        out.flags.insert(format!("mode={}", mode_key(cfg.mode)));
        if cfg.unaligned() {
            out.flags.insert("unaligned".into());
        }
        let manifest = self.write_samples("mix/mixed.jsonl", &mixed, &out.flags)?;
        out.count("samples", manifest.sample_count);
        out.count(
            "math",
            mixed
                .iter()
                .filter(|s| s.task == crate::sample::Task::Math)
                .count(),
        );
        out.count(
            "code",
            mixed
                .iter()
                .filter(|s| s.task == crate::sample::Task::Code)
                .count(),
        );
        out.count("over_budget", manifest.dropped_oversized);
        out.dataset(self.store, "mix/mixed.jsonl")?;
        Ok(out)
    }

    fn stats(&mut self) -> Result<Produced, PipelineError> {
        let decisions: Vec<RepoDecision> =
            self.store.read_json(Path::new("filter/decisions.json"))?;
        let metrics: Vec<RepoMetrics> =
            decisions.iter().filter_map(|d| d.metrics.clone()).collect();
        let mut out = Produced::new();
        let mut csv = Vec::new();
        write_metrics_csv(&metrics, &mut csv)
            .map_err(|e| csv_error(self.store, "stats/metrics.csv", e))?;
        out.bytes(self.store, "stats/metrics.csv", &csv)?;
        if !metrics.is_empty() {
            for (field, rel) in [
                (MetricField::Depth, "stats/depth_histogram.csv"),
                (MetricField::Siblings, "stats/siblings_histogram.csv"),
            ] {
                let hist = histogram(&metrics, field, BinSpec::covering(&metrics, field))?;
                let mut csv = Vec::new();
                hist.write_csv(&mut csv)
                    .map_err(|e| csv_error(self.store, rel, e))?;
                out.bytes(self.store, rel, &csv)?;
            }
        }
        let mut dropped: BTreeMap<&str, usize> = BTreeMap::new();
        for d in &decisions {
            if let FilterDecision::Drop(reason) = d.decision {
                *dropped.entry(reason_key(reason)).or_default() += 1;
            }
        }
        let kept = decisions.iter().filter(|d| d.decision.is_keep()).count();
        let summary = serde_json::json!({
            "repos": decisions.len(),
            "kept": kept,
            "dropped": dropped,
            "functions": metrics.iter().map(|m| m.function_count).sum::<usize>(),
            "tokens": metrics.iter().map(|m| m.token_count).sum::<usize>(),
        });
        out.count("repos", decisions.len());
        out.count("kept", kept);
        out.json(self.store, "stats/summary.json", &summary)?;
        Ok(out)
    }
}

enum Described {
    Found(DescriptionRecord),
    /// The summary was not cached; the extracted description stands in.
    Fallback(DescriptionRecord),
    Missing {
        cache_miss: bool,
    },
}

/// Sorted source files and READMEs of one repository.
fn list_repo(
    grammar: &dyn GrammarAdapter,
    repo_id: String,
    dir: &Path,
) -> Result<RepoListing, PipelineError> {
    let mut sources = Vec::new();
    let mut readmes = Vec::new();
    let walker = WalkDir::new(dir)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| {
            e.depth() == 0
                || !(e.file_type().is_dir() && skipped_dir(&e.file_name().to_string_lossy()))
        });
    for entry in walker {
        let entry = entry.map_err(|e| PipelineError::Io {
            path: e.path().unwrap_or(dir).to_path_buf(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(dir)
            .expect("walk stays under the repository")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let is_source = grammar.handles(entry.path());
        if !is_source && !is_readme(&entry.file_name().to_string_lossy()) {
            continue;
        }
        let bytes = fs::read(entry.path()).map_err(io_error(entry.path()))?;
        let file = FileEntry {
            path: rel,
            sha256: sha256_hex(bytes),
        };
        if is_source {
            sources.push(file);
        } else {
            readmes.push(file);
        }
    }
    Ok(RepoListing {
        repo_id,
        sources,
        readmes,
    })
}

/// `files[i]` is the analysis of `repo.sources[i]`, `None` if undecodable.
fn combine_analyses(repo: &RepoListing, files: Vec<Option<FileAnalysis>>) -> RepoAnalysis {
    let mut undecodable_files = Vec::new();
    let mut parsed = Vec::new();
    for (entry, analysis) in repo.sources.iter().zip(files) {
        match analysis {
            Some(a) => parsed.push(a),
            None => undecodable_files.push(entry.path.clone()),
        }
    }
    let mut diagnostics = BTreeMap::new();
    let mut parse_error_files = Vec::new();
    for a in &parsed {
        if !a.parse_errors.is_empty() {
            parse_error_files.push(a.file_path.clone());
        }
        let all: Vec<Diagnostic> = a
            .parse_errors
            .iter()
            .chain(&a.diagnostics)
            .cloned()
            .collect();
        if !all.is_empty() {
            diagnostics.insert(a.file_path.clone(), all);
        }
    }
    RepoAnalysis {
        repo_id: repo.repo_id.clone(),
        functions: index_functions(&parsed),
        graph: build_project_graph(&parsed),
        file_count: repo.sources.len(),
        parse_error_files,
        undecodable_files,
        diagnostics,
    }
}

/// Parses every Python file under `dir` as one repository, without caching.
pub fn analyze_directory(dir: &Path) -> Result<RepoAnalysis, PipelineError> {
    let grammar = PythonGrammar;
    let repo_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let repo = list_repo(&grammar, repo_id, dir)?;
    let mut files = Vec::new();
    for entry in &repo.sources {
        let path = dir.join(&entry.path);
        let bytes = fs::read(&path).map_err(io_error(&path))?;
        files.push(match String::from_utf8(bytes) {
            Ok(source) => {
                Some(parse_file(&source, &entry.path, &grammar).expect("listed files are handled"))
            }
            Err(_) => None,
        });
    }
    Ok(combine_analyses(&repo, files))
}

/// Functions with at least one resolved callee.
pub fn sample_roots(graph: &DependencyGraph) -> Vec<String> {
    enumerate_roots(graph)
        .into_iter()
        .filter(|r| graph.out_degree(r) > 0)
        .collect()
}

/// Largest stream length both pools can fill at `alpha`.
pub fn resolve_total(
    math: &[CafSample],
    code: &[CafSample],
    alpha: Alpha,
    seed: u64,
    policy: MixPolicy,
) -> usize {
    let feasible = |total: usize| match policy {
        MixPolicy::ExactQuota => {
            let m = alpha.quota(total);
            m <= math.len() && total - m <= code.len()
        }
        MixPolicy::Bernoulli => mix_stream(
            math,
            code,
            &MixConfig {
                alpha,
                seed,
                total,
                policy,
            },
        )
        .is_ok(),
    };
    // Feasibility is monotone in the length: a shorter stream needs no more
    // of either task.
    let (mut lo, mut hi) = (0, math.len() + code.len());
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

fn skipped_dir(name: &str) -> bool {
    name.starts_with('.') || SKIPPED_DIRS.contains(&name)
}

fn is_readme(file_name: &str) -> bool {
    matches!(
        file_name.to_ascii_lowercase().as_str(),
        "readme" | "readme.md" | "readme.markdown"
    )
}

fn reason_key(reason: DropReason) -> &'static str {
    match reason {
        DropReason::DepthBelowMin => "depth_below_min",
        DropReason::DepthAboveMax => "depth_above_max",
        DropReason::SiblingsBelowMin => "siblings_below_min",
        DropReason::SiblingsAboveMax => "siblings_above_max",
        DropReason::TreeTooLarge => "tree_too_large",
    }
}

fn origin_key(origin: Origin) -> &'static str {
    match origin {
        Origin::Docstring => "origin.docstring",
        Origin::Readme => "origin.readme",
        Origin::Generated => "origin.generated",
    }
}

fn mode_key(mode: RunMode) -> &'static str {
    match mode {
        RunMode::Aligned => "aligned",
        RunMode::MathOnly => "math-only",
        RunMode::CodeOnly => "code-only",
    }
}

fn csv_error(store: &Store, rel: &str, e: csv::Error) -> PipelineError {
    PipelineError::Csv {
        path: store.path(Path::new(rel)),
        message: e.to_string(),
    }
}
