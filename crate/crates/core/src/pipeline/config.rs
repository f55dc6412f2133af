use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::describe::{QualityPolicy, SummarizerConfig};
use crate::metrics::{tokenizer_by_name, FilterPolicy, SiblingMode, SplitTokenizer};
use crate::mix::{Alpha, MixPolicy};
use crate::sample::{BodyMode, DependencyScope};

/// Which training mixture the run produces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Aligned code samples mixed with math at the configured α.
    #[default]
    Aligned,
    /// Math records only; code stages are skipped and α is 1.
    MathOnly,
    /// Code only with α = 0, no dependencies and raw docstrings.
    CodeOnly,
}

impl RunMode {
    pub fn uses_code(self) -> bool {
        self != RunMode::MathOnly
    }

    pub fn uses_math(self) -> bool {
        self != RunMode::CodeOnly
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixSettings {
    pub alpha: Alpha,
    pub seed: u64,
    /// Stream length; when absent, the largest length both pools support.
    pub total: Option<usize>,
    pub policy: MixPolicy,
}

impl Default for MixSettings {
    fn default() -> Self {
        MixSettings {
            alpha: Alpha::HALF,
            seed: 0,
            total: None,
            policy: MixPolicy::ExactQuota,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssembleSettings {
    pub scope: DependencyScope,
    pub bodies: BodyMode,
    /// Prompt token limit; longer samples are dropped.
    pub token_budget: Option<usize>,
}

/// Validated run configuration with paths resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub corpus_root: PathBuf,
    pub output_dir: PathBuf,
    pub math_records: Option<PathBuf>,
    pub mode: RunMode,
    pub parallelism: usize,
    pub tokenizer: String,
    pub filter_policy: FilterPolicy,
    pub sibling_mode: SiblingMode,
    pub quality: QualityPolicy,
    pub summarizer: SummarizerConfig,
    pub assemble: AssembleSettings,
    pub mix: MixSettings,
}

impl RunConfig {
    /// Defaults around the given locations.
    pub fn new(corpus_root: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        let output_dir = output_dir.into();
        RunConfig {
            corpus_root: corpus_root.into(),
            summarizer: SummarizerConfig {
                cache_dir: output_dir.join("cache").join("summaries"),
                ..Default::default()
            },
            output_dir,
            math_records: None,
            mode: RunMode::default(),
            parallelism: 1,
            tokenizer: SplitTokenizer::NAME.into(),
            filter_policy: FilterPolicy::default(),
            sibling_mode: SiblingMode::default(),
            quality: QualityPolicy::default(),
            assemble: AssembleSettings::default(),
            mix: MixSettings::default(),
        }
    }

    /// α after the mode override.
    pub fn effective_alpha(&self) -> Alpha {
        match self.mode {
            RunMode::Aligned => self.mix.alpha,
            RunMode::MathOnly => Alpha::ONE,
            RunMode::CodeOnly => Alpha::ZERO,
        }
    }

    pub fn unaligned(&self) -> bool {
        self.mode == RunMode::CodeOnly
    }

    /// Range and path checks shared by file loading and programmatic use.
    pub fn check(&self) -> Result<(), ConfigError> {
        let mut diagnostics = Vec::new();
        let mut report = |field: &str, message: String| {
            diagnostics.push(FieldDiagnostic {
                field: field.into(),
                message,
            })
        };
        if !self.filter_policy.is_ordered() {
            report(
                "filter_policy",
                format!(
                    "bounds out of order: depth {}..{}, siblings {}..{}",
                    self.filter_policy.depth_min,
                    self.filter_policy.depth_max,
                    self.filter_policy.siblings_min,
                    self.filter_policy.siblings_max
                ),
            );
        }
        if self.parallelism == 0 {
            report("parallelism", "must be at least 1".into());
        }
        if tokenizer_by_name(&self.tokenizer).is_none() {
            report(
                "tokenizer",
                format!("unknown tokenizer {:?}", self.tokenizer),
            );
        }
        if !(0.0..=1.0).contains(&self.quality.interface_ratio) {
            report("quality.interface_ratio", "must be within [0, 1]".into());
        }
        if self.mode.uses_code() && !self.corpus_root.is_dir() {
            report(
                "corpus_root",
                format!("{} is not a directory", self.corpus_root.display()),
            );
        }
        let needs_math = match self.mode {
            RunMode::MathOnly => true,
            RunMode::CodeOnly => false,
            RunMode::Aligned => self.mix.alpha != Alpha::ZERO,
        };
        match &self.math_records {
            Some(path) if self.mode.uses_math() && !path.is_file() => {
                report("math_records", format!("{} is not a file", path.display()))
            }
            None if needs_math => report(
                "math_records",
                "required when the mix includes math samples".into(),
            ),
            _ => {}
        }
        if !creatable(&self.output_dir) {
            report(
                "output_dir",
                format!("{} cannot be created", self.output_dir.display()),
            );
        }
        if !self.summarizer.cache_only
            && self.summarizer.endpoint.is_none()
            && self.mode != RunMode::CodeOnly
        {
            report(
                "summarizer.endpoint",
                "required unless summarizer.cache_only is set".into(),
            );
        }
        if self.summarizer.max_in_flight == 0 {
            report("summarizer.max_in_flight", "must be at least 1".into());
        }
        if diagnostics.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { diagnostics })
        }
    }
}

/// An existing directory, or a path whose nearest existing ancestor is one.
fn creatable(path: &Path) -> bool {
    let mut current = Some(path);
    while let Some(p) = current {
        if p.as_os_str().is_empty() {
            return true;
        }
        if p.exists() {
            return p.is_dir();
        }
        current = p.parent();
    }
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDiagnostic {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub struct ConfigError {
    pub diagnostics: Vec<FieldDiagnostic>,
}

impl ConfigError {
    fn single(field: &str, message: impl Into<String>) -> Self {
        ConfigError {
            diagnostics: vec![FieldDiagnostic {
                field: field.into(),
                message: message.into(),
            }],
        }
    }

    pub fn fields(&self) -> Vec<&str> {
        self.diagnostics.iter().map(|d| d.field.as_str()).collect()
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration")?;
        for (i, d) in self.diagnostics.iter().enumerate() {
            let sep = if i == 0 { ": " } else { "; " };
            write!(f, "{sep}{}: {}", d.field, d.message)?;
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawFilter {
    depth_min: usize,
    depth_max: usize,
    siblings_min: usize,
    siblings_max: usize,
    sibling_mode: SiblingMode,
}

impl Default for RawFilter {
    fn default() -> Self {
        let p = FilterPolicy::default();
        RawFilter {
            depth_min: p.depth_min,
            depth_max: p.depth_max,
            siblings_min: p.siblings_min,
            siblings_max: p.siblings_max,
            sibling_mode: SiblingMode::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMix {
    #[serde(default = "default_alpha")]
    alpha: Alpha,
    #[serde(default)]
    seed: u64,
    total: Option<usize>,
    #[serde(default)]
    policy: MixPolicy,
}

fn default_alpha() -> Alpha {
    Alpha::HALF
}

const TOP_LEVEL_KEYS: &[&str] = &[
    "corpus_root",
    "output_dir",
    "math_records",
    "mode",
    "parallelism",
    "tokenizer",
    "filter_policy",
    "quality",
    "summarizer",
    "assemble",
    "mix",
];

/// Parses a TOML run configuration. Relative paths are resolved against
/// `base_dir`, normally the directory holding the file.
pub fn validate_config_at(raw: &str, base_dir: &Path) -> Result<RunConfig, ConfigError> {
    let table: toml::Table = raw
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::single("<file>", e.message().to_string()))?;
    let mut diagnostics = Vec::new();

    for key in table.keys() {
        if !TOP_LEVEL_KEYS.contains(&key.as_str()) {
            diagnostics.push(FieldDiagnostic {
                field: key.clone(),
                message: "unknown key".into(),
            });
        }
    }

    fn field<T: DeserializeOwned>(
        table: &toml::Table,
        key: &str,
        diagnostics: &mut Vec<FieldDiagnostic>,
    ) -> Option<T> {
        let value = table.get(key)?.clone();
        match value.try_into() {
            Ok(v) => Some(v),
            Err(e) => {
                let e: toml::de::Error = e;
                diagnostics.push(FieldDiagnostic {
                    field: key.into(),
                    message: e.message().to_string(),
                });
                None
            }
        }
    }
    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };

    let corpus_root: Option<PathBuf> = field(&table, "corpus_root", &mut diagnostics);
    let output_dir: Option<PathBuf> = field(&table, "output_dir", &mut diagnostics);
    if output_dir.is_none() && !table.contains_key("output_dir") {
        diagnostics.push(FieldDiagnostic {
            field: "output_dir".into(),
            message: "missing".into(),
        });
    }
    let output_dir = resolve(output_dir.unwrap_or_default());
    let mut cfg = RunConfig::new(resolve(corpus_root.unwrap_or_default()), output_dir);
    cfg.math_records = field::<PathBuf>(&table, "math_records", &mut diagnostics).map(resolve);
    if let Some(mode) = field(&table, "mode", &mut diagnostics) {
        cfg.mode = mode;
    }
    if let Some(n) = field(&table, "parallelism", &mut diagnostics) {
        cfg.parallelism = n;
    }
    if let Some(t) = field(&table, "tokenizer", &mut diagnostics) {
        cfg.tokenizer = t;
    }
    if let Some(f) = field::<RawFilter>(&table, "filter_policy", &mut diagnostics) {
        cfg.filter_policy = FilterPolicy {
            depth_min: f.depth_min,
            depth_max: f.depth_max,
            siblings_min: f.siblings_min,
            siblings_max: f.siblings_max,
        };
        cfg.sibling_mode = f.sibling_mode;
    }
    if let Some(q) = field(&table, "quality", &mut diagnostics) {
        cfg.quality = q;
    }
    if let Some(s) = field::<SummarizerConfig>(&table, "summarizer", &mut diagnostics) {
        let explicit_cache = table
            .get("summarizer")
            .and_then(|v| v.get("cache_dir"))
            .is_some();
        let default_cache = cfg.summarizer.cache_dir.clone();
        cfg.summarizer = s;
        cfg.summarizer.cache_dir = if explicit_cache {
            resolve(cfg.summarizer.cache_dir.clone())
        } else {
            default_cache
        };
    }
    if let Some(a) = field(&table, "assemble", &mut diagnostics) {
        cfg.assemble = a;
    }
    if let Some(m) = mix_section(&table, &mut diagnostics) {
        cfg.mix = m;
    }

    if let Err(more) = cfg.check() {
        let reported: Vec<String> = diagnostics.iter().map(|d| d.field.clone()).collect();
        diagnostics.extend(
            more.diagnostics
                .into_iter()
                .filter(|d| !reported.iter().any(|r| d.field.starts_with(r.as_str()))),
        );
    }
    if diagnostics.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { diagnostics })
    }
}

/// Reports a bad α as `mix.alpha` rather than the whole section.
fn mix_section(table: &toml::Table, diagnostics: &mut Vec<FieldDiagnostic>) -> Option<MixSettings> {
    let section = table.get("mix")?;
    let mut section = match section.as_table() {
        Some(t) => t.clone(),
        None => {
            diagnostics.push(FieldDiagnostic {
                field: "mix".into(),
                message: "expected a table".into(),
            });
            return None;
        }
    };
    let mut alpha_failed = false;
    if let Some(alpha) = section.get("alpha") {
        let parsed: Result<Alpha, toml::de::Error> = alpha.clone().try_into();
        if let Err(e) = parsed {
            diagnostics.push(FieldDiagnostic {
                field: "mix.alpha".into(),
                message: e.message().to_string(),
            });
            alpha_failed = true;
            section.remove("alpha");
        }
    }
    match toml::Value::Table(section).try_into::<RawMix>() {
        Ok(m) if !alpha_failed => Some(MixSettings {
            alpha: m.alpha,
            seed: m.seed,
            total: m.total,
            policy: m.policy,
        }),
        Ok(_) => None,
        Err(e) => {
            diagnostics.push(FieldDiagnostic {
                field: "mix".into(),
                message: e.message().to_string(),
            });
            None
        }
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::single("<file>", format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    validate_config_at(&raw, base)
}

/// [`validate_config_at`] relative to the current directory.
pub fn validate_config(raw: &str) -> Result<RunConfig, ConfigError> {
    validate_config_at(raw, Path::new("."))
}
