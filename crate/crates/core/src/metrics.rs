//! Repository shape metrics, the shape filter, token counting and
//! histograms over a set of repositories.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::graph::DependencyTree;
use crate::ingest::FunctionRecord;

/// Counts tokens in source text.
pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;
    fn count(&self, text: &str) -> usize;
}

/// Runs of alphanumerics and `_` are one token each; every other
/// non-whitespace character is a token by itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct SplitTokenizer;

impl SplitTokenizer {
    pub const NAME: &'static str = "split";
}

impl Tokenizer for SplitTokenizer {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn count(&self, text: &str) -> usize {
        let mut count = 0;
        let mut in_word = false;
        for c in text.chars() {
            if c.is_alphanumeric() || c == '_' {
                if !in_word {
                    count += 1;
                    in_word = true;
                }
            } else {
                in_word = false;
                if !c.is_whitespace() {
                    count += 1;
                }
            }
        }
        count
    }
}

pub fn count_tokens(text: &str, tok: &dyn Tokenizer) -> usize {
    tok.count(text)
}

/// Looks up a tokenizer by its configured name.
pub fn tokenizer_by_name(name: &str) -> Option<Box<dyn Tokenizer>> {
    match name {
        SplitTokenizer::NAME => Some(Box::new(SplitTokenizer)),
        _ => None,
    }
}

/// How sibling counts are measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiblingMode {
    /// Children of a single node.
    #[default]
    PerNode,
    /// All nodes sharing a tree level.
    PerLevel,
}

pub fn tree_depth(tree: &DependencyTree) -> usize {
    tree.depth()
}

pub fn max_siblings(tree: &DependencyTree) -> usize {
    max_siblings_with(tree, SiblingMode::PerNode)
}

/// Widest sibling group in `tree`. A lone node has none, so it scores 0 in
/// both modes.
pub fn max_siblings_with(tree: &DependencyTree, mode: SiblingMode) -> usize {
    match mode {
        SiblingMode::PerNode => tree
            .iter_bfs()
            .map(|(node, _)| node.children.len())
            .max()
            .unwrap_or(0),
        SiblingMode::PerLevel => {
            let mut per_level: BTreeMap<usize, usize> = BTreeMap::new();
            for (_, level) in tree.iter_bfs().filter(|(_, level)| *level > 1) {
                *per_level.entry(level).or_default() += 1;
            }
            per_level.into_values().max().unwrap_or(0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoMetrics {
    pub repo_id: String,
    pub max_depth: usize,
    pub max_siblings: usize,
    pub function_count: usize,
    pub token_count: usize,
}

pub fn repo_metrics(
    repo_id: &str,
    trees: &[DependencyTree],
    functions: &[FunctionRecord],
    tok: &dyn Tokenizer,
) -> RepoMetrics {
    repo_metrics_with(repo_id, trees, functions, tok, SiblingMode::PerNode)
}

pub fn repo_metrics_with(
    repo_id: &str,
    trees: &[DependencyTree],
    functions: &[FunctionRecord],
    tok: &dyn Tokenizer,
    mode: SiblingMode,
) -> RepoMetrics {
    RepoMetrics {
        repo_id: repo_id.to_string(),
        max_depth: trees.iter().map(tree_depth).max().unwrap_or(0),
        max_siblings: trees
            .iter()
            .map(|t| max_siblings_with(t, mode))
            .max()
            .unwrap_or(0),
        function_count: functions.len(),
        token_count: functions.iter().map(|f| tok.count(&f.body_text)).sum(),
    }
}

/// Inclusive bounds on repository shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub depth_min: usize,
    pub depth_max: usize,
    pub siblings_min: usize,
    pub siblings_max: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            depth_min: 3,
            depth_max: 6,
            siblings_min: 3,
            siblings_max: 10,
        }
    }
}

impl FilterPolicy {
    pub fn is_ordered(&self) -> bool {
        self.depth_min <= self.depth_max && self.siblings_min <= self.siblings_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    DepthBelowMin,
    DepthAboveMax,
    SiblingsBelowMin,
    SiblingsAboveMax,
    /// A call tree exceeded the node limit. Assigned by the pipeline; the
    /// shape filter itself never returns it.
    TreeTooLarge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision", content = "reason")]
pub enum FilterDecision {
    Keep,
    Drop(DropReason),
}

impl FilterDecision {
    pub fn is_keep(&self) -> bool {
        matches!(self, FilterDecision::Keep)
    }
}

/// Depth is checked before siblings, lower bounds before upper bounds.
pub fn filter_repo(metrics: &RepoMetrics, policy: &FilterPolicy) -> FilterDecision {
    let reason = if metrics.max_depth < policy.depth_min {
        DropReason::DepthBelowMin
    } else if metrics.max_depth > policy.depth_max {
        DropReason::DepthAboveMax
    } else if metrics.max_siblings < policy.siblings_min {
        DropReason::SiblingsBelowMin
    } else if metrics.max_siblings > policy.siblings_max {
        DropReason::SiblingsAboveMax
    } else {
        return FilterDecision::Keep;
    };
    FilterDecision::Drop(reason)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricField {
    Depth,
    Siblings,
}

impl MetricField {
    pub fn of(self, metrics: &RepoMetrics) -> usize {
        match self {
            MetricField::Depth => metrics.max_depth,
            MetricField::Siblings => metrics.max_siblings,
        }
    }
}

/// `count` bins of equal `width`; bin `i` holds values in
/// `[start + i*width, start + (i+1)*width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinSpec {
    pub start: usize,
    pub width: usize,
    pub count: usize,
}

impl BinSpec {
    /// Width-one bins from 0 through `max` inclusive.
    pub fn unit(max: usize) -> Self {
        BinSpec {
            start: 0,
            width: 1,
            count: max + 1,
        }
    }

    /// Width-one bins spanning the observed values of `field`.
    pub fn covering(metrics: &[RepoMetrics], field: MetricField) -> Self {
        let max = metrics.iter().map(|m| field.of(m)).max().unwrap_or(0);
        Self::unit(max)
    }

    fn index_of(&self, value: usize) -> Option<usize> {
        let offset = value.checked_sub(self.start)?;
        let index = offset / self.width;
        (index < self.count).then_some(index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HistogramError {
    #[error("no repositories to bin")]
    EmptyInput,
    #[error("bin width must be positive")]
    ZeroWidth,
    #[error("value {value} of {repo_id} falls outside the bins")]
    OutOfRange { repo_id: String, value: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub field: MetricField,
    pub bins: BinSpec,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Lower bound of each bin paired with its count.
    pub fn rows(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (self.bins.start + i * self.bins.width, c))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["bin", "count"])?;
        for (bin, count) in self.rows() {
            writer.serialize((bin, count))?;
        }
        writer.flush()?;
        Ok(())
    }
}

pub fn histogram(
    all_metrics: &[RepoMetrics],
    field: MetricField,
    bins: BinSpec,
) -> Result<Histogram, HistogramError> {
    if all_metrics.is_empty() {
        return Err(HistogramError::EmptyInput);
    }
    if bins.width == 0 {
        return Err(HistogramError::ZeroWidth);
    }
    let mut counts = vec![0; bins.count];
    for m in all_metrics {
        let value = field.of(m);
        let index = bins
            .index_of(value)
            .ok_or_else(|| HistogramError::OutOfRange {
                repo_id: m.repo_id.clone(),
                value,
            })?;
        counts[index] += 1;
    }
    Ok(Histogram {
        field,
        bins,
        counts,
    })
}

/// One row per repository: repo_id, max_depth, max_siblings,
/// function_count, token_count.
pub fn write_metrics_csv<W: Write>(metrics: &[RepoMetrics], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for m in metrics {
        writer.serialize(m)?;
    }
    writer.flush()?;
    Ok(())
}
