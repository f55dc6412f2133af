//! Project-wide call graph and the dependency trees derived from it.
//!
//! Per-file analyses are merged into one graph whose nodes are the
//! repository's functions and whose edges are the caller → callee pairs that
//! stay inside the repository. Calls into the standard library or third-party
//! packages are dropped and tallied. Self-calls are kept out of the edge set
//! and recorded in [`DependencyGraph::self_recursive`] instead.

mod order;
mod tree;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::ingest::{FileAnalysis, FunctionRecord, Resolver};

pub use order::{strongly_connected_components, topological_order, TopologicalOrder};
pub use tree::{
    build_call_tree, build_call_tree_with_limit, enumerate_roots, DependencyTree, TreeError,
    DEFAULT_TREE_NODE_LIMIT,
};

/// Bound on import re-export hops followed while resolving a name.
const MAX_REEXPORT_HOPS: usize = 8;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyGraph {
    pub nodes: BTreeSet<String>,
    /// Caller → callee, deduplicated, without self-loops.
    pub edges: BTreeSet<(String, String)>,
    pub self_recursive: BTreeSet<String>,
    pub unresolved_count: usize,
    /// One message per qualified name defined in more than one file.
    #[serde(default)]
    pub duplicate_definitions: Vec<String>,
    /// Docstrings of documented nodes.
    #[serde(default)]
    pub docstrings: BTreeMap<String, String>,
}

impl DependencyGraph {
    /// Graph over `nodes` with the given edges; a self-edge marks its node
    /// self-recursive instead of becoming an edge.
    pub fn from_edges<'a>(
        nodes: impl IntoIterator<Item = &'a str>,
        edges: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Self {
        let mut graph = DependencyGraph {
            nodes: nodes.into_iter().map(str::to_string).collect(),
            ..Default::default()
        };
        for (caller, callee) in edges {
            graph.nodes.insert(caller.to_string());
            graph.nodes.insert(callee.to_string());
            graph.add_edge(caller, callee);
        }
        graph
    }

    fn add_edge(&mut self, caller: &str, callee: &str) {
        if caller == callee {
            self.self_recursive.insert(caller.to_string());
        } else {
            self.edges.insert((caller.to_string(), callee.to_string()));
        }
    }

    /// Callees of `node` in lexicographic order.
    pub fn callees<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .range((node.to_string(), String::new())..)
            .take_while(move |(caller, _)| caller == node)
            .map(|(_, callee)| callee.as_str())
    }

    pub fn out_degree(&self, node: &str) -> usize {
        self.callees(node).count()
    }

    pub fn in_degrees(&self) -> BTreeMap<&str, usize> {
        let mut degrees: BTreeMap<&str, usize> =
            self.nodes.iter().map(|n| (n.as_str(), 0)).collect();
        for (_, callee) in &self.edges {
            *degrees.entry(callee.as_str()).or_default() += 1;
        }
        degrees
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph is always serializable")
    }
}

/// All function records of a repository keyed by qualified name. When two
/// files define the same name, the file later in path order wins.
pub fn index_functions(analyses: &[FileAnalysis]) -> BTreeMap<String, FunctionRecord> {
    let mut sorted: Vec<&FileAnalysis> = analyses.iter().collect();
    sorted.sort_by(|a, b| a.file_path.cmp(&b.file_path));
    let mut index = BTreeMap::new();
    for analysis in sorted {
        for f in &analysis.functions {
            index.insert(f.qualified_name.clone(), f.clone());
        }
    }
    index
}

struct ProjectLookup<'a> {
    nodes: &'a BTreeSet<String>,
    modules: HashMap<&'a str, &'a FileAnalysis>,
    /// Dotted suffix (two or more segments) → the unique node ending in it,
    /// or `None` when several nodes share the suffix.
    suffixes: HashMap<String, Option<&'a str>>,
}

impl<'a> ProjectLookup<'a> {
    fn new(nodes: &'a BTreeSet<String>, analyses: &[&'a FileAnalysis]) -> Self {
        let modules = analyses.iter().map(|a| (a.module.as_str(), *a)).collect();
        let mut suffixes: HashMap<String, Option<&'a str>> = HashMap::new();
        for node in nodes {
            let mut rest = node.as_str();
            while let Some((_, tail)) = rest.split_once('.') {
                if !tail.contains('.') {
                    break;
                }
                suffixes
                    .entry(tail.to_string())
                    .and_modify(|slot| *slot = None)
                    .or_insert(Some(node.as_str()));
                rest = tail;
            }
        }
        Self {
            nodes,
            modules,
            suffixes,
        }
    }

    /// Maps a resolved dotted name onto a project function, if it is one.
    fn find(&self, name: &str) -> Option<String> {
        let mut current = name.to_string();
        for _ in 0..MAX_REEXPORT_HOPS {
            if self.nodes.contains(&current) {
                return Some(current);
            }
            let init = format!("{current}.__init__");
            if self.nodes.contains(&init) {
                return Some(init);
            }
            match self.follow_reexport(&current) {
                Some(next) if next != current => current = next,
                _ => break,
            }
        }
        if name.contains('.') {
            for candidate in [name.to_string(), format!("{name}.__init__")] {
                if let Some(Some(node)) = self.suffixes.get(&candidate) {
                    return Some(node.to_string());
                }
            }
        }
        None
    }

    /// `pkg.helper` where `pkg/__init__.py` does `from .impl import helper`.
    fn follow_reexport(&self, name: &str) -> Option<String> {
        let segments: Vec<&str> = name.split('.').collect();
        for split in (1..segments.len()).rev() {
            let module = segments[..split].join(".");
            let Some(analysis) = self.modules.get(module.as_str()) else {
                continue;
            };
            let target = analysis.imports.get(segments[split])?;
            let mut rewritten = target.clone();
            for rest in &segments[split + 1..] {
                rewritten.push('.');
                rewritten.push_str(rest);
            }
            return Some(rewritten);
        }
        None
    }
}

/// Merges the analyses of one repository into its internal call graph.
///
/// Input order does not matter: files are processed in path order.
pub fn build_project_graph(analyses: &[FileAnalysis]) -> DependencyGraph {
    let mut sorted: Vec<&FileAnalysis> = analyses.iter().collect();
    sorted.sort_by(|a, b| a.file_path.cmp(&b.file_path));

    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    let mut duplicate_definitions = Vec::new();
    for analysis in &sorted {
        for f in &analysis.functions {
            if let Some(previous) = owner.insert(&f.qualified_name, &analysis.file_path) {
                duplicate_definitions.push(format!(
                    "{} defined in {} and {}; keeping {}",
                    f.qualified_name, previous, analysis.file_path, analysis.file_path
                ));
            }
        }
    }

    let mut graph = DependencyGraph {
        nodes: owner.keys().map(|k| k.to_string()).collect(),
        duplicate_definitions,
        ..Default::default()
    };
    let nodes = graph.nodes.clone();
    let lookup = ProjectLookup::new(&nodes, &sorted);

    for analysis in &sorted {
        let resolver = Resolver::new(analysis);
        for f in &analysis.functions {
            if owner.get(f.qualified_name.as_str()) != Some(&analysis.file_path.as_str()) {
                continue;
            }
            if let Some(doc) = &f.docstring {
                graph
                    .docstrings
                    .insert(f.qualified_name.clone(), doc.clone());
            }
            for call in &f.call_sites {
                let target = resolver
                    .resolve(call, f)
                    .and_then(|name| lookup.find(&name));
                match target {
                    Some(callee) => graph.add_edge(&f.qualified_name, &callee),
                    None => graph.unresolved_count += 1,
                }
            }
        }
    }
    graph
}

/// Every function reachable from `root` through at least one edge.
pub fn reachable_from(graph: &DependencyGraph, root: &str) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    let mut stack: Vec<&str> = graph.callees(root).collect();
    while let Some(node) = stack.pop() {
        if seen.insert(node.to_string()) {
            stack.extend(graph.callees(node));
        }
    }
    seen
}
