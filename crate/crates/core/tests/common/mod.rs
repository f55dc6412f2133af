#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use caf_core::graph::{build_call_tree, build_project_graph, enumerate_roots, DependencyGraph};
use caf_core::ingest::{parse_file, FileAnalysis, PythonGrammar};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// A hand-written expectation for one fixture repository.
pub struct Oracle {
    pub name: String,
    pub repo: PathBuf,
    /// `a -> a` lines stand for self-recursion.
    pub edges: BTreeSet<(String, String)>,
    /// Root → rendered tree.
    pub trees: BTreeMap<String, String>,
}

pub fn load_oracles() -> Vec<Oracle> {
    let dir = fixtures().join("deps");
    let mut names: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let base = dir.join(&name);
            let edges = fs::read_to_string(base.join("edges.txt"))
                .unwrap()
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    let (a, b) = l.split_once(" -> ").expect("edge line");
                    (a.trim().to_string(), b.trim().to_string())
                })
                .collect();
            let trees = fs::read_to_string(base.join("trees.txt"))
                .unwrap()
                .split("\n\n")
                .filter(|block| !block.trim().is_empty())
                .map(|block| {
                    let block = format!("{}\n", block.trim_end_matches('\n'));
                    let root = block
                        .lines()
                        .next()
                        .unwrap()
                        .trim_end_matches("  [recursive]");
                    (root.to_string(), block)
                })
                .collect();
            Oracle {
                name,
                repo: base.join("repo"),
                edges,
                trees,
            }
        })
        .collect()
}

fn sources(dir: &Path, base: &Path, found: &mut Vec<String>) {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            sources(&path, base, found);
        } else if path.extension().is_some_and(|e| e == "py") {
            let rel = path.strip_prefix(base).unwrap();
            found.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
}

pub fn analyze(repo: &Path) -> Vec<FileAnalysis> {
    let mut files = Vec::new();
    sources(repo, repo, &mut files);
    files
        .iter()
        .map(|rel| {
            let text = fs::read_to_string(repo.join(rel)).unwrap();
            parse_file(&text, rel, &PythonGrammar).unwrap()
        })
        .collect()
}

/// Edge set with self-recursion folded back in as `a -> a`.
pub fn observed_edges(graph: &DependencyGraph) -> BTreeSet<(String, String)> {
    graph
        .edges
        .iter()
        .cloned()
        .chain(graph.self_recursive.iter().map(|n| (n.clone(), n.clone())))
        .collect()
}

pub fn observed_trees(graph: &DependencyGraph) -> BTreeMap<String, String> {
    enumerate_roots(graph)
        .into_iter()
        .map(|root| {
            let tree = build_call_tree(graph, &root).unwrap();
            (root, tree.render())
        })
        .collect()
}

/// Differences between the oracle and the analysis of its repository.
pub fn check_oracle(oracle: &Oracle) -> Vec<String> {
    let graph = build_project_graph(&analyze(&oracle.repo));
    let mut problems = Vec::new();
    let edges = observed_edges(&graph);
    for missing in oracle.edges.difference(&edges) {
        problems.push(format!("missing edge {} -> {}", missing.0, missing.1));
    }
    for extra in edges.difference(&oracle.edges) {
        problems.push(format!("unexpected edge {} -> {}", extra.0, extra.1));
    }
    let trees = observed_trees(&graph);
    for (root, expected) in &oracle.trees {
        match trees.get(root) {
            None => problems.push(format!("no tree for root {root}")),
            Some(found) if found != expected => {
                problems.push(format!("tree {root}:\nexpected\n{expected}found\n{found}"))
            }
            Some(_) => {}
        }
    }
    for root in trees.keys().filter(|r| !oracle.trees.contains_key(*r)) {
        problems.push(format!("unexpected root {root}"));
    }
    problems
}
