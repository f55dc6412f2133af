use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::DependencyGraph;

/// Largest tree [`build_call_tree`] will materialise. Dense diamond-shaped
/// graphs expand exponentially once unfolded into a tree.
pub const DEFAULT_TREE_NODE_LIMIT: usize = 100_000;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("root {0} is not a node of the graph")]
    RootNotFound(String),
    #[error("call tree of {root} exceeds {limit} nodes")]
    TooLarge { root: String, limit: usize },
}

/// Nested call tree: each child is a function called by its parent.
///
/// `recursion_marker` is set on self-recursive functions and on the leaf
/// inserted where expansion reaches a function already on the current path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyTree {
    pub root: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub recursion_marker: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<DependencyTree>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub docstring_ref: Option<String>,
}

impl DependencyTree {
    pub fn leaf(root: impl Into<String>) -> Self {
        DependencyTree {
            root: root.into(),
            recursion_marker: false,
            children: Vec::new(),
            docstring_ref: None,
        }
    }

    /// Node count of the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        let mut deepest = 0;
        let mut stack = vec![(self, 1)];
        while let Some((node, level)) = stack.pop() {
            deepest = deepest.max(level);
            stack.extend(node.children.iter().map(|c| (c, level + 1)));
        }
        deepest
    }

    pub fn node_count(&self) -> usize {
        self.iter_bfs().count()
    }

    /// Nodes in breadth-first order with their level (root = 1).
    pub fn iter_bfs(&self) -> impl Iterator<Item = (&DependencyTree, usize)> {
        let mut queue = VecDeque::from([(self, 1)]);
        std::iter::from_fn(move || {
            let (node, level) = queue.pop_front()?;
            queue.extend(node.children.iter().map(|c| (c, level + 1)));
            Some((node, level))
        })
    }

    /// Indented text rendering, one function per line.
    ///
    /// ```text
    /// app.main
    /// ├── app.load
    /// │   └── app.parse
    /// └── app.run  [recursive]
    /// ```
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.label());
        out.push('\n');
        self.render_children("", &mut out);
        out
    }

    fn label(&self) -> String {
        if self.recursion_marker {
            format!("{}  [recursive]", self.root)
        } else {
            self.root.clone()
        }
    }

    fn render_children(&self, prefix: &str, out: &mut String) {
        let count = self.children.len();
        for (i, child) in self.children.iter().enumerate() {
            let last = i + 1 == count;
            let branch = if last { "└── " } else { "├── " };
            let _ = writeln!(out, "{prefix}{branch}{}", child.label());
            let extension = if last { "    " } else { "│   " };
            child.render_children(&format!("{prefix}{extension}"), out);
        }
    }
}

struct ArenaNode {
    id: String,
    parent: Option<usize>,
    marker: bool,
    children: Vec<usize>,
}

/// [`build_call_tree_with_limit`] with [`DEFAULT_TREE_NODE_LIMIT`].
pub fn build_call_tree(graph: &DependencyGraph, root: &str) -> Result<DependencyTree, TreeError> {
    build_call_tree_with_limit(graph, root, DEFAULT_TREE_NODE_LIMIT)
}

/// Breadth-first expansion of the calls reachable from `root`.
///
/// Children are the callees in lexicographic order. A callee already present
/// on the path from the root becomes a marked leaf rather than being expanded
/// again, so every path is finite and repeats no function except in its
/// final marker leaf.
pub fn build_call_tree_with_limit(
    graph: &DependencyGraph,
    root: &str,
    limit: usize,
) -> Result<DependencyTree, TreeError> {
    if !graph.nodes.contains(root) {
        return Err(TreeError::RootNotFound(root.to_string()));
    }
    let mut arena = vec![ArenaNode {
        id: root.to_string(),
        parent: None,
        marker: graph.self_recursive.contains(root),
        children: Vec::new(),
    }];
    let mut queue = VecDeque::from([0usize]);
    while let Some(current) = queue.pop_front() {
        let current_id = arena[current].id.clone();
        let callees: Vec<&str> = graph.callees(&current_id).collect();
        for callee in callees {
            let mut on_path = false;
            let mut cursor = Some(current);
            while let Some(i) = cursor {
                if arena[i].id == callee {
                    on_path = true;
                    break;
                }
                cursor = arena[i].parent;
            }
            if arena.len() >= limit {
                return Err(TreeError::TooLarge {
                    root: root.to_string(),
                    limit,
                });
            }
            let index = arena.len();
            arena.push(ArenaNode {
                id: callee.to_string(),
                parent: Some(current),
                marker: on_path || graph.self_recursive.contains(callee),
                children: Vec::new(),
            });
            arena[current].children.push(index);
            if !on_path {
                queue.push_back(index);
            }
        }
    }

    // Children always have larger arena indices than their parent, so a
    // reverse sweep assembles subtrees bottom-up.
    let mut built: Vec<Option<DependencyTree>> = (0..arena.len()).map(|_| None).collect();
    for i in (0..arena.len()).rev() {
        let node = &arena[i];
        let children = node
            .children
            .iter()
            .map(|&c| built[c].take().expect("child built before parent"))
            .collect();
        built[i] = Some(DependencyTree {
            root: node.id.clone(),
            recursion_marker: node.marker,
            children,
            docstring_ref: None,
        });
    }
    let mut tree = built[0].take().expect("root is built");
    tree.docstring_ref = graph.docstrings.get(root).cloned();
    Ok(tree)
}

/// Candidate sample roots: every function that calls something, plus every
/// function nobody calls. Sorted.
pub fn enumerate_roots(graph: &DependencyGraph) -> Vec<String> {
    let in_degrees = graph.in_degrees();
    graph
        .nodes
        .iter()
        .filter(|n| graph.out_degree(n) > 0 || in_degrees.get(n.as_str()) == Some(&0))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(nodes: &[&str], edges: &[(&str, &str)]) -> DependencyGraph {
        DependencyGraph::from_edges(nodes.iter().copied(), edges.iter().copied())
    }

    fn node(id: &str, children: Vec<DependencyTree>) -> DependencyTree {
        DependencyTree {
            children,
            ..DependencyTree::leaf(id)
        }
    }

    fn marked(id: &str) -> DependencyTree {
        DependencyTree {
            recursion_marker: true,
            ..DependencyTree::leaf(id)
        }
    }

    #[test]
    fn two_level_tree() {
        let g = graph(&[], &[("main", "f"), ("main", "g"), ("f", "h")]);
        let tree = build_call_tree(&g, "main").unwrap();
        let expected = node(
            "main",
            vec![
                node("f", vec![DependencyTree::leaf("h")]),
                DependencyTree::leaf("g"),
            ],
        );
        assert_eq!(tree, expected);
        assert_eq!(tree.depth(), 3);
        assert_eq!(tree.children.len(), 2);
    }

    #[test]
    fn self_recursive_root() {
        let g = graph(&[], &[("f", "f")]);
        let tree = build_call_tree(&g, "f").unwrap();
        assert_eq!(tree, marked("f"));
        assert_eq!(tree.depth(), 1);
    }

    #[test]
    fn isolated_function() {
        let g = graph(&["solo"], &[]);
        let tree = build_call_tree(&g, "solo").unwrap();
        assert_eq!(tree, DependencyTree::leaf("solo"));
        assert_eq!(tree.depth(), 1);
    }

    #[test]
    fn mutual_recursion_is_cut_with_a_marker_leaf() {
        let g = graph(&[], &[("a", "b"), ("b", "a")]);
        let tree = build_call_tree(&g, "a").unwrap();
        assert_eq!(tree, node("a", vec![node("b", vec![marked("a")])]));
    }

    #[test]
    fn shared_callee_appears_under_each_caller() {
        let g = graph(&[], &[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")]);
        let tree = build_call_tree(&g, "a").unwrap();
        assert_eq!(
            tree,
            node(
                "a",
                vec![
                    node("b", vec![DependencyTree::leaf("d")]),
                    node("c", vec![DependencyTree::leaf("d")]),
                ]
            )
        );
    }

    #[test]
    fn missing_root() {
        let g = graph(&["a"], &[]);
        assert_eq!(
            build_call_tree(&g, "zzz"),
            Err(TreeError::RootNotFound("zzz".into()))
        );
    }

    #[test]
    fn node_limit_is_enforced() {
        let g = graph(&[], &[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")]);
        assert!(matches!(
            build_call_tree_with_limit(&g, "a", 4),
            Err(TreeError::TooLarge { .. })
        ));
        assert!(build_call_tree_with_limit(&g, "a", 5).is_ok());
    }

    #[test]
    fn docstring_attaches_to_the_root_only() {
        let mut g = graph(&[], &[("a", "b")]);
        g.docstrings.insert("a".into(), "Top.".into());
        g.docstrings.insert("b".into(), "Inner.".into());
        let tree = build_call_tree(&g, "a").unwrap();
        assert_eq!(tree.docstring_ref.as_deref(), Some("Top."));
        assert_eq!(tree.children[0].docstring_ref, None);
    }

    #[test]
    fn rendering() {
        let g = graph(&[], &[("main", "f"), ("main", "g"), ("f", "h"), ("g", "g")]);
        let text = build_call_tree(&g, "main").unwrap().render();
        assert_eq!(text, "main\n├── f\n│   └── h\n└── g  [recursive]\n");
    }

    #[test]
    fn roots_of_a_chain_and_a_diamond() {
        let chain = graph(&[], &[("a", "b"), ("b", "c")]);
        assert_eq!(enumerate_roots(&chain), vec!["a", "b"]);
        let diamond = graph(&[], &[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")]);
        assert_eq!(enumerate_roots(&diamond), vec!["a", "b", "c"]);
        assert!(enumerate_roots(&DependencyGraph::default()).is_empty());
    }

    fn arb_graph() -> impl Strategy<Value = DependencyGraph> {
        let names = ["a", "b", "c", "d", "e", "f"];
        prop::collection::vec((0..names.len(), 0..names.len()), 0..14).prop_map(move |pairs| {
            let edges: Vec<(&str, &str)> =
                pairs.iter().map(|&(x, y)| (names[x], names[y])).collect();
            DependencyGraph::from_edges(names.iter().copied(), edges)
        })
    }

    fn check_paths(
        tree: &DependencyTree,
        graph: &DependencyGraph,
        path: &mut Vec<String>,
    ) -> Result<(), TestCaseError> {
        prop_assert!(
            !path.contains(&tree.root),
            "repeated {} on {:?}",
            tree.root,
            path
        );
        path.push(tree.root.clone());
        for child in &tree.children {
            prop_assert!(graph
                .edges
                .contains(&(tree.root.clone(), child.root.clone())));
            if child.recursion_marker && child.children.is_empty() && path.contains(&child.root) {
                continue;
            }
            check_paths(child, graph, path)?;
        }
        path.pop();
        Ok(())
    }

    proptest! {
        #[test]
        fn trees_follow_graph_edges_without_repeating_on_a_path(g in arb_graph()) {
            for root in enumerate_roots(&g) {
                let tree = build_call_tree(&g, &root).unwrap();
                check_paths(&tree, &g, &mut Vec::new())?;
                let mut children: Vec<_> = tree.children.iter().map(|c| c.root.clone()).collect();
                let sorted = { let mut s = children.clone(); s.sort(); s };
                prop_assert_eq!(&children, &sorted);
                children.dedup();
                prop_assert_eq!(children.len(), tree.children.len());
            }
        }
    }
}
