use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use super::DependencyGraph;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologicalOrder {
    /// Every node exactly once; callers before callees outside cycles.
    pub order: Vec<String>,
    /// Strongly connected components with more than one member, each sorted.
    /// Their members are contiguous in `order`.
    pub cycles: Vec<Vec<String>>,
}

/// Tarjan's algorithm, iterative. Components come out with members sorted,
/// and the component list sorted by smallest member.
pub fn strongly_connected_components(graph: &DependencyGraph) -> Vec<Vec<String>> {
    let names: Vec<&str> = graph.nodes.iter().map(String::as_str).collect();
    let index_of: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let adjacency: Vec<Vec<usize>> = names
        .iter()
        .map(|n| graph.callees(n).map(|c| index_of[c]).collect())
        .collect();

    const UNVISITED: usize = usize::MAX;
    let n = names.len();
    let mut index = vec![UNVISITED; n];
    let mut lowlink = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut components = Vec::new();

    for start in 0..n {
        if index[start] != UNVISITED {
            continue;
        }
        // (node, position of the next neighbour to inspect)
        let mut call_stack = vec![(start, 0usize)];
        index[start] = next_index;
        lowlink[start] = next_index;
        next_index += 1;
        stack.push(start);
        on_stack[start] = true;

        while let Some(&(v, pos)) = call_stack.last() {
            if let Some(&w) = adjacency[v].get(pos) {
                if let Some(top) = call_stack.last_mut() {
                    top.1 += 1;
                }
                if index[w] == UNVISITED {
                    index[w] = next_index;
                    lowlink[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call_stack.push((w, 0));
                } else if on_stack[w] {
                    lowlink[v] = lowlink[v].min(index[w]);
                }
                continue;
            }
            call_stack.pop();
            if let Some(&(parent, _)) = call_stack.last() {
                lowlink[parent] = lowlink[parent].min(lowlink[v]);
            }
            if lowlink[v] == index[v] {
                let mut component = Vec::new();
                loop {
                    let w = stack.pop().expect("component root is on the stack");
                    on_stack[w] = false;
                    component.push(names[w].to_string());
                    if w == v {
                        break;
                    }
                }
                component.sort();
                components.push(component);
            }
        }
    }
    components.sort();
    components
}

/// Kahn's breadth-first ordering over the condensation of the graph.
///
/// Ready components are taken smallest-member first, and members of a cycle
/// are emitted together in lexicographic order, so the result is fully
/// determined by the graph.
pub fn topological_order(graph: &DependencyGraph) -> TopologicalOrder {
    let components = strongly_connected_components(graph);
    let mut component_of: HashMap<&str, usize> = HashMap::new();
    for (i, members) in components.iter().enumerate() {
        for m in members {
            component_of.insert(m.as_str(), i);
        }
    }

    let mut successors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); components.len()];
    for (caller, callee) in &graph.edges {
        let (a, b) = (component_of[caller.as_str()], component_of[callee.as_str()]);
        if a != b {
            successors[a].insert(b);
        }
    }
    let mut in_degree = vec![0usize; components.len()];
    for succ in &successors {
        for &b in succ {
            in_degree[b] += 1;
        }
    }

    // Components are sorted by smallest member, so the index is the key.
    let mut ready: BinaryHeap<Reverse<usize>> = in_degree
        .iter()
        .enumerate()
        .filter(|(_, d)| **d == 0)
        .map(|(i, _)| Reverse(i))
        .collect();
    let mut order = Vec::with_capacity(graph.nodes.len());
    while let Some(Reverse(c)) = ready.pop() {
        order.extend(components[c].iter().cloned());
        for &next in &successors[c] {
            in_degree[next] -= 1;
            if in_degree[next] == 0 {
                ready.push(Reverse(next));
            }
        }
    }

    TopologicalOrder {
        order,
        cycles: components.into_iter().filter(|c| c.len() > 1).collect(),
    }
}
