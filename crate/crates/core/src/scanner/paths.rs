use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::graph::{ArchGraph, NodeId, NodeKind};

/// `true` for nodes whose value depends on at least one learnable parameter.
pub fn param_dependence(graph: &ArchGraph) -> BTreeMap<NodeId, bool> {
    let mut dep = BTreeMap::new();
    // topo order exists for any graph that passed validation; fall back to
    // id order, which the builders also keep topological
    let order = graph.topo_order().unwrap_or_else(|_| graph.nodes().keys().copied().collect());
    for id in order {
        let own = graph.kind(id).is_some_and(NodeKind::is_parameterized);
        let d = own || graph.operands(id).iter().any(|o| dep.get(o).copied().unwrap_or(false));
        dep.insert(id, d);
    }
    dep
}

/// A parameter-free route from the input into a merge node whose other
/// operand carries learned features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoPath {
    pub merge: NodeId,
    /// Operand of `merge` at the end of the parameter-free branch.
    pub branch_head: NodeId,
    /// Every parameter-free node computing the branch, input excluded.
    pub branch: BTreeSet<NodeId>,
    /// One concrete input-to-merge path.
    pub witness: Vec<NodeId>,
}

fn computes_something(graph: &ArchGraph, branch: &BTreeSet<NodeId>) -> bool {
    branch.iter().any(|&n| !matches!(graph.kind(n), Some(NodeKind::Flatten | NodeKind::Output)))
}

fn witness(graph: &ArchGraph, allowed: &BTreeSet<NodeId>, to: NodeId) -> Vec<NodeId> {
    let start = graph.input();
    let mut prev: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut queue = VecDeque::from([start]);
    let mut seen = BTreeSet::from([start]);
    while let Some(n) = queue.pop_front() {
        if n == to {
            break;
        }
        for c in graph.consumers(n) {
            if (c == to || allowed.contains(&c)) && seen.insert(c) {
                prev.insert(c, n);
                queue.push_back(c);
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to;
    while let Some(&p) = prev.get(&cur) {
        path.push(p);
        cur = p;
    }
    path.reverse();
    path
}

/// Merge nodes (`add`/`multiply`) fed both by a parameter-free computation
/// on the raw input and by a parameter-dependent operand. One witness path
/// per merge node. A bare identity skip (no computation between input and
/// merge other than reshaping) is not reported.
pub fn find_param_free_io_paths(graph: &ArchGraph) -> Vec<IoPath> {
    let dep = param_dependence(graph);
    let from_input = graph.descendants(graph.input());
    let mut out = Vec::new();
    for (&m, kind) in graph.nodes() {
        if !kind.is_merge() {
            continue;
        }
        let operands = graph.operands(m);
        if !operands.iter().any(|o| dep[o]) {
            continue;
        }
        let mut branch = BTreeSet::new();
        let mut head = None;
        for &o in &operands {
            if dep[&o] || !(from_input.contains(&o) || o == graph.input()) {
                continue;
            }
            let mut nodes = graph.ancestors(o);
            nodes.insert(o);
            nodes.remove(&graph.input());
            head.get_or_insert(o);
            branch.extend(nodes);
        }
        let Some(head) = head else { continue };
        if !computes_something(graph, &branch) {
            continue;
        }
        let witness = witness(graph, &branch, m);
        out.push(IoPath { merge: m, branch_head: head, branch, witness });
    }
    out
}
