//! Static analysis of architectures for parameter-free backdoor components.
//!
//! Three checks are combined into a [`ScanReport`]:
//! * parameter-free paths from the raw input into a merge with learned features,
//! * parameter-free branches whose interval bounds are unusually large,
//! * output units that are not wired symmetrically.

mod ibp;
mod interval;
mod paths;
mod symmetry;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ibp::{node_hulls, propagate_bounds, propagate_bounds_with};
pub use interval::{Interval, IntervalTensor};
pub use paths::{find_param_free_io_paths, param_dependence, IoPath};
pub use symmetry::{asymmetric_units, unit_signatures, Signature};

use crate::archjson;
use crate::engine::ParamStore;
use crate::error::Result;
use crate::graph::{ArchGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FindingKind {
    IoPath,
    BoundedConstantBranch,
    Asymmetry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    Info,
    Warn,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub severity: Severity,
    pub nodes: Vec<NodeId>,
    pub explanation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Clean,
    Suspicious,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub graph: String,
    pub verdict: Verdict,
    pub findings: Vec<Finding>,
}

impl ScanReport {
    /// Sorts findings (by first node id, then kind) and derives the verdict.
    pub fn new(graph: impl Into<String>, mut findings: Vec<Finding>) -> Self {
        findings.sort_by(|a, b| (a.nodes.first(), a.kind, &a.nodes).cmp(&(b.nodes.first(), b.kind, &b.nodes)));
        let verdict = if findings.iter().any(|f| f.severity == Severity::Critical) {
            Verdict::Suspicious
        } else {
            Verdict::Clean
        };
        ScanReport { graph: graph.into(), verdict, findings }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn kebab<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

impl fmt::Display for ScanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}: {}", self.graph, kebab(&self.verdict))?;
        for x in &self.findings {
            let nodes: Vec<String> = x.nodes.iter().map(ToString::to_string).collect();
            writeln!(f, "  [{}] {} nodes {}: {}", kebab(&x.severity), kebab(&x.kind), nodes.join(","), x.explanation)?;
        }
        Ok(())
    }
}

/// Knobs of the bounded-branch check.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    pub input_domain: Interval,
    /// Threshold used when the trunk is unbounded (no parameters supplied).
    pub absolute_threshold: f64,
    /// Multiple of the trunk bound used when parameters are supplied.
    pub relative_threshold: f64,
    pub params: Option<ParamStore>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig { input_domain: Interval::UNIT, absolute_threshold: 100.0, relative_threshold: 10.0, params: None }
    }
}

/// Parameter-free, input-derived nodes consumed by parameter-dependent ones
/// whose upper bound exceeds the threshold. Critical when the branch also
/// lies on a parameter-free io-path.
pub fn flag_bounded_branches(
    graph: &ArchGraph,
    hulls: &BTreeMap<NodeId, Interval>,
    io_paths: &[IoPath],
    cfg: &ScanConfig,
) -> Vec<Finding> {
    let dep = param_dependence(graph);
    let on_path: BTreeSet<NodeId> = io_paths.iter().flat_map(|p| p.branch.iter().copied()).collect();
    let mut out = Vec::new();
    for &id in graph.nodes().keys() {
        if dep[&id] || id == graph.input() {
            continue;
        }
        let consumers = graph.consumers(id);
        let dependent: Vec<NodeId> = consumers.iter().copied().filter(|c| dep[c]).collect();
        if dependent.is_empty() {
            continue;
        }
        let mut branch = graph.ancestors(id);
        branch.insert(id);
        branch.remove(&graph.input());
        let bound = hulls[&id];
        // trunk reference: the learned operands meeting this branch
        let trunk = dependent
            .iter()
            .flat_map(|&c| graph.operands(c))
            .filter(|o| dep[o])
            .map(|o| hulls[&o].magnitude())
            .fold(0.0, f64::max);
        let (threshold, basis) = if trunk.is_finite() && trunk > 0.0 {
            (cfg.relative_threshold * trunk, format!("{}x trunk bound {trunk:.4}", cfg.relative_threshold))
        } else {
            (cfg.absolute_threshold, "absolute threshold; trunk unbounded".to_string())
        };
        if bound.magnitude() <= threshold {
            continue;
        }
        let critical = branch.iter().any(|n| on_path.contains(n));
        out.push(Finding {
            kind: FindingKind::BoundedConstantBranch,
            severity: if critical { Severity::Critical } else { Severity::Warn },
            nodes: branch.into_iter().collect(),
            explanation: format!(
                "parameter-free branch ending at node {id} outputs values in [{:.6e}, {:.6e}] for every weight setting, \
                 above {threshold:.4} ({basis}){}",
                bound.lo,
                bound.hi,
                if critical { "; it lies on a parameter-free input path" } else { "" }
            ),
        });
    }
    out
}

/// A warning naming the output units whose ancestor cones differ.
pub fn output_symmetry(graph: &ArchGraph) -> Result<Option<Finding>> {
    let units = asymmetric_units(graph)?;
    if units.is_empty() {
        return Ok(None);
    }
    let list: Vec<String> = units.iter().map(ToString::to_string).collect();
    Ok(Some(Finding {
        kind: FindingKind::Asymmetry,
        severity: Severity::Warn,
        nodes: vec![graph.output()],
        explanation: format!(
            "output unit{} {} differ structurally from the others; asymmetric wiring allows a targeted backdoor",
            if units.len() == 1 { "" } else { "s" },
            list.join(", ")
        ),
    }))
}

fn io_path_finding(graph: &ArchGraph, p: &IoPath) -> Finding {
    let mut nodes: Vec<NodeId> = p.branch.iter().copied().collect();
    nodes.push(p.merge);
    let witness: Vec<String> = p.witness.iter().map(ToString::to_string).collect();
    Finding {
        kind: FindingKind::IoPath,
        severity: Severity::Critical,
        nodes,
        explanation: format!(
            "parameter-free path from input into {} node {} (witness {}) bypasses every learnable layer",
            graph.kind(p.merge).map_or("merge", |k| k.tag()),
            p.merge,
            witness.join(" -> ")
        ),
    }
}

/// Run every analysis on an in-memory graph.
pub fn scan_graph(graph: &ArchGraph, cfg: &ScanConfig) -> Result<ScanReport> {
    graph.ensure_valid()?;
    let io = find_param_free_io_paths(graph);
    let bounds = propagate_bounds(graph, cfg.params.as_ref(), cfg.input_domain)?;
    let hulls = node_hulls(&bounds);
    let mut findings: Vec<Finding> = io.iter().map(|p| io_path_finding(graph, p)).collect();
    findings.extend(flag_bounded_branches(graph, &hulls, &io, cfg));
    findings.extend(output_symmetry(graph)?);
    Ok(ScanReport::new(graph.name.clone(), findings))
}

/// Parse and scan an architecture file.
pub fn scan(path: impl AsRef<Path>) -> Result<ScanReport> {
    let graph = archjson::read(path)?;
    scan_graph(&graph, &ScanConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{inject_mab, DetectorConfig};
    use crate::graph::{Adaptive, Dense, ExpAffinePow, NodeKind};
    use crate::models;

    #[test]
    fn exp_affine_pow_interval_closed_form() {
        let mut g = ArchGraph::new("e", vec![1, 1, 1]);
        let e = g.add(NodeKind::ExpAffinePow(ExpAffinePow { alpha: 10, beta: 1.0, delta: 1.0 }), &[g.input()]);
        g.set_output(e);
        let b = propagate_bounds(&g, None, Interval::UNIT).unwrap();
        let h = b[&e].hull();
        assert_eq!(h.lo, 0.0);
        assert!((h.hi - (std::f64::consts::E - 1.0).powi(10)).abs() < 1e-9);
    }

    #[test]
    fn relu_interval() {
        let mut g = ArchGraph::new("r", vec![1, 1, 1]);
        let r = g.add(NodeKind::Relu, &[g.input()]);
        g.set_output(r);
        let b = propagate_bounds(&g, None, Interval::new(-2.0, 3.0).unwrap()).unwrap();
        assert_eq!(b[&r].hull(), Interval { lo: 0.0, hi: 3.0 });
    }

    #[test]
    fn clean_fixtures_have_no_findings() {
        for name in ["alexnet-small", "vgg11", "resnet-block", "identity-skip"] {
            let g = models::build_named(name, 10).unwrap();
            let r = scan_graph(&g, &ScanConfig::default()).unwrap();
            assert!(r.findings.is_empty(), "{name}: {r}");
            assert_eq!(r.verdict, Verdict::Clean);
        }
    }

    #[test]
    fn injected_detectors_are_critical() {
        let host = models::build_alexnet_small(10).unwrap();
        for cfg in [DetectorConfig::naive(), DetectorConfig::robust()] {
            let (g, inj) = inject_mab(&host, &cfg).unwrap();
            let paths = find_param_free_io_paths(&g);
            assert_eq!(paths.len(), 1);
            assert_eq!(paths[0].merge, inj.merge);
            assert_eq!(paths[0].branch, inj.detector.iter().copied().collect());
            let r = scan_graph(&g, &ScanConfig::default()).unwrap();
            assert_eq!(r.verdict, Verdict::Suspicious, "{r}");
            assert!(r.findings.iter().all(|f| f.kind != FindingKind::Asymmetry), "{r}");
            assert!(r.findings.iter().any(|f| f.kind == FindingKind::BoundedConstantBranch && f.severity == Severity::Critical));
        }
    }

    #[test]
    fn uneven_side_channel_is_asymmetric() {
        let mut g = ArchGraph::new("asym", vec![3, 8, 8]);
        let inp = g.input();
        let f = g.add(NodeKind::Flatten, &[inp]);
        let d = g.add(NodeKind::Dense(Dense { in_features: 192, out_features: 3 }), &[f]);
        let r = g.add(NodeKind::ChannelMaxReduce, &[inp]);
        let p = g.add(NodeKind::AdaptiveMaxPool(Adaptive { output: [1, 3] }), &[r]);
        let pf = g.add(NodeKind::Flatten, &[p]);
        let s = g.add(NodeKind::Add, &[d, pf]);
        g.set_output(s);
        assert_eq!(asymmetric_units(&g).unwrap(), vec![1]);
        let finding = output_symmetry(&g).unwrap().unwrap();
        assert!(finding.explanation.contains("unit 1 "), "{}", finding.explanation);
    }

    #[test]
    fn report_json_shape() {
        let r = ScanReport::new("x", vec![]);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["verdict"], "clean");
        assert!(v["findings"].as_array().unwrap().is_empty());
    }
}
