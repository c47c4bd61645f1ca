//! Weight-agnostic trigger detectors and their injection into a host graph.
//!
//! The naive detector fires on a solid white block:
//! `(e^{beta x} - delta)^alpha -> min-pool k x k -> max over channels`.
//! The robust detector fires on a black/white checkerboard: it multiplies a
//! white-selective and a black-selective average-pooled response
//! (`avgpool((e^{beta x} - delta)^alpha) * avgpool((e^{-beta x} - delta)^alpha)`)
//! and then takes the channel maximum.
//!
//! [`inject_mab`] wires a detector from the raw input to the graph's
//! adaptive-average-pool, pools its map to the same spatial size and adds it
//! to every channel. Nothing it adds has parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Adaptive, ArchGraph, ExpAffinePow, NodeId, NodeKind, Pool};
use crate::ops::{self, Reduce};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorMode {
    Naive,
    Robust,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub alpha: u32,
    pub beta: f64,
    pub delta: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    pub mode: DetectorMode,
}

fn default_window() -> usize {
    3
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { alpha: 10, beta: 1.0, delta: 1.0, window: 3, mode: DetectorMode::Robust }
    }
}

impl DetectorConfig {
    pub fn naive() -> Self {
        DetectorConfig { mode: DetectorMode::Naive, ..Self::default() }
    }

    pub fn robust() -> Self {
        Self::default()
    }

    pub fn check(&self) -> Result<()> {
        if self.alpha == 0 {
            return Err(Error::Config("detector alpha must be a positive integer".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("detector window must be positive".into()));
        }
        if !self.beta.is_finite() || !self.delta.is_finite() {
            return Err(Error::Config("detector beta and delta must be finite".into()));
        }
        Ok(())
    }

    fn exp(&self) -> ExpAffinePow {
        ExpAffinePow { alpha: self.alpha, beta: self.beta, delta: self.delta }
    }

    fn window(&self) -> Pool {
        Pool { kernel: self.window, stride: 1 }
    }
}

/// Intermediate maps of a detector, in evaluation order.
pub fn detector_stages(img: &Tensor, cfg: &DetectorConfig) -> Result<Vec<(&'static str, Tensor)>> {
    cfg.check()?;
    let (_, h, w) = img.chw()?;
    if cfg.window > h || cfg.window > w {
        return Err(Error::Shape(format!("detector window {} exceeds {h}x{w} image", cfg.window)));
    }
    let e = cfg.exp();
    let win = cfg.window();
    Ok(match cfg.mode {
        DetectorMode::Naive => {
            let powered = img.map(|x| e.apply(x));
            let pooled = ops::pool2d(&powered, &win, Reduce::Min);
            let reduced = ops::channel_max(&pooled);
            vec![("exp-affine-pow", powered), ("min-pool", pooled), ("channel-max", reduced)]
        }
        DetectorMode::Robust => {
            let white = img.map(|x| e.apply(x));
            let black = img.map(|x| e.apply(-x));
            let white_avg = ops::pool2d(&white, &win, Reduce::Avg);
            let black_avg = ops::pool2d(&black, &win, Reduce::Avg);
            let product = ops::broadcast_binary(&white_avg, &black_avg, |a, b| a * b);
            let reduced = ops::channel_max(&product);
            vec![
                ("white", white),
                ("black", black),
                ("white-avg", white_avg),
                ("black-avg", black_avg),
                ("product", product),
                ("channel-max", reduced),
            ]
        }
    })
}

fn final_map(img: &Tensor, cfg: &DetectorConfig) -> Result<Tensor> {
    let mut stages = detector_stages(img, cfg)?;
    let (_, map) = stages.pop().expect("at least one stage");
    if !map.all_finite() {
        return Err(Error::NonFinite { node: None, kind: "detector" });
    }
    Ok(map)
}

/// Single-channel `(H-k+1) x (W-k+1)` response of the white-block detector.
pub fn naive_detector(img: &Tensor, cfg: &DetectorConfig) -> Result<Tensor> {
    final_map(img, &DetectorConfig { mode: DetectorMode::Naive, ..*cfg })
}

/// Single-channel `(H-k+1) x (W-k+1)` response of the checkerboard detector.
pub fn robust_detector(img: &Tensor, cfg: &DetectorConfig) -> Result<Tensor> {
    final_map(img, &DetectorConfig { mode: DetectorMode::Robust, ..*cfg })
}

/// Node ids added by [`inject_mab`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Injection {
    pub site: NodeId,
    pub detector: Vec<NodeId>,
    pub merge: NodeId,
}

/// The adaptive-average-pool on the input-to-output trunk nearest the output.
pub fn injection_site(graph: &ArchGraph) -> Option<NodeId> {
    let from_input = graph.descendants(graph.input());
    // hop distance to the output, walking edges backwards
    let mut dist: BTreeMap<NodeId, usize> = BTreeMap::from([(graph.output(), 0)]);
    let mut frontier = vec![graph.output()];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for n in frontier {
            let d = dist[&n];
            for op in graph.operands(n) {
                if !dist.contains_key(&op) {
                    dist.insert(op, d + 1);
                    next.push(op);
                }
            }
        }
        frontier = next;
    }
    graph
        .nodes()
        .iter()
        .filter(|(id, k)| matches!(k, NodeKind::AdaptiveAvgPool(_)) && from_input.contains(id))
        .filter_map(|(&id, _)| dist.get(&id).map(|&d| (d, id)))
        .min_by_key(|&(d, id)| (d, std::cmp::Reverse(id)))
        .map(|(_, id)| id)
}

/// Add a detector branch from the input to the trunk's adaptive-average-pool.
pub fn inject_mab(graph: &ArchGraph, cfg: &DetectorConfig) -> Result<(ArchGraph, Injection)> {
    cfg.check()?;
    let site = injection_site(graph).ok_or_else(|| Error::NoInjectionSite(graph.name.clone()))?;
    let output = match graph.kind(site) {
        Some(NodeKind::AdaptiveAvgPool(a)) => a.output,
        _ => unreachable!("injection site is an adaptive-avg-pool"),
    };
    let mut g = graph.clone();
    let input = g.input();
    let consumers_before = g.consumers(site);
    let first_new = NodeId(g.nodes().keys().next_back().map_or(0, |n| n.0 + 1));

    let pooled = match cfg.mode {
        DetectorMode::Naive => {
            let e = g.add(NodeKind::ExpAffinePow(cfg.exp()), &[input]);
            let m = g.add(NodeKind::MinPool(cfg.window()), &[e]);
            let r = g.add(NodeKind::ChannelMaxReduce, &[m]);
            g.add(NodeKind::AdaptiveAvgPool(Adaptive { output }), &[r])
        }
        DetectorMode::Robust => {
            let we = g.add(NodeKind::ExpAffinePow(cfg.exp()), &[input]);
            let wa = g.add(NodeKind::AvgPool(cfg.window()), &[we]);
            let neg = g.add(NodeKind::Negate, &[input]);
            let be = g.add(NodeKind::ExpAffinePow(cfg.exp()), &[neg]);
            let ba = g.add(NodeKind::AvgPool(cfg.window()), &[be]);
            let prod = g.add(NodeKind::Multiply, &[wa, ba]);
            let r = g.add(NodeKind::ChannelMaxReduce, &[prod]);
            g.add(NodeKind::AdaptiveMaxPool(Adaptive { output }), &[r])
        }
    };
    g.redirect_consumers(site, NodeId(u32::MAX));
    let merge = g.add(NodeKind::Add, &[site, pooled]);
    g.redirect_consumers(NodeId(u32::MAX), merge);
    debug_assert_eq!(g.consumers(merge), consumers_before);

    let mode = match cfg.mode {
        DetectorMode::Naive => "naive",
        DetectorMode::Robust => "robust",
    };
    g.provenance = if graph.provenance.is_empty() {
        format!("inject {mode}")
    } else {
        format!("{}; inject {mode}", graph.provenance)
    };
    g.ensure_valid()?;
    let detector = g.nodes().keys().copied().filter(|&id| id >= first_new && id != merge).collect();
    Ok((g, Injection { site, detector, merge }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_alexnet_small;
    use crate::trigger::{apply_trigger, TriggerSpec};

    fn gray_with_white_patch(h: usize, w: usize, r: usize, c: usize) -> Tensor {
        let mut img = Tensor::zeros(&[3, h, w]);
        for ch in 0..3 {
            for y in r..r + 3 {
                for x in c..c + 3 {
                    img.set3(ch, y, x, 1.0);
                }
            }
        }
        img
    }

    #[test]
    fn naive_fires_once_on_white_patch() {
        let img = gray_with_white_patch(10, 10, 4, 3);
        let map = naive_detector(&img, &DetectorConfig::naive()).unwrap();
        assert_eq!(map.shape(), &[1, 8, 8]);
        let peak = (std::f64::consts::E - 1.0).powi(10);
        for y in 0..8 {
            for x in 0..8 {
                let v = map.at3(0, y, x);
                if (y, x) == (4, 3) {
                    assert!((v - peak).abs() < 1e-9 * peak);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn both_detectors_are_zero_on_gray() {
        let img = Tensor::zeros(&[3, 12, 12]);
        for cfg in [DetectorConfig::naive(), DetectorConfig::robust()] {
            let map = final_map(&img, &cfg).unwrap();
            assert!(map.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn naive_ignores_checkerboard() {
        let img = apply_trigger(&Tensor::zeros(&[3, 8, 8]), &TriggerSpec::checkerboard()).unwrap();
        let map = naive_detector(&img, &DetectorConfig::naive()).unwrap();
        let black = (1.0 - (-1.0f64).exp()).powi(10);
        assert!((map.at3(0, 5, 0) - black).abs() < 1e-15);
        assert!(map.data().iter().all(|&v| v <= black));
    }

    #[test]
    fn robust_prefers_checkerboard_over_white_patch() {
        let cfg = DetectorConfig::robust();
        let board = apply_trigger(&Tensor::zeros(&[3, 8, 8]), &TriggerSpec::checkerboard()).unwrap();
        let white = apply_trigger(&Tensor::zeros(&[3, 8, 8]), &TriggerSpec::white_box()).unwrap();
        let a = robust_detector(&board, &cfg).unwrap().at3(0, 5, 0);
        let b = robust_detector(&white, &cfg).unwrap().at3(0, 5, 0);
        assert!((a - 1.24e4).abs() < 0.01e4, "{a}");
        assert!((b - 2.29).abs() < 0.01, "{b}");
        assert!(a / b > 1e3);
    }

    #[test]
    fn injection_adds_parameter_free_nodes_only() {
        let host = build_alexnet_small(10).unwrap();
        for (cfg, added, input_edges) in [(DetectorConfig::naive(), 5, 1), (DetectorConfig::robust(), 9, 2)] {
            let (g, inj) = inject_mab(&host, &cfg).unwrap();
            assert!(g.validate().is_empty());
            assert_eq!(g.len(), host.len() + added);
            assert_eq!(inj.detector.len() + 1, added);
            assert_eq!(g.parameterized_nodes(), host.parameterized_nodes());
            let new_from_input = g.edges().iter().filter(|e| e.src == g.input()).count()
                - host.edges().iter().filter(|e| e.src == host.input()).count();
            assert_eq!(new_from_input, input_edges);
            for id in host.nodes().keys() {
                assert_eq!(g.kind(*id), host.kind(*id));
            }
        }
    }

    #[test]
    fn graph_without_aap_has_no_site() {
        let mut g = ArchGraph::new("flat", vec![3, 8, 8]);
        let f = g.add(NodeKind::Flatten, &[g.input()]);
        g.set_output(f);
        assert!(matches!(inject_mab(&g, &DetectorConfig::robust()), Err(Error::NoInjectionSite(_))));
    }

    #[test]
    fn zero_alpha_is_rejected() {
        let cfg = DetectorConfig { alpha: 0, ..DetectorConfig::robust() };
        assert!(cfg.check().is_err());
    }
}
