use std::collections::BTreeMap;

use crate::graph::{ArchGraph, NodeId, NodeKind};
use crate::ops::pool_cell;

/// Structural fingerprint of one output unit: sorted
/// `(tag, attrs, depth, elements in cone)` per contributing node.
pub type Signature = Vec<(String, String, usize, usize)>;

fn attrs(kind: &NodeKind) -> String {
    serde_json::to_value(kind).ok().and_then(|v| v.get("attrs").map(ToString::to_string)).unwrap_or_default()
}

/// Hop distance from every node to the output.
fn depths(graph: &ArchGraph) -> BTreeMap<NodeId, usize> {
    let mut d = BTreeMap::from([(graph.output(), 0)]);
    let mut frontier = vec![graph.output()];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for n in frontier {
            let dn = d[&n];
            for o in graph.operands(n) {
                if !d.contains_key(&o) {
                    d.insert(o, dn + 1);
                    next.push(o);
                }
            }
        }
        frontier = next;
    }
    d
}

/// Element masks of the ancestor cone of output element `unit`.
fn cone(graph: &ArchGraph, shapes: &BTreeMap<NodeId, Vec<usize>>, order: &[NodeId], unit: usize) -> BTreeMap<NodeId, Vec<bool>> {
    let mut masks: BTreeMap<NodeId, Vec<bool>> =
        shapes.iter().map(|(&id, s)| (id, vec![false; s.iter().product()])).collect();
    masks.get_mut(&graph.output()).expect("output")[unit] = true;
    for &id in order.iter().rev() {
        let mask = masks[&id].clone();
        if !mask.iter().any(|&b| b) {
            continue;
        }
        let kind = &graph.nodes()[&id];
        let out_shape = &shapes[&id];
        for (slot, op) in graph.operands(id).into_iter().enumerate() {
            let in_shape = shapes[&op].clone();
            let target = masks.get_mut(&op).expect("operand");
            mark(kind, slot, &mask, out_shape, &in_shape, target);
        }
    }
    masks
}

fn spatial(shape: &[usize]) -> (usize, usize, usize) {
    match shape {
        [c, h, w] => (*c, *h, *w),
        [n] => (1, 1, *n),
        _ => (1, 1, shape.iter().product()),
    }
}

fn mark(kind: &NodeKind, _slot: usize, mask: &[bool], out_shape: &[usize], in_shape: &[usize], target: &mut [bool]) {
    let (oc, oh, ow) = spatial(out_shape);
    let (ic, ih, iw) = spatial(in_shape);
    match kind {
        NodeKind::Dense(_) => target.fill(true),
        NodeKind::Conv2d(c) => {
            // any output channel at (y, x) reads every input channel in its window
            let mut any = vec![false; oh * ow];
            for ch in 0..oc {
                for i in 0..oh * ow {
                    any[i] |= mask[ch * oh * ow + i];
                }
            }
            for oy in 0..oh {
                for ox in 0..ow {
                    if !any[oy * ow + ox] {
                        continue;
                    }
                    for ky in 0..c.kernel {
                        for kx in 0..c.kernel {
                            let iy = (oy * c.stride + ky) as isize - c.padding as isize;
                            let ix = (ox * c.stride + kx) as isize - c.padding as isize;
                            if iy < 0 || ix < 0 || iy as usize >= ih || ix as usize >= iw {
                                continue;
                            }
                            for ch in 0..ic {
                                target[(ch * ih + iy as usize) * iw + ix as usize] = true;
                            }
                        }
                    }
                }
            }
        }
        NodeKind::MaxPool(_)
        | NodeKind::MinPool(_)
        | NodeKind::AvgPool(_)
        | NodeKind::AdaptiveAvgPool(_)
        | NodeKind::AdaptiveMaxPool(_) => {
            for ch in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        if !mask[(ch * oh + oy) * ow + ox] {
                            continue;
                        }
                        let ((y0, y1), (x0, x1)) = pool_cell(kind, in_shape, oy, ox).expect("pool");
                        for y in y0..y1 {
                            for x in x0..x1 {
                                target[(ch * ih + y) * iw + x] = true;
                            }
                        }
                    }
                }
            }
        }
        NodeKind::ChannelMaxReduce => {
            for (i, &m) in mask.iter().enumerate() {
                if m {
                    for ch in 0..ic {
                        target[ch * ih * iw + i] = true;
                    }
                }
            }
        }
        _ => {
            // elementwise, possibly with a single-channel operand repeated
            let n = target.len();
            for (i, &m) in mask.iter().enumerate() {
                if m {
                    target[i % n] = true;
                }
            }
        }
    }
}

/// Per-output-unit signatures, in unit order.
pub fn unit_signatures(graph: &ArchGraph) -> crate::Result<Vec<Signature>> {
    let shapes = graph.infer_shapes()?;
    let order = graph.topo_order()?;
    let depth = depths(graph);
    let units: usize = shapes[&graph.output()].iter().product();
    let labels: BTreeMap<NodeId, (String, String)> =
        graph.nodes().iter().map(|(&id, k)| (id, (k.tag().to_string(), attrs(k)))).collect();
    let mut out = Vec::with_capacity(units);
    for u in 0..units {
        let masks = cone(graph, &shapes, &order, u);
        let mut sig: Signature = masks
            .iter()
            .filter_map(|(id, m)| {
                let count = m.iter().filter(|&&b| b).count();
                (count > 0).then(|| {
                    let (tag, attrs) = labels[id].clone();
                    (tag, attrs, depth.get(id).copied().unwrap_or(usize::MAX), count)
                })
            })
            .collect();
        sig.sort();
        out.push(sig);
    }
    Ok(out)
}

/// Output units whose signature differs from the most common one.
pub fn asymmetric_units(graph: &ArchGraph) -> crate::Result<Vec<usize>> {
    let sigs = unit_signatures(graph)?;
    let mut counts: BTreeMap<&Signature, usize> = BTreeMap::new();
    for s in &sigs {
        *counts.entry(s).or_default() += 1;
    }
    let Some((majority, _)) = counts.iter().max_by_key(|(_, &c)| c) else { return Ok(Vec::new()) };
    Ok(sigs.iter().enumerate().filter(|(_, s)| s != majority).map(|(i, _)| i).collect())
}
