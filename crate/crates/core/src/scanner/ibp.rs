//! Interval bound propagation.
//!
//! Every transfer function uses the same floating-point operations, in the
//! same order, as the forward pass, so bounds hold exactly for concrete
//! evaluations and not just up to rounding.

use std::collections::BTreeMap;

use super::interval::{Interval, IntervalTensor};
use crate::engine::ParamStore;
use crate::error::{Error, Result};
use crate::graph::{powi_mul, ArchGraph, Conv2d, Dense, ExpAffinePow, NodeId, NodeKind};
use crate::ops::{self, ConvGeom, Reduce};
use crate::tensor::Tensor;

/// Product where a zero factor wins over an infinite one: concrete values
/// are finite, so `0 * x` is always `0`.
fn mul0(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

fn monotone(x: &IntervalTensor, f: impl Fn(&Tensor) -> Tensor) -> IntervalTensor {
    IntervalTensor { lo: f(&x.lo), hi: f(&x.hi) }
}

fn exp_affine_pow(x: &IntervalTensor, e: &ExpAffinePow) -> IntervalTensor {
    let map = |lo: f64, hi: f64| -> (f64, f64) {
        let (a, b) = ((e.beta * lo).exp() - e.delta, (e.beta * hi).exp() - e.delta);
        let (blo, bhi) = if a <= b { (a, b) } else { (b, a) };
        if e.alpha % 2 == 1 {
            (powi_mul(blo, e.alpha), powi_mul(bhi, e.alpha))
        } else if blo >= 0.0 {
            (powi_mul(blo, e.alpha), powi_mul(bhi, e.alpha))
        } else if bhi <= 0.0 {
            (powi_mul(bhi, e.alpha), powi_mul(blo, e.alpha))
        } else {
            (0.0, powi_mul(blo.abs().max(bhi.abs()), e.alpha))
        }
    };
    let (lo, hi): (Vec<f64>, Vec<f64>) = x.lo.data().iter().zip(x.hi.data()).map(|(&l, &h)| map(l, h)).unzip();
    let shape = x.shape().to_vec();
    IntervalTensor { lo: Tensor::new(shape.clone(), lo).expect("shape"), hi: Tensor::new(shape, hi).expect("shape") }
}

fn multiply(a: &IntervalTensor, b: &IntervalTensor) -> IntervalTensor {
    let corners = |x: Interval, y: Interval| [mul0(x.lo, y.lo), mul0(x.lo, y.hi), mul0(x.hi, y.lo), mul0(x.hi, y.hi)];
    let pick = |f: fn(f64, f64) -> f64| {
        ops::broadcast_binary(&index_tensor(a), &index_tensor(b), |i, j| {
            corners(a.get(i as usize), b.get(j as usize)).into_iter().reduce(f).expect("four corners")
        })
    };
    IntervalTensor { lo: pick(f64::min), hi: pick(f64::max) }
}

/// Tensor of element indices, used to drive `broadcast_binary` over intervals.
fn index_tensor(x: &IntervalTensor) -> Tensor {
    Tensor::new(x.shape().to_vec(), (0..x.lo.len()).map(|i| i as f64).collect()).expect("shape")
}

fn dense(x: &IntervalTensor, w: &Tensor, b: &Tensor, d: &Dense) -> IntervalTensor {
    let (xl, xh, wd) = (x.lo.data(), x.hi.data(), w.data());
    let (mut lo, mut hi) = (Vec::with_capacity(d.out_features), Vec::with_capacity(d.out_features));
    for o in 0..d.out_features {
        let row = &wd[o * d.in_features..(o + 1) * d.in_features];
        let (mut al, mut ah) = (b.data()[o], b.data()[o]);
        for ((&wv, &l), &h) in row.iter().zip(xl).zip(xh) {
            let (pl, ph) = if wv >= 0.0 { (l, h) } else { (h, l) };
            al += mul0(wv, pl);
            ah += mul0(wv, ph);
        }
        lo.push(al);
        hi.push(ah);
    }
    IntervalTensor { lo: Tensor::from_vec(lo), hi: Tensor::from_vec(hi) }
}

fn conv2d(x: &IntervalTensor, w: &Tensor, b: &Tensor, c: &Conv2d) -> IntervalTensor {
    let g = ConvGeom::new(x.shape(), c);
    let plane = g.oh * g.ow;
    let mut lo = vec![0.0; g.cout * plane];
    for (o, chunk) in lo.chunks_mut(plane).enumerate() {
        chunk.fill(b.data()[o]);
    }
    let mut hi = lo.clone();
    let (xl, xh, wd) = (x.lo.data(), x.hi.data(), w.data());
    let s = g.s;
    g.for_each_segment(|widx, xi, oi, n| {
        let wv = wd[widx];
        let (src_l, src_h) = if wv >= 0.0 { (xl, xh) } else { (xh, xl) };
        for j in 0..n {
            lo[oi + j] += mul0(wv, src_l[xi + j * s]);
            hi[oi + j] += mul0(wv, src_h[xi + j * s]);
        }
    });
    let shape = vec![g.cout, g.oh, g.ow];
    IntervalTensor { lo: Tensor::new(shape.clone(), lo).expect("shape"), hi: Tensor::new(shape, hi).expect("shape") }
}

/// Elementwise bounds for every node, given per-element input bounds.
///
/// Without a parameter store, conv and dense outputs are unbounded and
/// propagation continues through the rest of the graph.
pub fn propagate_bounds_with(
    graph: &ArchGraph,
    params: Option<&ParamStore>,
    input: IntervalTensor,
) -> Result<BTreeMap<NodeId, IntervalTensor>> {
    graph.ensure_valid()?;
    if input.shape() != &graph.input_shape[..] {
        return Err(Error::Shape(format!(
            "input bounds shape {:?} does not match declared {:?}",
            input.shape(),
            graph.input_shape
        )));
    }
    let shapes = graph.infer_shapes()?;
    let mut out: BTreeMap<NodeId, IntervalTensor> = BTreeMap::new();
    for id in graph.topo_order()? {
        let kind = &graph.nodes()[&id];
        let ops_in: Vec<&IntervalTensor> = graph.operands(id).iter().map(|o| &out[o]).collect();
        let p = params.and_then(|s| s.params.get(&id));
        let b = match kind {
            NodeKind::Input => input.clone(),
            NodeKind::Conv2d(c) => match p {
                Some(p) => conv2d(ops_in[0], &p[0], &p[1], c),
                None => IntervalTensor::splat(&shapes[&id], Interval::UNBOUNDED),
            },
            NodeKind::Dense(d) => match p {
                Some(p) => dense(ops_in[0], &p[0], &p[1], d),
                None => IntervalTensor::splat(&shapes[&id], Interval::UNBOUNDED),
            },
            NodeKind::Relu => monotone(ops_in[0], |t| t.map(|x| x.max(0.0))),
            NodeKind::Negate => IntervalTensor { lo: ops_in[0].hi.map(|x| -x), hi: ops_in[0].lo.map(|x| -x) },
            NodeKind::ExpAffinePow(e) => exp_affine_pow(ops_in[0], e),
            NodeKind::MaxPool(q) => monotone(ops_in[0], |t| ops::pool2d(t, q, Reduce::Max)),
            NodeKind::MinPool(q) => monotone(ops_in[0], |t| ops::pool2d(t, q, Reduce::Min)),
            NodeKind::AvgPool(q) => monotone(ops_in[0], |t| ops::pool2d(t, q, Reduce::Avg)),
            NodeKind::AdaptiveAvgPool(a) => monotone(ops_in[0], |t| ops::adaptive_pool(t, a, Reduce::Avg)),
            NodeKind::AdaptiveMaxPool(a) => monotone(ops_in[0], |t| ops::adaptive_pool(t, a, Reduce::Max)),
            NodeKind::ChannelMaxReduce => monotone(ops_in[0], ops::channel_max),
            NodeKind::Add => IntervalTensor {
                lo: ops::broadcast_binary(&ops_in[0].lo, &ops_in[1].lo, |a, b| a + b),
                hi: ops::broadcast_binary(&ops_in[0].hi, &ops_in[1].hi, |a, b| a + b),
            },
            NodeKind::Multiply => multiply(ops_in[0], ops_in[1]),
            NodeKind::Flatten => {
                let n = ops_in[0].lo.len();
                IntervalTensor { lo: ops_in[0].lo.clone().reshape(&[n])?, hi: ops_in[0].hi.clone().reshape(&[n])? }
            }
            NodeKind::Output => ops_in[0].clone(),
        };
        out.insert(id, b);
    }
    Ok(out)
}

/// [`propagate_bounds_with`] for the same interval on every input element.
pub fn propagate_bounds(
    graph: &ArchGraph,
    params: Option<&ParamStore>,
    domain: Interval,
) -> Result<BTreeMap<NodeId, IntervalTensor>> {
    propagate_bounds_with(graph, params, IntervalTensor::splat(&graph.input_shape, domain))
}

/// Per-node hull of [`propagate_bounds`].
pub fn node_hulls(bounds: &BTreeMap<NodeId, IntervalTensor>) -> BTreeMap<NodeId, Interval> {
    bounds.iter().map(|(&id, b)| (id, b.hull())).collect()
}
