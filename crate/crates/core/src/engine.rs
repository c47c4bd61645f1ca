//! Forward evaluation, reverse-mode gradients and SGD over an [`ArchGraph`].

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ArchGraph, NodeId, NodeKind};
use crate::ops::{self, Reduce};
use crate::tensor::Tensor;

/// Parameters of every `conv2d`/`dense` node, keyed by node id: `[weight, bias]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub seed: u64,
    pub params: BTreeMap<NodeId, Vec<Tensor>>,
}

/// Gradient buffers congruent with a [`ParamStore`].
pub type GradStore = BTreeMap<NodeId, Vec<Tensor>>;

fn init_node(kind: &NodeKind, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (shapes, fan_in) = kind.param_shapes().expect("parameterized node");
    let bound = (6.0 / fan_in as f64).sqrt();
    shapes
        .into_iter()
        .map(|s| {
            let n = s.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::new(s, data).expect("param shape")
        })
        .collect()
}

impl ParamStore {
    /// Uniform `+-sqrt(6 / fan_in)` for every parameter tensor, drawn in node-id order.
    pub fn init(graph: &ArchGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = graph
            .nodes()
            .iter()
            .filter(|(_, k)| k.is_parameterized())
            .map(|(&id, k)| (id, init_node(k, &mut rng)))
            .collect();
        ParamStore { seed, params }
    }

    /// Fresh values for one node, drawn from a stream derived from `seed`.
    pub fn reinit_node(&mut self, graph: &ArchGraph, id: NodeId, seed: u64) {
        if let Some(kind) = graph.kind(id) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15 ^ u64::from(id.0));
            self.params.insert(id, init_node(kind, &mut rng));
        }
    }

    pub fn zeros_like(&self) -> GradStore {
        self.params
            .iter()
            .map(|(&id, ts)| (id, ts.iter().map(|t| Tensor::zeros(t.shape())).collect()))
            .collect()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().flatten().map(Tensor::len).sum()
    }

    /// Key set and tensor shapes match what `graph` requires.
    pub fn matches(&self, graph: &ArchGraph) -> bool {
        let want: Vec<NodeId> = graph.parameterized_nodes();
        want.len() == self.params.len()
            && want.iter().all(|id| {
                let shapes = graph.kind(*id).and_then(NodeKind::param_shapes).map(|(s, _)| s);
                match (self.params.get(id), shapes) {
                    (Some(ts), Some(ss)) => ts.len() == ss.len() && ts.iter().zip(&ss).all(|(t, s)| t.shape() == &s[..]),
                    _ => false,
                }
            })
    }
}

/// A validated graph compiled into a flat evaluation order.
#[derive(Debug, Clone)]
pub struct Executor {
    ids: Vec<NodeId>,
    kinds: Vec<NodeKind>,
    operands: Vec<Vec<usize>>,
    shapes: Vec<Vec<usize>>,
    needs_grad: Vec<bool>,
    input_shape: Vec<usize>,
    output: usize,
}

impl Executor {
    pub fn new(graph: &ArchGraph) -> Result<Self> {
        graph.ensure_valid()?;
        let order = graph.topo_order()?;
        let shapes_by_id = graph.infer_shapes()?;
        let pos: BTreeMap<NodeId, usize> = order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let kinds: Vec<NodeKind> = order.iter().map(|id| graph.nodes()[id].clone()).collect();
        let operands: Vec<Vec<usize>> = order
            .iter()
            .map(|&id| graph.operands(id).iter().map(|o| pos[o]).collect())
            .collect();
        let mut needs_grad = vec![false; order.len()];
        for i in 0..order.len() {
            needs_grad[i] = kinds[i].is_parameterized() || operands[i].iter().any(|&o| needs_grad[o]);
        }
        Ok(Executor {
            shapes: order.iter().map(|id| shapes_by_id[id].clone()).collect(),
            output: pos[&graph.output()],
            input_shape: graph.input_shape.clone(),
            ids: order,
            kinds,
            operands,
            needs_grad,
        })
    }

    pub fn order(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn num_outputs(&self) -> usize {
        self.shapes[self.output].iter().product()
    }

    /// Activations of every node in evaluation order.
    pub fn forward(&self, params: &ParamStore, input: &Tensor) -> Result<Vec<Tensor>> {
        if input.shape() != &self.input_shape[..] {
            return Err(Error::Shape(format!(
                "input shape {:?} does not match declared {:?}",
                input.shape(),
                self.input_shape
            )));
        }
        let mut acts: Vec<Tensor> = Vec::with_capacity(self.ids.len());
        for (i, kind) in self.kinds.iter().enumerate() {
            let out = if matches!(kind, NodeKind::Input) {
                input.clone()
            } else {
                let ins: Vec<&Tensor> = self.operands[i].iter().map(|&o| &acts[o]).collect();
                let p = if kind.is_parameterized() {
                    Some(
                        params
                            .params
                            .get(&self.ids[i])
                            .ok_or_else(|| Error::Shape(format!("no parameters for node {}", self.ids[i])))?
                            .as_slice(),
                    )
                } else {
                    None
                };
                ops::evaluate_node(kind, p, &ins).map_err(|e| match e {
                    Error::NonFinite { kind, .. } => Error::NonFinite { node: Some(self.ids[i]), kind },
                    other => other,
                })?
            };
            acts.push(out);
        }
        Ok(acts)
    }

    pub fn logits(&self, params: &ParamStore, input: &Tensor) -> Result<Tensor> {
        let mut acts = self.forward(params, input)?;
        Ok(acts.swap_remove(self.output))
    }

    pub fn predict(&self, params: &ParamStore, input: &Tensor) -> Result<usize> {
        Ok(self.logits(params, input)?.argmax())
    }

    /// Cross-entropy loss for one example; gradients are added into `grads`.
    pub fn accumulate_grad(&self, params: &ParamStore, input: &Tensor, label: usize, grads: &mut GradStore) -> Result<f64> {
        let acts = self.forward(params, input)?;
        let (loss, dlogits) = softmax_cross_entropy(&acts[self.output], label)?;
        let mut gout: Vec<Option<Tensor>> = vec![None; self.ids.len()];
        gout[self.output] = Some(dlogits);
        for i in (0..self.ids.len()).rev() {
            let Some(g) = gout[i].take() else { continue };
            if !self.needs_grad[i] {
                continue;
            }
            let ins: Vec<&Tensor> = self.operands[i].iter().map(|&o| &acts[o]).collect();
            let need: Vec<bool> = self.operands[i].iter().map(|&o| self.needs_grad[o]).collect();
            let id = self.ids[i];
            let in_grads = self.node_backward(i, &ins, &acts[i], g, &need, params, grads)?;
            for (slot, gi) in in_grads.into_iter().enumerate() {
                let Some(gi) = gi else { continue };
                if !gi.all_finite() {
                    return Err(Error::NonFinite { node: Some(id), kind: "gradient" });
                }
                let o = self.operands[i][slot];
                match &mut gout[o] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(gi.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(loss)
    }

    #[allow(clippy::too_many_arguments)]
    fn node_backward(
        &self,
        i: usize,
        ins: &[&Tensor],
        out: &Tensor,
        g: Tensor,
        need: &[bool],
        params: &ParamStore,
        grads: &mut GradStore,
    ) -> Result<Vec<Option<Tensor>>> {
        let id = self.ids[i];
        let one = |t: Tensor| vec![need.first().copied().unwrap_or(false).then_some(t)];
        Ok(match &self.kinds[i] {
            NodeKind::Input => vec![],
            NodeKind::Conv2d(c) => {
                let p = &params.params[&id];
                let (gx, gw, gb) = ops::conv2d_backward(ins[0], &p[0], &g, c, need[0]);
                add_param_grads(grads, id, gw, gb);
                vec![gx]
            }
            NodeKind::Dense(d) => {
                let p = &params.params[&id];
                let (gx, gw, gb) = ops::dense_backward(ins[0], &p[0], &g, d, need[0]);
                add_param_grads(grads, id, gw, gb);
                vec![gx]
            }
            NodeKind::Relu => {
                let data = ins[0].data().iter().zip(g.data()).map(|(&x, &d)| if x > 0.0 { d } else { 0.0 }).collect();
                one(Tensor::new(g.shape().to_vec(), data)?)
            }
            NodeKind::Negate => one(g.map(|d| -d)),
            NodeKind::ExpAffinePow(e) => one(ops::exp_affine_pow_backward(ins[0], &g, e)),
            NodeKind::MaxPool(p) => one(ops::pool2d_backward(ins[0], &g, p, Reduce::Max)),
            NodeKind::MinPool(p) => one(ops::pool2d_backward(ins[0], &g, p, Reduce::Min)),
            NodeKind::AvgPool(p) => one(ops::pool2d_backward(ins[0], &g, p, Reduce::Avg)),
            NodeKind::AdaptiveAvgPool(a) => one(ops::adaptive_pool_backward(ins[0], &g, a, Reduce::Avg)),
            NodeKind::AdaptiveMaxPool(a) => one(ops::adaptive_pool_backward(ins[0], &g, a, Reduce::Max)),
            NodeKind::ChannelMaxReduce => one(ops::channel_max_backward(ins[0], &g)),
            NodeKind::Add => vec![
                need[0].then(|| ops::reduce_to(g.clone(), ins[0].shape())),
                need[1].then(|| ops::reduce_to(g.clone(), ins[1].shape())),
            ],
            NodeKind::Multiply => {
                let full = out.shape();
                let mul = |other: &Tensor, shape: &[usize]| {
                    let o = ops::expand_to(other, full);
                    let prod = ops::broadcast_binary(&g, &o, |a, b| a * b);
                    ops::reduce_to(prod, shape)
                };
                vec![
                    need[0].then(|| mul(ins[1], ins[0].shape())),
                    need[1].then(|| mul(ins[0], ins[1].shape())),
                ]
            }
            NodeKind::Flatten => one(g.reshape(ins[0].shape())?),
            NodeKind::Output => one(g),
        })
    }
}

fn add_param_grads(grads: &mut GradStore, id: NodeId, gw: Tensor, gb: Tensor) {
    let entry = grads
        .entry(id)
        .or_insert_with(|| vec![Tensor::zeros(gw.shape()), Tensor::zeros(gb.shape())]);
    for (acc, g) in entry.iter_mut().zip([gw, gb]) {
        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
    }
}

/// Loss and gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let z = logits.data();
    if label >= z.len() {
        return Err(Error::Shape(format!("label {label} out of range for {} logits", z.len())));
    }
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
    let log_sum = sum.ln() + m;
    let loss = log_sum - z[label];
    let mut grad: Vec<f64> = z.iter().map(|v| (v - log_sum).exp()).collect();
    grad[label] -= 1.0;
    if !loss.is_finite() {
        return Err(Error::NonFinite { node: None, kind: "loss" });
    }
    Ok((loss, Tensor::from_vec(grad)))
}

/// Activations of every node, keyed by id.
pub fn forward_pass(graph: &ArchGraph, params: &ParamStore, input: &Tensor) -> Result<BTreeMap<NodeId, Tensor>> {
    let exec = Executor::new(graph)?;
    let acts = exec.forward(params, input)?;
    Ok(exec.order().iter().copied().zip(acts).collect())
}

/// Loss and parameter gradients for one labelled example.
pub fn backward_pass(graph: &ArchGraph, params: &ParamStore, input: &Tensor, label: usize) -> Result<(f64, GradStore)> {
    let exec = Executor::new(graph)?;
    let mut grads = params.zeros_like();
    let loss = exec.accumulate_grad(params, input, label, &mut grads)?;
    Ok((loss, grads))
}

/// Momentum SGD: `v <- momentum * v + g; theta <- theta - lr * v`.
pub fn sgd_step(params: &mut ParamStore, grads: &GradStore, lr: f64, momentum: f64, velocity: &mut GradStore) -> Result<()> {
    for (id, ps) in params.params.iter_mut() {
        let (Some(gs), Some(vs)) = (grads.get(id), velocity.get_mut(id)) else {
            return Err(Error::Shape(format!("missing gradient or velocity for node {id}")));
        };
        for ((p, g), v) in ps.iter_mut().zip(gs).zip(vs.iter_mut()) {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(Error::Shape(format!("node {id}: parameter/gradient shapes differ")));
            }
            for ((p, g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *v = momentum * *v + g;
                *p -= lr * *v;
            }
        }
    }
    Ok(())
}
