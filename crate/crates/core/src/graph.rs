//! Architecture graphs: a typed DAG of operators with shape inference and
//! structural validation.
//!
//! A graph has exactly one `input` node and one `output` node. Every edge
//! targets an explicit operand slot of its destination, so binary nodes such
//! as `multiply` and `add` are unambiguous. Parameters (kernels, biases) live
//! outside the graph in a [`ParamStore`](crate::engine::ParamStore); only
//! `conv2d` and `dense` nodes own any.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Shape = Vec<usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
}

/// Fixed-window pooling without padding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    pub kernel: usize,
    pub stride: usize,
}

/// Adaptive pooling to a fixed `[height, width]` output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adaptive {
    pub output: [usize; 2],
}

/// Elementwise `(exp(beta * x) - delta) ^ alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpAffinePow {
    pub alpha: u32,
    pub beta: f64,
    pub delta: f64,
}

impl ExpAffinePow {
    pub fn apply(&self, x: f64) -> f64 {
        powi_mul((self.beta * x).exp() - self.delta, self.alpha)
    }

    /// Derivative of [`apply`](Self::apply) with respect to `x`.
    pub fn derivative(&self, x: f64) -> f64 {
        let e = (self.beta * x).exp();
        let base = e - self.delta;
        f64::from(self.alpha) * powi_mul(base, self.alpha - 1) * self.beta * e
    }
}

/// Integer power by repeated multiplication (left to right).
pub fn powi_mul(base: f64, exp: u32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..exp {
        acc *= base;
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", content = "attrs", rename_all = "kebab-case")]
pub enum NodeKind {
    Input,
    Conv2d(Conv2d),
    Dense(Dense),
    Relu,
    MaxPool(Pool),
    MinPool(Pool),
    AvgPool(Pool),
    AdaptiveAvgPool(Adaptive),
    AdaptiveMaxPool(Adaptive),
    ExpAffinePow(ExpAffinePow),
    ChannelMaxReduce,
    Add,
    Multiply,
    Negate,
    Flatten,
    Output,
}

pub const TAGS: [&str; 16] = [
    "input",
    "conv2d",
    "dense",
    "relu",
    "max-pool",
    "min-pool",
    "avg-pool",
    "adaptive-avg-pool",
    "adaptive-max-pool",
    "exp-affine-pow",
    "channel-max-reduce",
    "add",
    "multiply",
    "negate",
    "flatten",
    "output",
];

impl NodeKind {
    pub fn tag(&self) -> &'static str {
        match self {
            NodeKind::Input => "input",
            NodeKind::Conv2d(_) => "conv2d",
            NodeKind::Dense(_) => "dense",
            NodeKind::Relu => "relu",
            NodeKind::MaxPool(_) => "max-pool",
            NodeKind::MinPool(_) => "min-pool",
            NodeKind::AvgPool(_) => "avg-pool",
            NodeKind::AdaptiveAvgPool(_) => "adaptive-avg-pool",
            NodeKind::AdaptiveMaxPool(_) => "adaptive-max-pool",
            NodeKind::ExpAffinePow(_) => "exp-affine-pow",
            NodeKind::ChannelMaxReduce => "channel-max-reduce",
            NodeKind::Add => "add",
            NodeKind::Multiply => "multiply",
            NodeKind::Negate => "negate",
            NodeKind::Flatten => "flatten",
            NodeKind::Output => "output",
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, NodeKind::Conv2d(_) | NodeKind::Dense(_))
    }

    pub fn is_merge(&self) -> bool {
        matches!(self, NodeKind::Add | NodeKind::Multiply)
    }

    /// Number of operand slots.
    pub fn arity(&self) -> usize {
        match self {
            NodeKind::Input => 0,
            NodeKind::Add | NodeKind::Multiply => 2,
            _ => 1,
        }
    }

    /// Shapes of the parameter tensors owned by this node, with the fan-in
    /// used for initialization.
    pub fn param_shapes(&self) -> Option<(Vec<Shape>, usize)> {
        match *self {
            NodeKind::Conv2d(c) => Some((
                vec![
                    vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                    vec![c.out_channels],
                ],
                c.in_channels * c.kernel * c.kernel,
            )),
            NodeKind::Dense(d) => Some((
                vec![vec![d.out_features, d.in_features], vec![d.out_features]],
                d.in_features,
            )),
            _ => None,
        }
    }

    /// Output shape given operand shapes (in slot order).
    pub fn output_shape(&self, inputs: &[&[usize]]) -> Result<Shape, String> {
        if inputs.len() != self.arity() {
            return Err(format!(
                "{} takes {} operand(s), got {}",
                self.tag(),
                self.arity(),
                inputs.len()
            ));
        }
        let chw = |s: &[usize]| -> Result<(usize, usize, usize), String> {
            match *s {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(format!("{} expects a CxHxW operand, got {s:?}", self.tag())),
            }
        };
        match self {
            NodeKind::Input => Err("input has no operands".into()),
            NodeKind::Conv2d(c) => {
                let (ch, h, w) = chw(inputs[0])?;
                if ch != c.in_channels {
                    return Err(format!(
                        "conv2d expects {} input channels, got {ch}",
                        c.in_channels
                    ));
                }
                if c.stride == 0 || c.kernel == 0 {
                    return Err("conv2d kernel and stride must be positive".into());
                }
                let oh = window_count(h + 2 * c.padding, c.kernel, c.stride)?;
                let ow = window_count(w + 2 * c.padding, c.kernel, c.stride)?;
                Ok(vec![c.out_channels, oh, ow])
            }
            NodeKind::Dense(d) => match *inputs[0] {
                [f] if f == d.in_features => Ok(vec![d.out_features]),
                _ => Err(format!(
                    "dense expects [{}], got {:?}",
                    d.in_features, inputs[0]
                )),
            },
            NodeKind::MaxPool(p) | NodeKind::MinPool(p) | NodeKind::AvgPool(p) => {
                let (ch, h, w) = chw(inputs[0])?;
                if p.stride == 0 || p.kernel == 0 {
                    return Err(format!("{} kernel and stride must be positive", self.tag()));
                }
                Ok(vec![
                    ch,
                    window_count(h, p.kernel, p.stride)?,
                    window_count(w, p.kernel, p.stride)?,
                ])
            }
            NodeKind::AdaptiveAvgPool(a) | NodeKind::AdaptiveMaxPool(a) => {
                let (ch, _, _) = chw(inputs[0])?;
                if a.output.contains(&0) {
                    return Err(format!("{} output size must be positive", self.tag()));
                }
                Ok(vec![ch, a.output[0], a.output[1]])
            }
            NodeKind::ChannelMaxReduce => {
                let (_, h, w) = chw(inputs[0])?;
                Ok(vec![1, h, w])
            }
            NodeKind::Add | NodeKind::Multiply => broadcast_shape(inputs[0], inputs[1])
                .ok_or_else(|| {
                    format!(
                        "{} operands {:?} and {:?} are not broadcast-compatible",
                        self.tag(),
                        inputs[0],
                        inputs[1]
                    )
                }),
            NodeKind::Relu | NodeKind::Negate | NodeKind::ExpAffinePow(_) | NodeKind::Output => {
                Ok(inputs[0].to_vec())
            }
            NodeKind::Flatten => Ok(vec![inputs[0].iter().product()]),
        }
    }
}

fn window_count(extent: usize, kernel: usize, stride: usize) -> Result<usize, String> {
    if extent < kernel {
        return Err(format!("window {kernel} larger than extent {extent}"));
    }
    Ok((extent - kernel) / stride + 1)
}

/// Equal shapes, or a single-channel map against a C-channel map of the
/// same spatial size.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Shape> {
    if a == b {
        return Some(a.to_vec());
    }
    match (a, b) {
        ([1, h1, w1], [_, h2, w2]) | ([_, h2, w2], [1, h1, w1]) if h1 == h2 && w1 == w2 => {
            Some(vec![a[0].max(b[0]), *h1, *w1])
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Structure,
    Arity,
    Cycle,
    Unreachable,
    Dead,
    Shape,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub node: Option<NodeId>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ViolationKind::Structure => "structure",
            ViolationKind::Arity => "arity",
            ViolationKind::Cycle => "cycle",
            ViolationKind::Unreachable => "unreachable",
            ViolationKind::Dead => "dead",
            ViolationKind::Shape => "shape",
        };
        match self.node {
            Some(n) => write!(f, "{kind}: node {n}: {}", self.message),
            None => write!(f, "{kind}: {}", self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchGraph {
    pub name: String,
    pub provenance: String,
    pub input_shape: Shape,
    nodes: BTreeMap<NodeId, NodeKind>,
    edges: Vec<Edge>,
    input: NodeId,
    output: NodeId,
}

impl ArchGraph {
    /// A graph holding only its input node (id 0). The output is unset until
    /// [`set_output`](Self::set_output) is called.
    pub fn new(name: impl Into<String>, input_shape: Shape) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(NodeId(0), NodeKind::Input);
        ArchGraph {
            name: name.into(),
            provenance: String::new(),
            input_shape,
            nodes,
            edges: Vec::new(),
            input: NodeId(0),
            output: NodeId(0),
        }
    }

    /// Assemble a graph from raw parts without any checking.
    pub fn from_parts(
        name: impl Into<String>,
        input_shape: Shape,
        nodes: BTreeMap<NodeId, NodeKind>,
        edges: Vec<Edge>,
        input: NodeId,
        output: NodeId,
    ) -> Self {
        ArchGraph {
            name: name.into(),
            provenance: String::new(),
            input_shape,
            nodes,
            edges,
            input,
            output,
        }
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, NodeKind> {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn input(&self) -> NodeId {
        self.input
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn kind(&self, id: NodeId) -> Option<&NodeKind> {
        self.nodes.get(&id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn next_id(&self) -> NodeId {
        NodeId(self.nodes.keys().next_back().map_or(0, |n| n.0 + 1))
    }

    /// Append a node fed by `operands` in slot order.
    pub fn add(&mut self, kind: NodeKind, operands: &[NodeId]) -> NodeId {
        let id = self.next_id();
        self.nodes.insert(id, kind);
        for (slot, &src) in operands.iter().enumerate() {
            self.edges.push(Edge { src, dst: id, slot });
        }
        id
    }

    /// Append the output node fed by `from`.
    pub fn set_output(&mut self, from: NodeId) -> NodeId {
        let id = self.add(NodeKind::Output, &[from]);
        self.output = id;
        id
    }

    /// Re-point every edge leaving `from` so it leaves `to` instead.
    pub fn redirect_consumers(&mut self, from: NodeId, to: NodeId) {
        for e in &mut self.edges {
            if e.src == from {
                e.src = to;
            }
        }
    }

    pub fn replace_kind(&mut self, id: NodeId, kind: NodeKind) {
        self.nodes.insert(id, kind);
    }

    /// Operands of `id` ordered by slot.
    pub fn operands(&self, id: NodeId) -> Vec<NodeId> {
        let mut ins: Vec<&Edge> = self.edges.iter().filter(|e| e.dst == id).collect();
        ins.sort_by_key(|e| e.slot);
        ins.into_iter().map(|e| e.src).collect()
    }

    pub fn consumers(&self, id: NodeId) -> Vec<NodeId> {
        let set: BTreeSet<NodeId> = self
            .edges
            .iter()
            .filter(|e| e.src == id)
            .map(|e| e.dst)
            .collect();
        set.into_iter().collect()
    }

    pub fn parameterized_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, k)| k.is_parameterized())
            .map(|(&id, _)| id)
            .collect()
    }

    /// Kahn topological order, ties broken by node id.
    pub fn topo_order(&self) -> Result<Vec<NodeId>> {
        let mut indeg: BTreeMap<NodeId, usize> = self.nodes.keys().map(|&k| (k, 0)).collect();
        for e in &self.edges {
            if let Some(d) = indeg.get_mut(&e.dst) {
                *d += 1;
            }
        }
        let mut ready: BTreeSet<NodeId> = indeg
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&k, _)| k)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_first() {
            order.push(n);
            for e in self.edges.iter().filter(|e| e.src == n) {
                if let Some(d) = indeg.get_mut(&e.dst) {
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(e.dst);
                    }
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(Error::InvalidGraph(vec!["cycle".into()]));
        }
        Ok(order)
    }

    /// Nodes reachable from `start` following edges forward (inclusive).
    pub fn descendants(&self, start: NodeId) -> BTreeSet<NodeId> {
        self.walk(start, |e| (e.src, e.dst))
    }

    /// Nodes from which `start` is reachable (inclusive).
    pub fn ancestors(&self, start: NodeId) -> BTreeSet<NodeId> {
        self.walk(start, |e| (e.dst, e.src))
    }

    fn walk(&self, start: NodeId, dir: impl Fn(&Edge) -> (NodeId, NodeId)) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for e in &self.edges {
                let (from, to) = dir(e);
                if from == n && seen.insert(to) {
                    queue.push_back(to);
                }
            }
        }
        seen
    }

    /// Shape of every node. Fails on structural or shape errors.
    pub fn infer_shapes(&self) -> Result<BTreeMap<NodeId, Shape>> {
        let order = self.topo_order()?;
        let mut shapes: BTreeMap<NodeId, Shape> = BTreeMap::new();
        for id in order {
            let kind = &self.nodes[&id];
            if matches!(kind, NodeKind::Input) {
                shapes.insert(id, self.input_shape.clone());
                continue;
            }
            let ops = self.operands(id);
            let ins: Vec<&[usize]> = ops
                .iter()
                .map(|o| shapes.get(o).map(Vec::as_slice).unwrap_or(&[]))
                .collect();
            let shape = kind
                .output_shape(&ins)
                .map_err(|m| Error::InvalidGraph(vec![format!("shape: node {id}: {m}")]))?;
            shapes.insert(id, shape);
        }
        Ok(shapes)
    }

    /// All structural problems with the graph; empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        fn push(out: &mut Vec<Violation>, kind: ViolationKind, node: Option<NodeId>, message: String) {
            out.push(Violation { kind, node, message });
        }

        let inputs: Vec<NodeId> = self.nodes.iter().filter(|(_, k)| matches!(k, NodeKind::Input)).map(|(&i, _)| i).collect();
        let outputs: Vec<NodeId> = self.nodes.iter().filter(|(_, k)| matches!(k, NodeKind::Output)).map(|(&i, _)| i).collect();
        if inputs != [self.input] {
            push(&mut out, ViolationKind::Structure, None, format!("expected exactly one input node {}, found {inputs:?}", self.input));
        }
        if outputs != [self.output] {
            push(&mut out, ViolationKind::Structure, None, format!("expected exactly one output node {}, found {outputs:?}", self.output));
        }
        for e in &self.edges {
            for end in [e.src, e.dst] {
                if !self.nodes.contains_key(&end) {
                    push(&mut out, ViolationKind::Structure, Some(end), "edge references a missing node".into());
                }
            }
        }
        if !out.is_empty() {
            return out;
        }

        for (&id, kind) in &self.nodes {
            let mut slots: Vec<usize> = self.edges.iter().filter(|e| e.dst == id).map(|e| e.slot).collect();
            slots.sort_unstable();
            let expected: Vec<usize> = (0..kind.arity()).collect();
            if slots != expected {
                push(&mut out, ViolationKind::Arity, Some(id), format!("{} needs operand slots {expected:?}, has {slots:?}", kind.tag()));
            }
        }

        if self.topo_order().is_err() {
            push(&mut out, ViolationKind::Cycle, None, "graph contains a cycle".into());
            return out;
        }

        let forward = self.descendants(self.input);
        let backward = self.ancestors(self.output);
        for &id in self.nodes.keys() {
            if !forward.contains(&id) {
                push(&mut out, ViolationKind::Unreachable, Some(id), "not reachable from the input".into());
            } else if !backward.contains(&id) {
                push(&mut out, ViolationKind::Dead, Some(id), "does not reach the output".into());
            }
        }

        if out.iter().all(|v| v.kind != ViolationKind::Arity) {
            if let Err(Error::InvalidGraph(msgs)) = self.infer_shapes() {
                for m in msgs {
                    push(&mut out, ViolationKind::Shape, None, m);
                }
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidGraph(v.iter().map(ToString::to_string).collect()))
        }
    }

    /// Copy of the graph with node ids rewritten through `map`.
    pub fn relabeled(&self, map: &BTreeMap<NodeId, NodeId>) -> ArchGraph {
        let m = |n: NodeId| map.get(&n).copied().unwrap_or(n);
        ArchGraph {
            name: self.name.clone(),
            provenance: self.provenance.clone(),
            input_shape: self.input_shape.clone(),
            nodes: self.nodes.iter().map(|(&k, v)| (m(k), v.clone())).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| Edge { src: m(e.src), dst: m(e.dst), slot: e.slot })
                .collect(),
            input: m(self.input),
            output: m(self.output),
        }
    }
}
