#![allow(dead_code)]

use archdoor::graph::{Adaptive, ArchGraph, Conv2d, Dense, ExpAffinePow, NodeId, NodeKind, Pool};
use archdoor::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_image(rng: &mut ChaCha8Rng, shape: &[usize], amp: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-amp..=amp)).collect()).unwrap()
}

/// Random small graph: a convolution, a few assorted operators (including
/// merges), adaptive pooling and a two-layer dense head.
pub fn random_graph(seed: u64) -> ArchGraph {
    let mut r = rng(seed);
    let size = r.gen_range(6..=8);
    let mut g = ArchGraph::new(format!("random-{seed}"), vec![3, size, size]);
    let inp = g.input();
    let mut ch = r.gen_range(2..=4);
    let (k, s, p) = (r.gen_range(1..=3), r.gen_range(1..=2), r.gen_range(0..=1));
    let mut x = g.add(NodeKind::Conv2d(Conv2d { in_channels: 3, out_channels: ch, kernel: k, stride: s, padding: p }), &[inp]);
    let mut hw = (size + 2 * p - k) / s + 1;
    for _ in 0..r.gen_range(2..=4) {
        x = match r.gen_range(0..9) {
            0 => g.add(NodeKind::Relu, &[x]),
            1 | 2 | 3 if hw >= 3 => {
                hw -= 1;
                let pool = Pool { kernel: 2, stride: 1 };
                let kind = [NodeKind::MaxPool(pool), NodeKind::MinPool(pool), NodeKind::AvgPool(pool)][r.gen_range(0..3)].clone();
                g.add(kind, &[x])
            }
            4 => g.add(
                NodeKind::ExpAffinePow(ExpAffinePow { alpha: r.gen_range(1..=3), beta: 0.5, delta: 1.0 }),
                &[x],
            ),
            5 => g.add(NodeKind::Negate, &[x]),
            6 => {
                let c = g.add(
                    NodeKind::Conv2d(Conv2d { in_channels: ch, out_channels: ch, kernel: 3, stride: 1, padding: 1 }),
                    &[x],
                );
                g.add(NodeKind::Add, &[x, c])
            }
            7 => {
                let m = g.add(NodeKind::ChannelMaxReduce, &[x]);
                g.add(NodeKind::Multiply, &[x, m])
            }
            _ => {
                let out = r.gen_range(2..=4);
                let c = g.add(
                    NodeKind::Conv2d(Conv2d { in_channels: ch, out_channels: out, kernel: 3, stride: 1, padding: 1 }),
                    &[x],
                );
                ch = out;
                c
            }
        };
    }
    let ap = if r.gen_bool(0.5) {
        NodeKind::AdaptiveAvgPool(Adaptive { output: [2, 2] })
    } else {
        NodeKind::AdaptiveMaxPool(Adaptive { output: [2, 2] })
    };
    x = g.add(ap, &[x]);
    x = g.add(NodeKind::Flatten, &[x]);
    let hidden = r.gen_range(3..=5);
    x = g.add(NodeKind::Dense(Dense { in_features: ch * 4, out_features: hidden }), &[x]);
    x = g.add(NodeKind::Relu, &[x]);
    x = g.add(NodeKind::Dense(Dense { in_features: hidden, out_features: 3 }), &[x]);
    g.set_output(x);
    g.ensure_valid().expect("generator builds valid graphs");
    g
}

/// Fresh ids for every node, in reverse order.
pub fn reversed_ids(g: &ArchGraph) -> std::collections::BTreeMap<NodeId, NodeId> {
    let n = g.len() as u32;
    g.nodes().keys().enumerate().map(|(i, &id)| (id, NodeId(n + 100 - i as u32))).collect()
}
