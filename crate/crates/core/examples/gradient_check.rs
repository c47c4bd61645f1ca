//! Compare reverse-mode gradients with central finite differences on a small
//! convolutional graph.

use archdoor::engine::{backward_pass, Executor, ParamStore};
use archdoor::engine::softmax_cross_entropy;
use archdoor::graph::{Adaptive, ArchGraph, Conv2d, Dense, NodeKind};
use archdoor::tensor::Tensor;

fn main() -> archdoor::Result<()> {
    let mut g = ArchGraph::new("check", vec![3, 6, 6]);
    let c = g.add(NodeKind::Conv2d(Conv2d { in_channels: 3, out_channels: 4, kernel: 3, stride: 1, padding: 1 }), &[g.input()]);
    let r = g.add(NodeKind::Relu, &[c]);
    let p = g.add(NodeKind::AdaptiveAvgPool(Adaptive { output: [2, 2] }), &[r]);
    let f = g.add(NodeKind::Flatten, &[p]);
    let d = g.add(NodeKind::Dense(Dense { in_features: 16, out_features: 3 }), &[f]);
    g.set_output(d);

    let params = ParamStore::init(&g, 5);
    let x = Tensor::new(vec![3, 6, 6], (0..108).map(|i| ((i * 37 % 19) as f64 / 9.5) - 1.0).collect())?;
    let (_, grads) = backward_pass(&g, &params, &x, 1)?;
    let exec = Executor::new(&g)?;
    let loss = |p: &ParamStore| softmax_cross_entropy(&exec.logits(p, &x).expect("forward"), 1).expect("loss").0;

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (id, tensors) in &params.params {
        for (t, tensor) in tensors.iter().enumerate() {
            for i in 0..tensor.len() {
                let mut plus = params.clone();
                plus.params.get_mut(id).expect("node")[t].data_mut()[i] += h;
                let mut minus = params.clone();
                minus.params.get_mut(id).expect("node")[t].data_mut()[i] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let analytic = grads[id][t].data()[i];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    println!("checked {} parameters, worst relative error {worst:.2e}", params.num_values());
    Ok(())
}
