//! Reference architectures and small fixture graphs.
//!
//! Both reference networks are 32x32 adaptations. Every constructor ends in
//! `adaptive-avg-pool -> flatten -> dense head`, which is the site the
//! backdoor injector targets.

use crate::error::{Error, Result};
use crate::graph::{Adaptive, ArchGraph, Conv2d, Dense, NodeId, NodeKind, Pool};

fn conv(g: &mut ArchGraph, from: NodeId, cin: usize, cout: usize, stride: usize) -> NodeId {
    let c = g.add(
        NodeKind::Conv2d(Conv2d { in_channels: cin, out_channels: cout, kernel: 3, stride, padding: 1 }),
        &[from],
    );
    g.add(NodeKind::Relu, &[c])
}

fn dense(g: &mut ArchGraph, from: NodeId, inf: usize, outf: usize) -> NodeId {
    g.add(NodeKind::Dense(Dense { in_features: inf, out_features: outf }), &[from])
}

fn max_pool2(g: &mut ArchGraph, from: NodeId) -> NodeId {
    g.add(NodeKind::MaxPool(Pool { kernel: 2, stride: 2 }), &[from])
}

/// AlexNet adapted to 32x32 inputs with 3x3 filters.
///
/// ```text
/// conv 3x3/2 -> relu -> maxpool 2        (32 -> 16 -> 8)
/// conv 3x3/1 -> relu -> maxpool 2        (8 -> 4)
/// 3 x (conv 3x3/1 -> relu)               (4)
/// adaptive-avg-pool 6x6 -> flatten -> dense -> relu -> dense -> relu -> dense
/// ```
///
/// Channel widths default to the original 64/192/384/256/256.
#[derive(Debug, Clone, PartialEq)]
pub struct AlexNetSmall {
    pub num_classes: usize,
    pub input_size: usize,
    pub channels: [usize; 5],
    pub hidden: usize,
    pub pool_out: usize,
}

impl AlexNetSmall {
    pub fn new(num_classes: usize) -> Self {
        AlexNetSmall {
            num_classes,
            input_size: 32,
            channels: [64, 192, 384, 256, 256],
            hidden: 1024,
            pool_out: 6,
        }
    }

    /// Narrow variant for CPU-scale experiments.
    pub fn desk(num_classes: usize) -> Self {
        AlexNetSmall { channels: [8, 16, 16, 16, 16], hidden: 32, ..Self::new(num_classes) }
    }

    pub fn build(&self) -> Result<ArchGraph> {
        if self.num_classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        let s = self.input_size;
        let [c1, c2, c3, c4, c5] = self.channels;
        let mut g = ArchGraph::new("alexnet-small", vec![3, s, s]);
        g.provenance = format!("alexnet-small channels={:?} hidden={}", self.channels, self.hidden);
        let inp = g.input();
        let mut x = conv(&mut g, inp, 3, c1, 2);
        x = max_pool2(&mut g, x);
        x = conv(&mut g, x, c1, c2, 1);
        x = max_pool2(&mut g, x);
        x = conv(&mut g, x, c2, c3, 1);
        x = conv(&mut g, x, c3, c4, 1);
        x = conv(&mut g, x, c4, c5, 1);
        let p = self.pool_out;
        x = g.add(NodeKind::AdaptiveAvgPool(Adaptive { output: [p, p] }), &[x]);
        x = g.add(NodeKind::Flatten, &[x]);
        x = dense(&mut g, x, c5 * p * p, self.hidden);
        x = g.add(NodeKind::Relu, &[x]);
        x = dense(&mut g, x, self.hidden, self.hidden);
        x = g.add(NodeKind::Relu, &[x]);
        x = dense(&mut g, x, self.hidden, self.num_classes);
        g.set_output(x);
        g.ensure_valid()?;
        Ok(g)
    }
}

pub fn build_alexnet_small(num_classes: usize) -> Result<ArchGraph> {
    AlexNetSmall::new(num_classes).build()
}

/// VGG-11 (configuration "A") for 32x32 inputs, without batch norm.
/// Five 2x2 max-pools bring the map to 1x1 before global adaptive pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Vgg11 {
    pub num_classes: usize,
    pub input_size: usize,
    pub channels: [usize; 8],
    pub hidden: usize,
    pub pool_out: usize,
}

impl Vgg11 {
    pub fn new(num_classes: usize) -> Self {
        Vgg11 {
            num_classes,
            input_size: 32,
            channels: [64, 128, 256, 256, 512, 512, 512, 512],
            hidden: 512,
            pool_out: 1,
        }
    }

    pub fn desk(num_classes: usize) -> Self {
        Vgg11 { channels: [4, 8, 16, 16, 32, 32, 32, 32], hidden: 32, ..Self::new(num_classes) }
    }

    pub fn build(&self) -> Result<ArchGraph> {
        if self.num_classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        let s = self.input_size;
        let c = self.channels;
        let mut g = ArchGraph::new("vgg11", vec![3, s, s]);
        g.provenance = format!("vgg11 channels={:?} hidden={}", self.channels, self.hidden);
        let inp = g.input();
        let mut x = conv(&mut g, inp, 3, c[0], 1);
        x = max_pool2(&mut g, x);
        x = conv(&mut g, x, c[0], c[1], 1);
        x = max_pool2(&mut g, x);
        x = conv(&mut g, x, c[1], c[2], 1);
        x = conv(&mut g, x, c[2], c[3], 1);
        x = max_pool2(&mut g, x);
        x = conv(&mut g, x, c[3], c[4], 1);
        x = conv(&mut g, x, c[4], c[5], 1);
        x = max_pool2(&mut g, x);
        x = conv(&mut g, x, c[5], c[6], 1);
        x = conv(&mut g, x, c[6], c[7], 1);
        x = max_pool2(&mut g, x);
        let p = self.pool_out;
        x = g.add(NodeKind::AdaptiveAvgPool(Adaptive { output: [p, p] }), &[x]);
        x = g.add(NodeKind::Flatten, &[x]);
        x = dense(&mut g, x, c[7] * p * p, self.hidden);
        x = g.add(NodeKind::Relu, &[x]);
        x = dense(&mut g, x, self.hidden, self.hidden);
        x = g.add(NodeKind::Relu, &[x]);
        x = dense(&mut g, x, self.hidden, self.num_classes);
        g.set_output(x);
        g.ensure_valid()?;
        Ok(g)
    }
}

pub fn build_vgg11(num_classes: usize) -> Result<ArchGraph> {
    Vgg11::new(num_classes).build()
}

/// One residual block whose skip leaves the first convolution, not the raw
/// input.
pub fn resnet_block(num_classes: usize) -> Result<ArchGraph> {
    let mut g = ArchGraph::new("resnet-block", vec![3, 32, 32]);
    let c1 = g.add(
        NodeKind::Conv2d(Conv2d { in_channels: 3, out_channels: 8, kernel: 3, stride: 2, padding: 1 }),
        &[g.input()],
    );
    let r1 = g.add(NodeKind::Relu, &[c1]);
    let c2 = g.add(
        NodeKind::Conv2d(Conv2d { in_channels: 8, out_channels: 8, kernel: 3, stride: 1, padding: 1 }),
        &[r1],
    );
    let sum = g.add(NodeKind::Add, &[c2, r1]);
    let r2 = g.add(NodeKind::Relu, &[sum]);
    let p = g.add(NodeKind::AdaptiveAvgPool(Adaptive { output: [2, 2] }), &[r2]);
    let f = g.add(NodeKind::Flatten, &[p]);
    let d = dense(&mut g, f, 32, num_classes);
    g.set_output(d);
    g.ensure_valid()?;
    Ok(g)
}

/// A convolution whose output is summed with the untouched input image.
pub fn identity_skip(num_classes: usize) -> Result<ArchGraph> {
    let mut g = ArchGraph::new("identity-skip", vec![3, 32, 32]);
    let c = g.add(
        NodeKind::Conv2d(Conv2d { in_channels: 3, out_channels: 3, kernel: 3, stride: 1, padding: 1 }),
        &[g.input()],
    );
    let r = g.add(NodeKind::Relu, &[c]);
    let sum = g.add(NodeKind::Add, &[r, g.input()]);
    let p = g.add(NodeKind::AdaptiveAvgPool(Adaptive { output: [4, 4] }), &[sum]);
    let f = g.add(NodeKind::Flatten, &[p]);
    let d = dense(&mut g, f, 48, num_classes);
    g.set_output(d);
    g.ensure_valid()?;
    Ok(g)
}

/// [`build_named`] with a square input of `input_size` pixels. Only the
/// AlexNet and VGG families accept sizes other than 32.
pub fn build_named_sized(name: &str, num_classes: usize, input_size: usize) -> Result<ArchGraph> {
    match name {
        "alexnet-small" => AlexNetSmall { input_size, ..AlexNetSmall::new(num_classes) }.build(),
        "alexnet-small-desk" => AlexNetSmall { input_size, ..AlexNetSmall::desk(num_classes) }.build(),
        "vgg11" => Vgg11 { input_size, ..Vgg11::new(num_classes) }.build(),
        "vgg11-desk" => Vgg11 { input_size, ..Vgg11::desk(num_classes) }.build(),
        _ if input_size == 32 => build_named(name, num_classes),
        other => Err(Error::Config(format!("architecture {other:?} only supports 32x32 inputs"))),
    }
}

/// Look up a constructor by name. `*-desk` names select the narrow widths.
pub fn build_named(name: &str, num_classes: usize) -> Result<ArchGraph> {
    match name {
        "alexnet-small" => build_alexnet_small(num_classes),
        "alexnet-small-desk" => AlexNetSmall::desk(num_classes).build(),
        "vgg11" => build_vgg11(num_classes),
        "vgg11-desk" => Vgg11::desk(num_classes).build(),
        "resnet-block" => resnet_block(num_classes),
        "identity-skip" => identity_skip(num_classes),
        other => Err(Error::Config(format!(
            "unknown architecture {other:?} (expected one of {})",
            ARCHITECTURES.join(", ")
        ))),
    }
}

pub const ARCHITECTURES: [&str; 6] = [
    "alexnet-small",
    "alexnet-small-desk",
    "vgg11",
    "vgg11-desk",
    "resnet-block",
    "identity-skip",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn logits_shape(g: &ArchGraph) -> Vec<usize> {
        g.infer_shapes().unwrap()[&g.output()].clone()
    }

    #[test]
    fn alexnet_small_validates_with_ten_logits() {
        let g = build_alexnet_small(10).unwrap();
        assert!(g.validate().is_empty());
        assert_eq!(logits_shape(&g), vec![10]);
    }

    #[test]
    fn vgg11_has_ten_logits_on_cifar_sized_input() {
        let g = build_vgg11(10).unwrap();
        assert_eq!(g.input_shape, vec![3, 32, 32]);
        assert_eq!(logits_shape(&g), vec![10]);
        assert_eq!(g.nodes().values().filter(|k| matches!(k, NodeKind::Conv2d(_))).count(), 8);
    }

    #[test]
    fn alexnet_pools_to_six_by_six_before_head() {
        let g = build_alexnet_small(10).unwrap();
        let shapes = g.infer_shapes().unwrap();
        let (aap, _) = g
            .nodes()
            .iter()
            .find(|(_, k)| matches!(k, NodeKind::AdaptiveAvgPool(_)))
            .unwrap();
        assert_eq!(shapes[aap], vec![256, 6, 6]);
    }

    #[test]
    fn every_constructor_has_a_trunk_aap_and_no_dead_nodes() {
        for name in ARCHITECTURES {
            let g = build_named(name, 10).unwrap();
            assert!(g.validate().is_empty(), "{name}");
            let on_path: Vec<_> = g
                .nodes()
                .iter()
                .filter(|(_, k)| matches!(k, NodeKind::AdaptiveAvgPool(_)))
                .map(|(id, _)| *id)
                .filter(|id| g.descendants(g.input()).contains(id) && g.ancestors(g.output()).contains(id))
                .collect();
            assert_eq!(on_path.len(), 1, "{name}");
        }
    }

    #[test]
    fn one_class_is_rejected() {
        assert!(build_alexnet_small(1).is_err());
        assert!(build_named("lenet", 10).is_err());
    }
}
