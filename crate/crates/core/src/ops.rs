//! Forward and backward kernels for every [`NodeKind`].
//!
//! All maps are `C x H x W`, row-major. Pooling windows never pad. Adaptive
//! pooling splits an axis of length `n` into `m` cells, cell `i` covering
//! `floor(i*n/m) .. ceil((i+1)*n/m)`.

use crate::error::{Error, Result};
use crate::graph::{Adaptive, Conv2d, Dense, ExpAffinePow, NodeKind, Pool};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Max,
    Min,
    Avg,
}

/// Half-open range of input indices covered by adaptive cell `i`.
pub fn adaptive_range(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

/// Evaluate one node. `params` holds `[weight, bias]` for parameterized kinds.
pub fn evaluate_node(kind: &NodeKind, params: Option<&[Tensor]>, inputs: &[&Tensor]) -> Result<Tensor> {
    let shapes: Vec<&[usize]> = inputs.iter().map(|t| t.shape()).collect();
    let out_shape = kind.output_shape(&shapes).map_err(Error::Shape)?;
    if kind.is_parameterized() != params.is_some() {
        return Err(Error::Shape(format!(
            "{} {} parameters",
            kind.tag(),
            if kind.is_parameterized() { "requires" } else { "takes no" }
        )));
    }
    let out = match kind {
        NodeKind::Input => unreachable!("output_shape rejects input nodes"),
        NodeKind::Conv2d(c) => {
            let p = params.unwrap_or_default();
            check_params(kind, p)?;
            conv2d(inputs[0], &p[0], &p[1], c)
        }
        NodeKind::Dense(d) => {
            let p = params.unwrap_or_default();
            check_params(kind, p)?;
            dense(inputs[0], &p[0], &p[1], d)
        }
        NodeKind::Relu => inputs[0].map(|x| x.max(0.0)),
        NodeKind::Negate => inputs[0].map(|x| -x),
        NodeKind::ExpAffinePow(e) => inputs[0].map(|x| e.apply(x)),
        NodeKind::MaxPool(p) => pool2d(inputs[0], p, Reduce::Max),
        NodeKind::MinPool(p) => pool2d(inputs[0], p, Reduce::Min),
        NodeKind::AvgPool(p) => pool2d(inputs[0], p, Reduce::Avg),
        NodeKind::AdaptiveAvgPool(a) => adaptive_pool(inputs[0], a, Reduce::Avg),
        NodeKind::AdaptiveMaxPool(a) => adaptive_pool(inputs[0], a, Reduce::Max),
        NodeKind::ChannelMaxReduce => channel_max(inputs[0]),
        NodeKind::Add => broadcast_binary(inputs[0], inputs[1], |a, b| a + b),
        NodeKind::Multiply => broadcast_binary(inputs[0], inputs[1], |a, b| a * b),
        NodeKind::Flatten => {
            let n = inputs[0].len();
            inputs[0].clone().reshape(&[n])?
        }
        NodeKind::Output => inputs[0].clone(),
    };
    debug_assert_eq!(out.shape(), &out_shape[..]);
    if !out.all_finite() {
        return Err(Error::NonFinite { node: None, kind: kind.tag() });
    }
    Ok(out)
}

fn check_params(kind: &NodeKind, p: &[Tensor]) -> Result<()> {
    let (shapes, _) = kind.param_shapes().expect("parameterized");
    if p.len() != shapes.len() || p.iter().zip(&shapes).any(|(t, s)| t.shape() != &s[..]) {
        return Err(Error::Shape(format!(
            "{} parameters do not match {:?}",
            kind.tag(),
            shapes
        )));
    }
    Ok(())
}

/// Range of output columns `ox` for which `ox*stride + k - pad` lies in `0..extent`.
fn valid_range(k: usize, pad: usize, stride: usize, extent: usize, out: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if extent + pad > k { (extent + pad - k - 1) / stride + 1 } else { 0 };
    (lo.min(out), hi.min(out))
}

pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub oh: usize,
    pub ow: usize,
    pub k: usize,
    pub s: usize,
    pub p: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], c: &Conv2d) -> Self {
        let (h, w) = (input[1], input[2]);
        ConvGeom {
            cin: c.in_channels,
            h,
            w,
            cout: c.out_channels,
            oh: (h + 2 * c.padding - c.kernel) / c.stride + 1,
            ow: (w + 2 * c.padding - c.kernel) / c.stride + 1,
            k: c.kernel,
            s: c.stride,
            p: c.padding,
        }
    }

    /// Visit every (weight index, input offset, output offset, run length)
    /// contributing row segment, in a fixed order. The same order is used by
    /// the forward pass and by interval propagation.
    #[inline]
    pub fn for_each_segment(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let g = self;
        for o in 0..g.cout {
            for c in 0..g.cin {
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let widx = ((o * g.cin + c) * g.k + ky) * g.k + kx;
                        let (x0, x1) = valid_range(kx, g.p, g.s, g.w, g.ow);
                        if x0 >= x1 {
                            continue;
                        }
                        for oy in 0..g.oh {
                            let iy = (oy * g.s + ky) as isize - g.p as isize;
                            if iy < 0 || iy as usize >= g.h {
                                continue;
                            }
                            let in_row = (c * g.h + iy as usize) * g.w;
                            let ix0 = x0 * g.s + kx - g.p;
                            let out_row = (o * g.oh + oy) * g.ow;
                            f(widx, in_row + ix0, out_row + x0, x1 - x0);
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor, c: &Conv2d) -> Tensor {
    let g = ConvGeom::new(x.shape(), c);
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.cout * plane];
    for (o, chunk) in out.chunks_mut(plane).enumerate() {
        chunk.fill(bias.data()[o]);
    }
    let (xd, wd) = (x.data(), weight.data());
    let s = g.s;
    g.for_each_segment(|widx, xi, oi, n| {
        let wv = wd[widx];
        let dst = &mut out[oi..oi + n];
        if s == 1 {
            for (d, &v) in dst.iter_mut().zip(&xd[xi..xi + n]) {
                *d += wv * v;
            }
        } else {
            for (j, d) in dst.iter_mut().enumerate() {
                *d += wv * xd[xi + j * s];
            }
        }
    });
    Tensor::new(vec![g.cout, g.oh, g.ow], out).expect("conv output shape")
}

/// Gradients of a convolution: `(d input, d weight, d bias)`. The input
/// gradient is skipped when `need_input` is false.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    c: &Conv2d,
    need_input: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let g = ConvGeom::new(x.shape(), c);
    let plane = g.oh * g.ow;
    let (xd, wd, gd) = (x.data(), weight.data(), grad_out.data());
    let mut gw = vec![0.0; wd.len()];
    let mut gx = if need_input { vec![0.0; xd.len()] } else { Vec::new() };
    let gb: Vec<f64> = gd.chunks(plane).map(|ch| ch.iter().sum()).collect();
    let s = g.s;
    g.for_each_segment(|widx, xi, oi, n| {
        let go = &gd[oi..oi + n];
        let mut acc = 0.0;
        if s == 1 {
            for (a, b) in go.iter().zip(&xd[xi..xi + n]) {
                acc += a * b;
            }
            if need_input {
                let wv = wd[widx];
                for (d, &v) in gx[xi..xi + n].iter_mut().zip(go) {
                    *d += wv * v;
                }
            }
        } else {
            for (j, a) in go.iter().enumerate() {
                acc += a * xd[xi + j * s];
            }
            if need_input {
                let wv = wd[widx];
                for (j, &v) in go.iter().enumerate() {
                    gx[xi + j * s] += wv * v;
                }
            }
        }
        gw[widx] += acc;
    });
    let gx = need_input.then(|| Tensor::new(x.shape().to_vec(), gx).expect("shape"));
    (
        gx,
        Tensor::new(weight.shape().to_vec(), gw).expect("shape"),
        Tensor::new(vec![g.cout], gb).expect("shape"),
    )
}

pub fn dense(x: &Tensor, weight: &Tensor, bias: &Tensor, d: &Dense) -> Tensor {
    let (xd, wd) = (x.data(), weight.data());
    let out = (0..d.out_features)
        .map(|o| {
            let row = &wd[o * d.in_features..(o + 1) * d.in_features];
            let mut acc = bias.data()[o];
            for (w, v) in row.iter().zip(xd) {
                acc += w * v;
            }
            acc
        })
        .collect();
    Tensor::from_vec(out)
}

pub fn dense_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    d: &Dense,
    need_input: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (xd, wd, gd) = (x.data(), weight.data(), grad_out.data());
    let mut gw = vec![0.0; wd.len()];
    let mut gx = vec![0.0; if need_input { d.in_features } else { 0 }];
    for o in 0..d.out_features {
        let go = gd[o];
        if go == 0.0 {
            continue;
        }
        let row = &mut gw[o * d.in_features..(o + 1) * d.in_features];
        for (g, v) in row.iter_mut().zip(xd) {
            *g += go * v;
        }
        if need_input {
            let wrow = &wd[o * d.in_features..(o + 1) * d.in_features];
            for (g, w) in gx.iter_mut().zip(wrow) {
                *g += go * w;
            }
        }
    }
    (
        need_input.then(|| Tensor::from_vec(gx)),
        Tensor::new(weight.shape().to_vec(), gw).expect("shape"),
        grad_out.clone(),
    )
}

/// Window positions `(c, out index, input indices)` of a pooling op, each
/// window listed in row-major order.
fn pool_windows(
    shape: &[usize],
    out_hw: (usize, usize),
    rows: impl Fn(usize) -> (usize, usize),
    cols: impl Fn(usize) -> (usize, usize),
    mut f: impl FnMut(usize, &mut dyn Iterator<Item = usize>),
) {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (oh, ow) = out_hw;
    for ch in 0..c {
        for oy in 0..oh {
            let (y0, y1) = rows(oy);
            for ox in 0..ow {
                let (x0, x1) = cols(ox);
                let mut it = (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (ch * h + y) * w + x));
                f((ch * oh + oy) * ow + ox, &mut it);
            }
        }
    }
}

fn reduce_window(data: &[f64], it: &mut dyn Iterator<Item = usize>, op: Reduce) -> (f64, usize) {
    let first = it.next().expect("non-empty window");
    let mut best = data[first];
    let mut arg = first;
    let mut sum = data[first];
    let mut n = 1usize;
    for i in it {
        let v = data[i];
        sum += v;
        n += 1;
        match op {
            Reduce::Max if v > best => (best, arg) = (v, i),
            Reduce::Min if v < best => (best, arg) = (v, i),
            _ => {}
        }
    }
    match op {
        Reduce::Avg => (sum / n as f64, n),
        _ => (best, arg),
    }
}

fn pooled(x: &Tensor, out_hw: (usize, usize), rows: impl Fn(usize) -> (usize, usize), cols: impl Fn(usize) -> (usize, usize), op: Reduce) -> Tensor {
    let c = x.shape()[0];
    let mut out = vec![0.0; c * out_hw.0 * out_hw.1];
    pool_windows(x.shape(), out_hw, rows, cols, |o, it| {
        out[o] = reduce_window(x.data(), it, op).0;
    });
    Tensor::new(vec![c, out_hw.0, out_hw.1], out).expect("pool shape")
}

fn pooled_backward(x: &Tensor, grad_out: &Tensor, out_hw: (usize, usize), rows: impl Fn(usize) -> (usize, usize), cols: impl Fn(usize) -> (usize, usize), op: Reduce) -> Tensor {
    let mut gx = vec![0.0; x.len()];
    let gd = grad_out.data();
    pool_windows(x.shape(), out_hw, rows, cols, |o, it| match op {
        Reduce::Avg => {
            let idx: Vec<usize> = it.collect();
            let share = gd[o] / idx.len() as f64;
            for i in idx {
                gx[i] += share;
            }
        }
        _ => {
            let (_, arg) = reduce_window(x.data(), it, op);
            gx[arg] += gd[o];
        }
    });
    Tensor::new(x.shape().to_vec(), gx).expect("shape")
}

fn fixed_geometry(x: &Tensor, p: &Pool) -> ((usize, usize), impl Fn(usize) -> (usize, usize), impl Fn(usize) -> (usize, usize)) {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let (k, s) = (p.kernel, p.stride);
    let out = ((h - k) / s + 1, (w - k) / s + 1);
    (out, move |i| (i * s, i * s + k), move |i| (i * s, i * s + k))
}

fn adaptive_geometry(x: &Tensor, a: &Adaptive) -> ((usize, usize), impl Fn(usize) -> (usize, usize), impl Fn(usize) -> (usize, usize)) {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let [oh, ow] = a.output;
    ((oh, ow), move |i| adaptive_range(i, h, oh), move |i| adaptive_range(i, w, ow))
}

pub fn pool2d(x: &Tensor, p: &Pool, op: Reduce) -> Tensor {
    let (out, rows, cols) = fixed_geometry(x, p);
    pooled(x, out, rows, cols, op)
}

pub fn pool2d_backward(x: &Tensor, grad_out: &Tensor, p: &Pool, op: Reduce) -> Tensor {
    let (out, rows, cols) = fixed_geometry(x, p);
    pooled_backward(x, grad_out, out, rows, cols, op)
}

pub fn adaptive_pool(x: &Tensor, a: &Adaptive, op: Reduce) -> Tensor {
    let (out, rows, cols) = adaptive_geometry(x, a);
    pooled(x, out, rows, cols, op)
}

pub fn adaptive_pool_backward(x: &Tensor, grad_out: &Tensor, a: &Adaptive, op: Reduce) -> Tensor {
    let (out, rows, cols) = adaptive_geometry(x, a);
    pooled_backward(x, grad_out, out, rows, cols, op)
}

/// Input index ranges `(rows, cols)` read by output cell `(oy, ox)` of a
/// pooling node, or `None` for other kinds.
pub fn pool_cell(kind: &NodeKind, input: &[usize], oy: usize, ox: usize) -> Option<((usize, usize), (usize, usize))> {
    let (h, w) = (input[1], input[2]);
    match kind {
        NodeKind::MaxPool(p) | NodeKind::MinPool(p) | NodeKind::AvgPool(p) => {
            Some(((oy * p.stride, oy * p.stride + p.kernel), (ox * p.stride, ox * p.stride + p.kernel)))
        }
        NodeKind::AdaptiveAvgPool(a) | NodeKind::AdaptiveMaxPool(a) => {
            Some((adaptive_range(oy, h, a.output[0]), adaptive_range(ox, w, a.output[1])))
        }
        _ => None,
    }
}

pub fn channel_max(x: &Tensor) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let plane = h * w;
    let d = x.data();
    let mut out = d[..plane].to_vec();
    for ch in 1..c {
        for (o, &v) in out.iter_mut().zip(&d[ch * plane..(ch + 1) * plane]) {
            if v > *o {
                *o = v;
            }
        }
    }
    Tensor::new(vec![1, h, w], out).expect("shape")
}

pub fn channel_max_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let plane = h * w;
    let d = x.data();
    let mut gx = vec![0.0; d.len()];
    for i in 0..plane {
        let mut arg = 0;
        for ch in 1..c {
            if d[ch * plane + i] > d[arg * plane + i] {
                arg = ch;
            }
        }
        gx[arg * plane + i] = grad_out.data()[i];
    }
    Tensor::new(x.shape().to_vec(), gx).expect("shape")
}

/// Elementwise op; a single-channel operand is repeated across channels.
pub fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data).expect("shape");
    }
    let (big, small, small_is_b) = if a.shape()[0] == 1 { (b, a, false) } else { (a, b, true) };
    let plane = small.len();
    let data = big
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let y = small.data()[i % plane];
            if small_is_b { f(x, y) } else { f(y, x) }
        })
        .collect();
    Tensor::new(big.shape().to_vec(), data).expect("shape")
}

/// Sum a full-size gradient down to `shape` (undoes channel broadcast).
pub fn reduce_to(grad: Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad;
    }
    let plane: usize = shape.iter().product();
    let mut out = vec![0.0; plane];
    for (i, &g) in grad.data().iter().enumerate() {
        out[i % plane] += g;
    }
    Tensor::new(shape.to_vec(), out).expect("shape")
}

/// Expand a (possibly single-channel) operand to `shape` (for multiply
/// gradients).
pub fn expand_to(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    broadcast_binary(&Tensor::zeros(shape), t, |_, y| y)
}

pub fn exp_affine_pow_backward(x: &Tensor, grad_out: &Tensor, e: &ExpAffinePow) -> Tensor {
    let data = x.data().iter().zip(grad_out.data()).map(|(&v, &g)| g * e.derivative(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAPER_EXP: ExpAffinePow = ExpAffinePow { alpha: 10, beta: 1.0, delta: 1.0 };

    #[test]
    fn exp_affine_pow_closed_forms() {
        let e1 = std::f64::consts::E - 1.0;
        let white = e1.powi(10);
        assert!((PAPER_EXP.apply(1.0) - white).abs() < 1e-9 * white);
        assert!((white - 224.4).abs() < 0.1);
        assert_eq!(PAPER_EXP.apply(0.0), 0.0);
        let black = (1.0 - (-1.0f64).exp()).powi(10);
        assert!((PAPER_EXP.apply(-1.0) - black).abs() < 1e-15);
        assert!((black - 0.0102).abs() < 1e-4);
    }

    #[test]
    fn adaptive_ranges_partition_evenly_divisible_axes() {
        let cells: Vec<_> = (0..6).map(|i| adaptive_range(i, 12, 6)).collect();
        assert_eq!(cells, vec![(0, 2), (2, 4), (4, 6), (6, 8), (8, 10), (10, 12)]);
        assert_eq!(adaptive_range(1, 4, 6), (0, 2));
        assert_eq!(adaptive_range(0, 13, 6), (0, 3));
        assert_eq!(adaptive_range(5, 13, 6), (10, 13));
    }

    #[test]
    fn min_pool_isolates_a_saturated_patch() {
        let mut x = Tensor::zeros(&[1, 7, 7]);
        let v = PAPER_EXP.apply(1.0);
        for y in 2..5 {
            for c in 2..5 {
                x.set3(0, y, c, v);
            }
        }
        let out = pool2d(&x, &Pool { kernel: 3, stride: 1 }, Reduce::Min);
        assert_eq!(out.shape(), &[1, 5, 5]);
        // patch center (3,3) maps to output (2,2)
        for y in 0..5 {
            for c in 0..5 {
                let expect = if (y, c) == (2, 2) { v } else { 0.0 };
                assert_eq!(out.at3(0, y, c), expect);
            }
        }
    }

    #[test]
    fn adaptive_avg_identity_when_sizes_match() {
        let x = Tensor::new(vec![2, 3, 3], (0..18).map(|i| i as f64 * 0.37 - 2.0).collect()).unwrap();
        let out = adaptive_pool(&x, &Adaptive { output: [3, 3] }, Reduce::Avg);
        assert_eq!(out, x);
    }

    #[test]
    fn conv_matches_direct_definition() {
        let c = Conv2d { in_channels: 2, out_channels: 3, kernel: 3, stride: 2, padding: 1 };
        let x = Tensor::new(vec![2, 5, 5], (0..50).map(|i| ((i * 7) % 11) as f64 - 5.0).collect()).unwrap();
        let w = Tensor::new(vec![3, 2, 3, 3], (0..54).map(|i| ((i * 5) % 7) as f64 * 0.1 - 0.3).collect()).unwrap();
        let b = Tensor::from_vec(vec![0.5, -1.0, 0.25]);
        let out = conv2d(&x, &w, &b, &c);
        assert_eq!(out.shape(), &[3, 3, 3]);
        for o in 0..3 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut acc = b.data()[o];
                    for ch in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                    acc += w.data()[((o * 2 + ch) * 3 + ky) * 3 + kx] * x.at3(ch, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    assert!((out.at3(o, oy, ox) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn broadcast_add_repeats_single_channel() {
        let a = Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![1, 1, 2], vec![10.0, 20.0]).unwrap();
        assert_eq!(broadcast_binary(&a, &b, |x, y| x + y).data(), &[11.0, 22.0, 13.0, 24.0]);
        assert_eq!(broadcast_binary(&b, &a, |x, y| x - y).data(), &[9.0, 18.0, 7.0, 16.0]);
        assert_eq!(reduce_to(Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), &[1, 1, 2]).data(), &[4.0, 6.0]);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let big = NodeKind::ExpAffinePow(ExpAffinePow { alpha: 400, beta: 5.0, delta: 0.0 });
        let x = Tensor::full(&[1, 2, 2], 1.0);
        assert!(matches!(evaluate_node(&big, None, &[&x]), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn parameter_presence_is_checked() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(evaluate_node(&NodeKind::Relu, Some(&[]), &[&x]).is_err());
        let d = NodeKind::Dense(Dense { in_features: 2, out_features: 1 });
        assert!(evaluate_node(&d, None, &[&x]).is_err());
    }
}
