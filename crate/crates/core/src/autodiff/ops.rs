//! Forward definitions and backward rules of every recorded operation.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{CustomOp, Graph, Var};
use super::{shape_err, AutodiffError, Result, Tensor};
use crate::math;
use crate::refine::{self, Residuals};

const NORM_EPS: f64 = 1e-5;

pub(super) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Abs(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    },
    BiasAdd {
        input: Var,
        bias: Var,
    },
    ConcatChannels(Vec<Var>),
    UpsampleNearest {
        input: Var,
        factor: usize,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
    GatherPixels {
        input: Var,
        index: Vec<[usize; 3]>,
    },
    PackDescriptors {
        shape: Var,
        offset: Var,
        order: usize,
    },
    FourierSample {
        descriptors: Var,
        ts: Vec<f64>,
        order: usize,
    },
    Refine {
        coords: Var,
        field: Var,
        margin: f64,
        /// Per output coordinate: flat index into the field of the final lookup
        /// and `1 - tanh^2` there; `None` when no iteration ran.
        lookups: Vec<Option<(usize, f64)>>,
        /// Per point: fingerprint of the rounded positions visited.
        paths: Vec<u64>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

impl Op {
    pub fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Abs(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias.iter().copied());
                v
            }
            Op::Conv2d { input, kernel, .. } => vec![*input, *kernel],
            Op::BiasAdd { input, bias } => vec![*input, *bias],
            Op::ConcatChannels(parts) => parts.clone(),
            Op::UpsampleNearest { input, .. } | Op::MaxPool2 { input, .. } => vec![*input],
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::BceWithLogits { logits, .. } => vec![*logits],
            Op::GatherPixels { input, .. } => vec![*input],
            Op::PackDescriptors { shape, offset, .. } => vec![*shape, *offset],
            Op::FourierSample { descriptors, .. } => vec![*descriptors],
            Op::Refine { coords, field, .. } => vec![*coords, *field],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }

    /// Feeds the op's discrete choices (signs at kinks, pooling winners,
    /// rounded lookup cells) to `emit`. Two evaluations with the same choices
    /// lie on the same smooth piece of the recorded function.
    pub fn branches(&self, graph: &Graph, emit: &mut dyn FnMut(u64)) {
        let val = |v: Var| &graph.nodes[v.index].value;
        match self {
            Op::Relu(a) => val(*a).data().iter().for_each(|&x| emit((x > 0.0) as u64)),
            Op::Abs(a) => val(*a)
                .data()
                .iter()
                .for_each(|&x| emit(if x > 0.0 { 1 } else if x < 0.0 { 2 } else { 3 })),
            Op::MaxPool2 { argmax, .. } => argmax.iter().for_each(|&i| emit(i as u64)),
            Op::Refine { lookups, paths, .. } => {
                lookups
                    .iter()
                    .for_each(|l| emit(l.map_or(u64::MAX, |(flat, _)| flat as u64)));
                paths.iter().for_each(|&p| emit(p));
            }
            _ => {}
        }
    }

    /// Gradient contributions to the inputs that need them.
    pub fn backward(
        &self,
        graph: &Graph,
        out: &Tensor,
        grad: &Tensor,
        needs: &dyn Fn(Var) -> bool,
    ) -> Vec<(Var, Tensor)> {
        let val = |v: Var| &graph.nodes[v.index].value;
        let mut res = Vec::new();
        let g = grad.data();
        match self {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        res.push((v, grad.clone()));
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    res.push((*a, grad.clone()));
                }
                if needs(*b) {
                    res.push((*b, map(grad, |x| -x)));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    res.push((*a, zip_map(grad, val(*b), |g, y| g * y)));
                }
                if needs(*b) {
                    res.push((*b, zip_map(grad, val(*a), |g, x| g * x)));
                }
            }
            Op::Scale(a, k) => res.push((*a, map(grad, |x| x * k))),
            Op::Abs(a) => res.push((*a, zip_map(grad, val(*a), |g, x| g * sign(x)))),
            Op::Relu(a) => res.push((
                *a,
                zip_map(grad, val(*a), |g, x| if x > 0.0 { g } else { 0.0 }),
            )),
            Op::Sigmoid(a) => res.push((*a, zip_map(grad, out, |g, s| g * s * (1.0 - s)))),
            Op::Tanh(a) => res.push((*a, zip_map(grad, out, |g, t| g * (1.0 - t * t)))),
            Op::Sum(a) => res.push((*a, Tensor::full(val(*a).shape(), g[0]))),
            Op::Mean(a) => {
                let x = val(*a);
                res.push((*a, Tensor::full(x.shape(), g[0] / x.len() as f64)));
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = val(*input);
                let w = val(*weight);
                let (m, k) = (x.shape()[0], x.shape()[1]);
                let n = w.shape()[0];
                if needs(*input) {
                    let mut gx = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            let wrow = &w.data()[j * k..(j + 1) * k];
                            for (acc, wv) in gx[i * k..(i + 1) * k].iter_mut().zip(wrow) {
                                *acc += gij * wv;
                            }
                        }
                    }
                    res.push((*input, tensor(x.shape(), gx)));
                }
                if needs(*weight) {
                    let mut gw = vec![0.0; n * k];
                    for i in 0..m {
                        let xrow = &x.data()[i * k..(i + 1) * k];
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for (acc, xv) in gw[j * k..(j + 1) * k].iter_mut().zip(xrow) {
                                *acc += gij * xv;
                            }
                        }
                    }
                    res.push((*weight, tensor(w.shape(), gw)));
                }
                if let Some(b) = bias {
                    if needs(*b) {
                        let mut gb = vec![0.0; n];
                        for i in 0..m {
                            for j in 0..n {
                                gb[j] += g[i * n + j];
                            }
                        }
                        res.push((*b, Tensor::from_vec(gb)));
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            } => {
                let x = val(*input);
                let k = val(*kernel);
                let (gx, gk) = conv2d_backward(
                    x,
                    k,
                    grad,
                    *stride,
                    *padding,
                    needs(*input),
                    needs(*kernel),
                );
                if let Some(gx) = gx {
                    res.push((*input, gx));
                }
                if let Some(gk) = gk {
                    res.push((*kernel, gk));
                }
            }
            Op::BiasAdd { input, bias } => {
                if needs(*input) {
                    res.push((*input, grad.clone()));
                }
                if needs(*bias) {
                    let [b, c, h, w] = grad.shape().try_into().unwrap();
                    let plane = h * w;
                    let mut gb = vec![0.0; c];
                    for bi in 0..b {
                        for (ci, acc) in gb.iter_mut().enumerate() {
                            let start = (bi * c + ci) * plane;
                            *acc += g[start..start + plane].iter().sum::<f64>();
                        }
                    }
                    res.push((*bias, Tensor::from_vec(gb)));
                }
            }
            Op::ConcatChannels(parts) => {
                let [b, _, h, w] = grad.shape().try_into().unwrap();
                let plane = h * w;
                let total_c = grad.shape()[1];
                let mut offset = 0;
                for part in parts {
                    let pc = val(*part).shape()[1];
                    if needs(*part) {
                        let mut gp = Vec::with_capacity(b * pc * plane);
                        for bi in 0..b {
                            let start = (bi * total_c + offset) * plane;
                            gp.extend_from_slice(&g[start..start + pc * plane]);
                        }
                        res.push((*part, tensor(val(*part).shape(), gp)));
                    }
                    offset += pc;
                }
            }
            Op::UpsampleNearest { input, factor } => {
                let x = val(*input);
                let [b, c, h, w] = x.shape().try_into().unwrap();
                let (ho, wo) = (h * factor, w * factor);
                let mut gx = vec![0.0; x.len()];
                for bc in 0..b * c {
                    for oy in 0..ho {
                        let src = bc * h * w + (oy / factor) * w;
                        let row = &g[bc * ho * wo + oy * wo..bc * ho * wo + (oy + 1) * wo];
                        for (ox, gv) in row.iter().enumerate() {
                            gx[src + ox / factor] += gv;
                        }
                    }
                }
                res.push((*input, tensor(x.shape(), gx)));
            }
            Op::MaxPool2 { input, argmax } => {
                let x = val(*input);
                let mut gx = vec![0.0; x.len()];
                for (gv, &src) in g.iter().zip(argmax) {
                    gx[src] += gv;
                }
                res.push((*input, tensor(x.shape(), gx)));
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let x = val(*input);
                let gam = val(*gamma).data();
                let [b, c, h, w] = x.shape().try_into().unwrap();
                let plane = h * w;
                let m = (b * plane) as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let start = (bi * c + ci) * plane;
                        for i in start..start + plane {
                            sum_g[ci] += g[i];
                            sum_gx[ci] += g[i] * xhat[i];
                        }
                    }
                }
                if needs(*input) {
                    let mut gx = vec![0.0; x.len()];
                    for bi in 0..b {
                        for ci in 0..c {
                            let scale = gam[ci] * inv_std[ci] / m;
                            let start = (bi * c + ci) * plane;
                            for i in start..start + plane {
                                gx[i] = scale * (m * g[i] - sum_g[ci] - xhat[i] * sum_gx[ci]);
                            }
                        }
                    }
                    res.push((*input, tensor(x.shape(), gx)));
                }
                if needs(*gamma) {
                    res.push((*gamma, Tensor::from_vec(sum_gx)));
                }
                if needs(*beta) {
                    res.push((*beta, Tensor::from_vec(sum_g)));
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let z = val(*logits);
                let n = z.len() as f64;
                let gz = z
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&zi, &oi)| g[0] * (math::sigmoid(zi) - oi) / n)
                    .collect();
                res.push((*logits, tensor(z.shape(), gz)));
            }
            Op::GatherPixels { input, index } => {
                let x = val(*input);
                let [_, c, h, w] = x.shape().try_into().unwrap();
                let mut gx = vec![0.0; x.len()];
                for (p, &[bi, y, xx]) in index.iter().enumerate() {
                    for ci in 0..c {
                        gx[((bi * c + ci) * h + y) * w + xx] += g[p * c + ci];
                    }
                }
                res.push((*input, tensor(x.shape(), gx)));
            }
            Op::PackDescriptors {
                shape,
                offset,
                order,
            } => {
                let n = *order;
                let dim = 4 * n + 2;
                let rows = grad.shape()[0];
                if needs(*shape) {
                    let mut gs = vec![0.0; rows * 4 * n];
                    for p in 0..rows {
                        let src = &g[p * dim..(p + 1) * dim];
                        let dst = &mut gs[p * 4 * n..(p + 1) * 4 * n];
                        for (i, d) in dst.iter_mut().enumerate() {
                            *d = src[pack_slot(i, n)];
                        }
                    }
                    res.push((*shape, tensor(val(*shape).shape(), gs)));
                }
                if needs(*offset) {
                    let mut go = vec![0.0; rows * 2];
                    for p in 0..rows {
                        go[2 * p] = g[p * dim];
                        go[2 * p + 1] = g[p * dim + 2 * n + 1];
                    }
                    res.push((*offset, tensor(val(*offset).shape(), go)));
                }
            }
            Op::FourierSample {
                descriptors,
                ts,
                order,
            } => {
                let n = *order;
                let dim = 4 * n + 2;
                let s_count = ts.len();
                let table = harmonic_table(ts, n);
                let rows = val(*descriptors).shape()[0];
                let mut gd = vec![0.0; rows * dim];
                for p in 0..rows {
                    let gdp = &mut gd[p * dim..(p + 1) * dim];
                    for s in 0..s_count {
                        let gx = g[(p * s_count + s) * 2];
                        let gy = g[(p * s_count + s) * 2 + 1];
                        gdp[0] += gx;
                        gdp[2 * n + 1] += gy;
                        for k in 0..n {
                            let (sn, cs) = table[s * n + k];
                            gdp[1 + k] += gx * sn;
                            gdp[n + 1 + k] += gx * cs;
                            gdp[2 * n + 2 + k] += gy * sn;
                            gdp[3 * n + 2 + k] += gy * cs;
                        }
                    }
                }
                res.push((*descriptors, tensor(val(*descriptors).shape(), gd)));
            }
            Op::Refine {
                coords,
                field,
                margin,
                lookups,
                ..
            } => {
                if needs(*coords) {
                    // Only reachable without iterations: the output is the input.
                    let mut gc = vec![0.0; g.len()];
                    for (i, l) in lookups.iter().enumerate() {
                        if l.is_none() {
                            gc[i] = g[i];
                        }
                    }
                    res.push((*coords, tensor(val(*coords).shape(), gc)));
                }
                if needs(*field) {
                    let f = val(*field);
                    let mut gf = vec![0.0; f.len()];
                    for (i, l) in lookups.iter().enumerate() {
                        if let Some((flat, dtanh)) = *l {
                            gf[flat] += g[i] * margin * dtanh;
                        }
                    }
                    res.push((*field, tensor(f.shape(), gf)));
                }
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                for (v, gv) in inputs.iter().zip(op.backward(&values, out, grad)) {
                    if needs(*v) {
                        res.push((*v, gv));
                    }
                }
            }
        }
        res
    }
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("gradient shape matches its input")
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    tensor(t.shape(), t.data().iter().map(|&x| f(x)).collect())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    tensor(
        a.shape(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Position of shape-head channel `i` inside a packed descriptor row.
///
/// Shape rows hold `[a_1..a_N, b_1..b_N, c_1..c_N, d_1..d_N]`; packed rows
/// hold `[a_0..a_N, b_1..b_N, c_0..c_N, d_1..d_N]`.
#[inline]
fn pack_slot(i: usize, n: usize) -> usize {
    match i / n {
        0 | 1 => 1 + i,
        _ => 2 + i,
    }
}

/// `(sin, cos)` of `2 pi k t_s` for every sample `s` and harmonic `k = 1..=n`.
pub(crate) fn harmonic_table(ts: &[f64], n: usize) -> Vec<(f64, f64)> {
    let mut table = Vec::with_capacity(ts.len() * n);
    for &t in ts {
        for k in 1..=n {
            table.push(math::sin_cos(math::TAU * k as f64 * t));
        }
    }
    table
}

/// Output rows `o` with `0 <= o * stride + offset < len`, as a half-open range.
fn valid_range(offset: isize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let hi_incl = (len as isize - 1 - offset).div_euclid(s);
    let hi = (hi_incl + 1).clamp(0, out_len as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

fn conv2d_forward(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [b, ci, h, w] = x.shape().try_into().unwrap();
    let [co, _, kh, kw] = k.shape().try_into().unwrap();
    let (ho, wo) = (conv_out_len(h, kh, stride, pad), conv_out_len(w, kw, stride, pad));
    let xd = x.data();
    let kd = k.data();
    let mut out = vec![0.0; b * co * ho * wo];
    for bi in 0..b {
        for o in 0..co {
            let out_plane = &mut out[(bi * co + o) * ho * wo..(bi * co + o + 1) * ho * wo];
            for c in 0..ci {
                let in_plane = &xd[(bi * ci + c) * h * w..(bi * ci + c + 1) * h * w];
                for ky in 0..kh {
                    let (y0, y1) = valid_range(ky as isize - pad as isize, stride, h, ho);
                    for kx in 0..kw {
                        let wv = kd[((o * ci + c) * kh + ky) * kw + kx];
                        let off = kx as isize - pad as isize;
                        let (x0, x1) = valid_range(off, stride, w, wo);
                        for oy in y0..y1 {
                            let iy = oy * stride + ky - pad;
                            let in_row = &in_plane[iy * w..(iy + 1) * w];
                            let out_row = &mut out_plane[oy * wo..(oy + 1) * wo];
                            if stride == 1 {
                                let ix0 = (x0 as isize + off) as usize;
                                for (ov, iv) in out_row[x0..x1]
                                    .iter_mut()
                                    .zip(&in_row[ix0..ix0 + (x1 - x0)])
                                {
                                    *ov += wv * iv;
                                }
                            } else {
                                for ox in x0..x1 {
                                    let ix = (ox * stride) as isize + off;
                                    out_row[ox] += wv * in_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    tensor(&[b, co, ho, wo], out)
}

fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    grad: &Tensor,
    stride: usize,
    pad: usize,
    want_x: bool,
    want_k: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let [b, ci, h, w] = x.shape().try_into().unwrap();
    let [co, _, kh, kw] = k.shape().try_into().unwrap();
    let [_, _, ho, wo] = grad.shape().try_into().unwrap();
    let xd = x.data();
    let kd = k.data();
    let g = grad.data();
    let mut gx = if want_x { vec![0.0; x.len()] } else { Vec::new() };
    let mut gk = if want_k { vec![0.0; k.len()] } else { Vec::new() };
    for bi in 0..b {
        for o in 0..co {
            let g_plane = &g[(bi * co + o) * ho * wo..(bi * co + o + 1) * ho * wo];
            for c in 0..ci {
                let base = (bi * ci + c) * h * w;
                for ky in 0..kh {
                    let (y0, y1) = valid_range(ky as isize - pad as isize, stride, h, ho);
                    for kx in 0..kw {
                        let kidx = ((o * ci + c) * kh + ky) * kw + kx;
                        let wv = kd[kidx];
                        let off = kx as isize - pad as isize;
                        let (x0, x1) = valid_range(off, stride, w, wo);
                        let mut acc = 0.0;
                        for oy in y0..y1 {
                            let iy = oy * stride + ky - pad;
                            let g_row = &g_plane[oy * wo..(oy + 1) * wo];
                            for ox in x0..x1 {
                                let ix = ((ox * stride) as isize + off) as usize;
                                let gv = g_row[ox];
                                if want_x {
                                    gx[base + iy * w + ix] += wv * gv;
                                }
                                if want_k {
                                    acc += gv * xd[base + iy * w + ix];
                                }
                            }
                        }
                        if want_k {
                            gk[kidx] += acc;
                        }
                    }
                }
            }
        }
    }
    (
        want_x.then(|| tensor(x.shape(), gx)),
        want_k.then(|| tensor(k.shape(), gk)),
    )
}

/// Flat view of one `[2, H, W]` slice of a batched residual tensor.
struct FieldView<'a> {
    height: usize,
    width: usize,
    data: &'a [f64],
}

impl Residuals for FieldView<'_> {
    fn height(&self) -> usize {
        self.height
    }

    fn width(&self) -> usize {
        self.width
    }

    fn residual(&self, ix: usize, iy: usize) -> (f64, f64) {
        let plane = self.height * self.width;
        let i = iy * self.width + ix;
        (self.data[i], self.data[plane + i])
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Graph {
    fn unary(&mut self, a: Var, op: fn(Var) -> Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = map(self.check(a)?, f);
        Ok(self.push(out, op(a)))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: fn(Var, Var) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (x, y) = (self.check(a)?, self.check(b)?);
        same_shape(name, x, y)?;
        let out = zip_map(x, y, f);
        Ok(self.push(out, op(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        if !k.is_finite() {
            return Err(AutodiffError::NonFinite("scale factor"));
        }
        let out = map(self.check(a)?, |x| x * k);
        Ok(self.push(out, Op::Scale(a, k)))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs, math::abs)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid, math::sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh, math::tanh)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.check(a)?.data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(a)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.check(a)?;
        let m = x.data().iter().sum::<f64>() / x.len() as f64;
        Ok(self.push(Tensor::scalar(m), Op::Mean(a)))
    }

    /// `x W^T + b` for `x: [M, K]`, `W: [N, K]`, `b: [N]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.check(input)?;
        let w = self.check(weight)?;
        let (&[m, k], &[n, k2]) = (x.shape(), w.shape()) else {
            return Err(shape_err(
                "linear",
                format!("expected [M, K] x [N, K], got {:?} x {:?}", x.shape(), w.shape()),
            ));
        };
        if k != k2 {
            return Err(shape_err("linear", format!("inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let xrow = &x.data()[i * k..(i + 1) * k];
            for j in 0..n {
                let wrow = &w.data()[j * k..(j + 1) * k];
                out[i * n + j] = xrow.iter().zip(wrow).map(|(a, b)| a * b).sum();
            }
        }
        if let Some(b) = bias {
            let bv = self.check(b)?;
            if bv.shape() != [n] {
                return Err(shape_err("linear", format!("bias {:?}, want [{n}]", bv.shape())));
            }
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] += bv.data()[j];
                }
            }
        }
        Ok(self.push(
            tensor(&[m, n], out),
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// 2-D cross-correlation of `[B, Cin, H, W]` with `[Cout, Cin, kh, kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let x = self.check(input)?;
        let k = self.check(kernel)?;
        let [_, ci, h, w] = x.dims4("conv2d")?;
        let [_, kci, kh, kw] = k.dims4("conv2d")?;
        if ci != kci {
            return Err(shape_err(
                "conv2d",
                format!("input has {ci} channels, kernel expects {kci}"),
            ));
        }
        if stride == 0 {
            return Err(shape_err("conv2d", "stride must be positive".into()));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(shape_err(
                "conv2d",
                format!("padded input {}x{} smaller than kernel {kh}x{kw}", h + 2 * padding, w + 2 * padding),
            ));
        }
        let out = conv2d_forward(x, k, stride, padding);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            },
        ))
    }

    /// Adds a per-channel bias `[C]` to `[B, C, H, W]`.
    pub fn bias_add(&mut self, input: Var, bias: Var) -> Result<Var> {
        let x = self.check(input)?;
        let bv = self.check(bias)?;
        let [_, c, h, w] = x.dims4("bias_add")?;
        if bv.shape() != [c] {
            return Err(shape_err("bias_add", format!("bias {:?}, want [{c}]", bv.shape())));
        }
        let plane = h * w;
        let mut out = x.data().to_vec();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let bias_v = bv.data()[i % c];
            chunk.iter_mut().for_each(|v| *v += bias_v);
        }
        let out = tensor(x.shape(), out);
        Ok(self.push(out, Op::BiasAdd { input, bias }))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat_channels", "no inputs".into()))?;
        let [b, _, h, w] = self.check(first)?.dims4("concat_channels")?;
        let mut total_c = 0;
        for &p in parts {
            let [pb, pc, ph, pw] = self.check(p)?.dims4("concat_channels")?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(shape_err(
                    "concat_channels",
                    format!("[{pb}, _, {ph}, {pw}] vs [{b}, _, {h}, {w}]"),
                ));
            }
            total_c += pc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(b * total_c * plane);
        for bi in 0..b {
            for &p in parts {
                let t = self.value(p);
                let pc = t.shape()[1];
                out.extend_from_slice(&t.data()[bi * pc * plane..(bi + 1) * pc * plane]);
            }
        }
        Ok(self.push(
            tensor(&[b, total_c, h, w], out),
            Op::ConcatChannels(parts.to_vec()),
        ))
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(shape_err("upsample_nearest", "factor must be positive".into()));
        }
        let x = self.check(input)?;
        let [b, c, h, w] = x.dims4("upsample_nearest")?;
        let (ho, wo) = (h * factor, w * factor);
        let mut out = Vec::with_capacity(b * c * ho * wo);
        for bc in 0..b * c {
            for oy in 0..ho {
                let row = &x.data()[bc * h * w + (oy / factor) * w..][..w];
                out.extend((0..wo).map(|ox| row[ox / factor]));
            }
        }
        Ok(self.push(
            tensor(&[b, c, ho, wo], out),
            Op::UpsampleNearest { input, factor },
        ))
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let x = self.check(input)?;
        let [b, c, h, w] = x.dims4("maxpool2d")?;
        if h < 2 || w < 2 {
            return Err(shape_err("maxpool2d", format!("input {h}x{w} smaller than 2x2")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(b * c * ho * wo);
        let mut argmax = Vec::with_capacity(b * c * ho * wo);
        let xd = x.data();
        for bc in 0..b * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = bc * h * w + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = bc * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.push(
            tensor(&[b, c, ho, wo], out),
            Op::MaxPool2 { input, argmax },
        ))
    }

    /// Per-channel normalization with statistics of the current batch,
    /// followed by a learned scale `gamma` and shift `beta` (both `[C]`).
    pub fn batch_stats_normalize(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var> {
        let x = self.check(input)?;
        let [b, c, h, w] = x.dims4("batch_stats_normalize")?;
        for p in [gamma, beta] {
            let s = self.check(p)?.shape();
            if s != [c] {
                return Err(shape_err(
                    "batch_stats_normalize",
                    format!("scale/shift {s:?}, want [{c}]"),
                ));
            }
        }
        let plane = h * w;
        let m = (b * plane) as f64;
        let xd = x.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for bi in 0..b {
            for ci in 0..c {
                let start = (bi * c + ci) * plane;
                mean[ci] += xd[start..start + plane].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for bi in 0..b {
            for ci in 0..c {
                let start = (bi * c + ci) * plane;
                var[ci] += xd[start..start + plane]
                    .iter()
                    .map(|v| (v - mean[ci]) * (v - mean[ci]))
                    .sum::<f64>();
            }
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / math::sqrt(v / m + NORM_EPS))
            .collect();
        let gam = self.value(gamma).data();
        let bet = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let start = (bi * c + ci) * plane;
                for i in start..start + plane {
                    xhat[i] = (xd[i] - mean[ci]) * inv_std[ci];
                    out[i] = gam[ci] * xhat[i] + bet[ci];
                }
            }
        }
        let out = tensor(x.shape(), out);
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 `targets`,
    /// evaluated in the stable logit form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let z = self.check(logits)?;
        if z.len() != targets.len() {
            return Err(shape_err(
                "bce_with_logits",
                format!("{} logits vs {} targets", z.len(), targets.len()),
            ));
        }
        if targets.iter().any(|&o| o != 0.0 && o != 1.0) {
            return Err(AutodiffError::Invalid("detection targets must be 0 or 1".into()));
        }
        let total: f64 = z
            .data()
            .iter()
            .zip(targets)
            .map(|(&zi, &oi)| zi.max(0.0) - zi * oi + math::ln_1p(math::exp(-math::abs(zi))))
            .sum();
        let loss = total / z.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Selects pixels `(batch, y, x)` of a `[B, C, H, W]` map into a `[P, C]` matrix.
    pub fn gather_pixels(&mut self, input: Var, index: &[[usize; 3]]) -> Result<Var> {
        let x = self.check(input)?;
        let [b, c, h, w] = x.dims4("gather_pixels")?;
        if index.is_empty() {
            return Err(shape_err("gather_pixels", "empty index list".into()));
        }
        let mut out = Vec::with_capacity(index.len() * c);
        for &[bi, y, xx] in index {
            if bi >= b || y >= h || xx >= w {
                return Err(shape_err(
                    "gather_pixels",
                    format!("index ({bi}, {y}, {xx}) outside [{b}, {c}, {h}, {w}]"),
                ));
            }
            out.extend((0..c).map(|ci| x.data()[((bi * c + ci) * h + y) * w + xx]));
        }
        Ok(self.push(
            tensor(&[index.len(), c], out),
            Op::GatherPixels {
                input,
                index: index.to_vec(),
            },
        ))
    }

    /// Interleaves shape rows `[P, 4N]` and absolute offsets `[P, 2]` into
    /// flat descriptor rows `[P, 4N + 2]`.
    pub fn pack_descriptors(&mut self, shape: Var, offset: Var, order: usize) -> Result<Var> {
        let s = self.check(shape)?;
        let o = self.check(offset)?;
        let (&[rows, sw], &[orows, 2]) = (s.shape(), o.shape()) else {
            return Err(shape_err(
                "pack_descriptors",
                format!("expected [P, 4N] and [P, 2], got {:?}, {:?}", s.shape(), o.shape()),
            ));
        };
        if order == 0 || sw != 4 * order || rows != orows {
            return Err(shape_err(
                "pack_descriptors",
                format!("order {order} with shape {:?} and offsets {:?}", s.shape(), o.shape()),
            ));
        }
        let dim = 4 * order + 2;
        let mut out = vec![0.0; rows * dim];
        for p in 0..rows {
            let row = &mut out[p * dim..(p + 1) * dim];
            row[0] = o.data()[2 * p];
            row[2 * order + 1] = o.data()[2 * p + 1];
            for i in 0..4 * order {
                row[pack_slot(i, order)] = s.data()[p * 4 * order + i];
            }
        }
        Ok(self.push(
            tensor(&[rows, dim], out),
            Op::PackDescriptors {
                shape,
                offset,
                order,
            },
        ))
    }

    /// Samples descriptor rows `[P, 4N + 2]` at locations `ts`, giving `[P, S, 2]`.
    pub fn fourier_sample(&mut self, descriptors: Var, ts: &[f64], order: usize) -> Result<Var> {
        let d = self.check(descriptors)?;
        let &[rows, dim] = d.shape() else {
            return Err(shape_err("fourier_sample", format!("expected [P, 4N+2], got {:?}", d.shape())));
        };
        if order == 0 || dim != 4 * order + 2 {
            return Err(shape_err("fourier_sample", format!("order {order} vs row length {dim}")));
        }
        if ts.is_empty() {
            return Err(AutodiffError::Invalid("no sample locations".into()));
        }
        let n = order;
        let table = harmonic_table(ts, n);
        let mut out = Vec::with_capacity(rows * ts.len() * 2);
        for p in 0..rows {
            let row = &d.data()[p * dim..(p + 1) * dim];
            for s in 0..ts.len() {
                let (mut x, mut y) = (row[0], row[2 * n + 1]);
                for k in 0..n {
                    let (sn, cs) = table[s * n + k];
                    x += row[1 + k] * sn + row[n + 1 + k] * cs;
                    y += row[2 * n + 2 + k] * sn + row[3 * n + 2 + k] * cs;
                }
                out.push(x);
                out.push(y);
            }
        }
        Ok(self.push(
            tensor(&[rows, ts.len(), 2], out),
            Op::FourierSample {
                descriptors,
                ts: ts.to_vec(),
                order,
            },
        ))
    }

    /// Local refinement of contour points `[P, S, 2]` through a residual map
    /// `[B, 2, H, W]`; row `p` reads batch image `batch[p]`.
    ///
    /// With `iterations >= 1` the gradient reaches only the residual map:
    /// refined points start from rounded coordinates. With zero iterations
    /// the op is the identity.
    pub fn refine_points(
        &mut self,
        coords: Var,
        field: Var,
        batch: &[usize],
        iterations: usize,
        margin: f64,
    ) -> Result<Var> {
        let c = self.check(coords)?;
        let f = self.check(field)?;
        let &[rows, samples, 2] = c.shape() else {
            return Err(shape_err("refine_points", format!("coords {:?}, want [P, S, 2]", c.shape())));
        };
        let [b, fc, h, w] = f.dims4("refine_points")?;
        if fc != 2 || batch.len() != rows || batch.iter().any(|&bi| bi >= b) {
            return Err(shape_err(
                "refine_points",
                format!("field {:?} with {} batch indices for {rows} rows", f.shape(), batch.len()),
            ));
        }
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(AutodiffError::Invalid("refinement margin must be positive".into()));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(c.len());
        let mut lookups = Vec::with_capacity(c.len());
        let mut paths = Vec::with_capacity(rows * samples);
        for p in 0..rows {
            let base = batch[p] * 2 * plane;
            let view = FieldView {
                height: h,
                width: w,
                data: &f.data()[base..base + 2 * plane],
            };
            for s in 0..samples {
                let i = (p * samples + s) * 2;
                let step = refine::refine_traced(c.data()[i], c.data()[i + 1], &view, iterations, margin);
                out.push(step.x);
                out.push(step.y);
                paths.push(step.path);
                match step.last {
                    Some(l) => {
                        let at = base + l.iy * w + l.ix;
                        lookups.push(Some((at, 1.0 - l.tanh.0 * l.tanh.0)));
                        lookups.push(Some((at + plane, 1.0 - l.tanh.1 * l.tanh.1)));
                    }
                    None => {
                        lookups.push(None);
                        lookups.push(None);
                    }
                }
            }
        }
        let out = tensor(c.shape(), out);
        Ok(self.push(
            out,
            Op::Refine {
                coords,
                field,
                margin,
                lookups,
                paths,
            },
        ))
    }
}
