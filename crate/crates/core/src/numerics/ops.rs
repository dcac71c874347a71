//! Forward kernels and vector-Jacobian products for every primitive.

use std::sync::Arc;

use super::real::gemm;
use super::tensor::numel;
use super::{NumericsError, Real, Tensor};

/// A differentiable primitive together with its attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    /// Elementwise `a / b`.
    Div,
    Scale(f64),
    /// `x + b` with `b` (length `shape[axis]`) broadcast along every other axis.
    AddBroadcast {
        axis: usize,
    },
    /// `x * s` with `s` broadcast like [`Primitive::AddBroadcast`].
    MulBroadcast {
        axis: usize,
    },
    /// (m×k)·(k×n).
    MatMul,
    /// `x·wᵀ (+ b)` for x (n×in), w (out×in), optional b (out).
    Linear,
    /// Single-image convolution: x (C×H×W), w (O×C×k×k), optional b (O).
    Conv2d {
        stride: usize,
        padding: usize,
    },
    /// Nearest-neighbour ×2 upsampling of (C×H×W).
    Upsample2,
    /// Softmax along the last axis.
    Softmax,
    /// Zero-mean unit-variance normalisation along the last axis, no affine.
    LayerNorm {
        eps: f64,
    },
    Relu,
    /// tanh approximation of GELU.
    Gelu,
    Sigmoid,
    Mean,
    Sum,
    Reshape {
        shape: Vec<usize>,
    },
    /// 2-D transpose.
    Transpose,
    /// Token grid (H·W × C) to window-major rows after a cyclic shift.
    WindowPartition {
        grid_h: usize,
        grid_w: usize,
        window: usize,
        shift: usize,
    },
    /// Inverse of [`Primitive::WindowPartition`] with identical attributes.
    WindowMerge {
        grid_h: usize,
        grid_w: usize,
        window: usize,
        shift: usize,
    },
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
        end: usize,
    },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::Scale(_) => "scale",
            Primitive::AddBroadcast { .. } => "add_broadcast",
            Primitive::MulBroadcast { .. } => "mul_broadcast",
            Primitive::MatMul => "matmul",
            Primitive::Linear => "linear",
            Primitive::Conv2d { .. } => "conv2d",
            Primitive::Upsample2 => "upsample2",
            Primitive::Softmax => "softmax",
            Primitive::LayerNorm { .. } => "layer_norm",
            Primitive::Relu => "relu",
            Primitive::Gelu => "gelu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Mean => "mean",
            Primitive::Sum => "sum",
            Primitive::Reshape { .. } => "reshape",
            Primitive::Transpose => "transpose",
            Primitive::WindowPartition { .. } => "window_partition",
            Primitive::WindowMerge { .. } => "window_merge",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
        }
    }

    /// Builds a primitive from its string id and a JSON attribute object.
    pub fn from_name(name: &str, attrs: &serde_json::Value) -> Result<Self, NumericsError> {
        let get = |key: &str| -> Result<usize, NumericsError> {
            attrs
                .get(key)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| NumericsError::InvalidArgument(format!("{name}: missing attribute `{key}`")))
        };
        let get_or =
            |key: &str, default: usize| attrs.get(key).and_then(|v| v.as_u64()).map_or(default, |v| v as usize);
        Ok(match name {
            "add" => Primitive::Add,
            "sub" => Primitive::Sub,
            "mul" => Primitive::Mul,
            "div" => Primitive::Div,
            "scale" => Primitive::Scale(
                attrs
                    .get("factor")
                    .and_then(|v| v.as_f64())
                    .ok_or_else(|| NumericsError::InvalidArgument("scale: missing attribute `factor`".into()))?,
            ),
            "add_broadcast" => Primitive::AddBroadcast { axis: get("axis")? },
            "mul_broadcast" => Primitive::MulBroadcast { axis: get("axis")? },
            "matmul" => Primitive::MatMul,
            "linear" => Primitive::Linear,
            "conv2d" => Primitive::Conv2d { stride: get_or("stride", 1), padding: get_or("padding", 0) },
            "upsample2" => Primitive::Upsample2,
            "softmax" => Primitive::Softmax,
            "layer_norm" => Primitive::LayerNorm { eps: attrs.get("eps").and_then(|v| v.as_f64()).unwrap_or(1e-5) },
            "relu" => Primitive::Relu,
            "gelu" => Primitive::Gelu,
            "sigmoid" => Primitive::Sigmoid,
            "mean" => Primitive::Mean,
            "sum" => Primitive::Sum,
            "reshape" => {
                let shape = attrs
                    .get("shape")
                    .and_then(|v| v.as_array())
                    .and_then(|a| a.iter().map(|d| d.as_u64().map(|d| d as usize)).collect::<Option<Vec<_>>>())
                    .ok_or_else(|| NumericsError::InvalidArgument("reshape: missing attribute `shape`".into()))?;
                Primitive::Reshape { shape }
            }
            "transpose" => Primitive::Transpose,
            "window_partition" | "window_merge" => {
                let (grid_h, grid_w, window, shift) =
                    (get("grid_h")?, get("grid_w")?, get("window")?, get_or("shift", 0));
                if name == "window_partition" {
                    Primitive::WindowPartition { grid_h, grid_w, window, shift }
                } else {
                    Primitive::WindowMerge { grid_h, grid_w, window, shift }
                }
            }
            "concat" => Primitive::Concat { axis: get("axis")? },
            "slice" => Primitive::Slice { axis: get("axis")?, start: get("start")?, end: get("end")? },
            other => return Err(NumericsError::UnknownPrimitive(other.to_string())),
        })
    }
}

/// Row gather index for a shifted window partition of an `h × w` token grid.
///
/// Output row `r` takes input row `index[r]`; windows are laid out row-major
/// and tokens inside a window are row-major too.
pub fn window_partition_index(h: usize, w: usize, window: usize, shift: usize) -> Vec<usize> {
    let (nwh, nww) = (h / window, w / window);
    let mut index = Vec::with_capacity(h * w);
    for wh in 0..nwh {
        for ww in 0..nww {
            for i in 0..window {
                for j in 0..window {
                    let r = (wh * window + i + shift) % h;
                    let c = (ww * window + j + shift) % w;
                    index.push(r * w + c);
                }
            }
        }
    }
    index
}

fn invert(index: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; index.len()];
    for (dst, &src) in index.iter().enumerate() {
        inv[src] = dst;
    }
    inv
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn mismatch(op: &'static str, detail: String) -> NumericsError {
    NumericsError::ShapeMismatch { op, detail }
}

fn expect_arity(p: &Primitive, inputs: usize, allowed: &[usize]) -> Result<(), NumericsError> {
    if allowed.contains(&inputs) {
        Ok(())
    } else {
        Err(NumericsError::InvalidArgument(format!("{} takes {allowed:?} inputs, got {inputs}", p.name())))
    }
}

fn expect_rank<R: Real>(op: &'static str, t: &Tensor<R>, rank: usize) -> Result<(), NumericsError> {
    if t.shape().len() == rank {
        Ok(())
    } else {
        Err(mismatch(op, format!("expected rank {rank}, got shape {:?}", t.shape())))
    }
}

fn window_index(p: &Primitive, x_shape: &[usize]) -> Result<Arc<Vec<usize>>, NumericsError> {
    let (h, w, window, shift, merge) = match *p {
        Primitive::WindowPartition { grid_h, grid_w, window, shift } => (grid_h, grid_w, window, shift, false),
        Primitive::WindowMerge { grid_h, grid_w, window, shift } => (grid_h, grid_w, window, shift, true),
        _ => unreachable!(),
    };
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(mismatch(p.name(), format!("grid {h}x{w} not divisible by window {window}")));
    }
    if x_shape.len() != 2 || x_shape[0] != h * w {
        return Err(mismatch(p.name(), format!("expected ({}×C) tokens, got {x_shape:?}", h * w)));
    }
    let idx = window_partition_index(h, w, window, shift);
    Ok(Arc::new(if merge { invert(&idx) } else { idx }))
}

fn im2col<R: Real>(
    x: &[R],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<R>, usize, usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut cols = vec![R::zero(); c * k * k * ho * wo];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ci * k + ki) * k + kj) * ho * wo;
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = ci * h * w + ih as usize * w;
                    let dst = row + oh * wo;
                    for ow in 0..wo {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            cols[dst + ow] = x[src + iw as usize];
                        }
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

#[allow(clippy::too_many_arguments)]
fn col2im<R: Real>(
    cols: &[R],
    gx: &mut [R],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ci * k + ki) * k + kj) * ho * wo;
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst = ci * h * w + ih as usize * w;
                    let src = row + oh * wo;
                    for ow in 0..wo {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            gx[dst + iw as usize] += cols[src + ow];
                        }
                    }
                }
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn same_shape<R: Real>(op: &'static str, a: &Tensor<R>, b: &Tensor<R>) -> Result<(), NumericsError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(mismatch(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn elementwise<R: Real>(a: &Tensor<R>, b: &Tensor<R>, f: impl Fn(R, R) -> R) -> Tensor<R> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

fn map<R: Real>(a: &Tensor<R>, f: impl Fn(R) -> R) -> Tensor<R> {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect()).expect("shape preserved")
}

/// Evaluates a primitive on concrete inputs.
pub fn forward<R: Real>(p: &Primitive, xs: &[&Tensor<R>]) -> Result<Tensor<R>, NumericsError> {
    use Primitive::*;
    let unary = [1];
    let binary = [2];
    match p {
        Add | Sub | Mul | Div => {
            expect_arity(p, xs.len(), &binary)?;
            same_shape(p.name(), xs[0], xs[1])?;
            Ok(match p {
                Add => elementwise(xs[0], xs[1], |a, b| a + b),
                Sub => elementwise(xs[0], xs[1], |a, b| a - b),
                Div => elementwise(xs[0], xs[1], |a, b| a / b),
                _ => elementwise(xs[0], xs[1], |a, b| a * b),
            })
        }
        Scale(c) => {
            expect_arity(p, xs.len(), &unary)?;
            let c = R::of(*c);
            Ok(map(xs[0], |a| a * c))
        }
        AddBroadcast { axis } | MulBroadcast { axis } => {
            expect_arity(p, xs.len(), &binary)?;
            let (x, b) = (xs[0], xs[1]);
            if *axis >= x.shape().len() || b.len() != x.shape()[*axis] {
                return Err(mismatch(p.name(), format!("{:?} with {:?} on axis {axis}", x.shape(), b.shape())));
            }
            let (outer, d, inner) = split_axis(x.shape(), *axis);
            let mut out = x.data().to_vec();
            let add = matches!(p, AddBroadcast { .. });
            for o in 0..outer {
                for (j, &bv) in b.data().iter().enumerate() {
                    let base = (o * d + j) * inner;
                    for v in &mut out[base..base + inner] {
                        if add {
                            *v += bv
                        } else {
                            *v *= bv
                        }
                    }
                }
            }
            Tensor::new(x.shape().to_vec(), out)
        }
        MatMul => {
            expect_arity(p, xs.len(), &binary)?;
            expect_rank("matmul", xs[0], 2)?;
            expect_rank("matmul", xs[1], 2)?;
            let (m, k) = (xs[0].shape()[0], xs[0].shape()[1]);
            let (k2, n) = (xs[1].shape()[0], xs[1].shape()[1]);
            if k != k2 {
                return Err(mismatch("matmul", format!("{:?} x {:?}", xs[0].shape(), xs[1].shape())));
            }
            let mut out = vec![R::zero(); m * n];
            gemm(false, false, m, k, n, xs[0].data(), xs[1].data(), &mut out, false);
            Tensor::new(vec![m, n], out)
        }
        Linear => {
            expect_arity(p, xs.len(), &[2, 3])?;
            expect_rank("linear", xs[0], 2)?;
            expect_rank("linear", xs[1], 2)?;
            let (n, din) = (xs[0].shape()[0], xs[0].shape()[1]);
            let (dout, din2) = (xs[1].shape()[0], xs[1].shape()[1]);
            if din != din2 || xs.get(2).is_some_and(|b| b.len() != dout) {
                return Err(mismatch("linear", format!("x {:?}, w {:?}", xs[0].shape(), xs[1].shape())));
            }
            let mut out = vec![R::zero(); n * dout];
            if let Some(b) = xs.get(2) {
                for row in out.chunks_mut(dout) {
                    row.copy_from_slice(b.data());
                }
            }
            gemm(false, true, n, din, dout, xs[0].data(), xs[1].data(), &mut out, xs.len() == 3);
            Tensor::new(vec![n, dout], out)
        }
        Conv2d { stride, padding } => {
            expect_arity(p, xs.len(), &[2, 3])?;
            expect_rank("conv2d", xs[0], 3)?;
            expect_rank("conv2d", xs[1], 4)?;
            let (c, h, w) = (xs[0].shape()[0], xs[0].shape()[1], xs[0].shape()[2]);
            let ws = xs[1].shape();
            let (o, k) = (ws[0], ws[2]);
            if ws[1] != c || ws[3] != k || *stride == 0 || h + 2 * padding < k || w + 2 * padding < k {
                return Err(mismatch("conv2d", format!("x {:?}, w {ws:?}", xs[0].shape())));
            }
            if xs.get(2).is_some_and(|b| b.len() != o) {
                return Err(mismatch("conv2d", "bias length".into()));
            }
            let (cols, ho, wo) = im2col(xs[0].data(), c, h, w, k, *stride, *padding);
            let mut out = vec![R::zero(); o * ho * wo];
            if let Some(b) = xs.get(2) {
                for (row, &bv) in out.chunks_mut(ho * wo).zip(b.data()) {
                    row.iter_mut().for_each(|v| *v = bv);
                }
            }
            gemm(false, false, o, c * k * k, ho * wo, xs[1].data(), &cols, &mut out, xs.len() == 3);
            Tensor::new(vec![o, ho, wo], out)
        }
        Upsample2 => {
            expect_arity(p, xs.len(), &unary)?;
            expect_rank("upsample2", xs[0], 3)?;
            let (c, h, w) = (xs[0].shape()[0], xs[0].shape()[1], xs[0].shape()[2]);
            let x = xs[0].data();
            let mut out = vec![R::zero(); c * 4 * h * w];
            for ci in 0..c {
                for i in 0..2 * h {
                    for j in 0..2 * w {
                        out[(ci * 2 * h + i) * 2 * w + j] = x[(ci * h + i / 2) * w + j / 2];
                    }
                }
            }
            Tensor::new(vec![c, 2 * h, 2 * w], out)
        }
        Softmax => {
            expect_arity(p, xs.len(), &unary)?;
            let d = *xs[0].shape().last().unwrap();
            let mut out = xs[0].data().to_vec();
            for row in out.chunks_mut(d) {
                let max = row.iter().fold(R::neg_infinity(), |m, &v| m.max(v));
                let mut total = R::zero();
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                row.iter_mut().for_each(|v| *v = *v / total);
            }
            Tensor::new(xs[0].shape().to_vec(), out)
        }
        LayerNorm { eps } => {
            expect_arity(p, xs.len(), &unary)?;
            let d = *xs[0].shape().last().unwrap();
            let mut out = xs[0].data().to_vec();
            let eps = R::of(*eps);
            let nd = R::of(d as f64);
            for row in out.chunks_mut(d) {
                let mean = row.iter().copied().sum::<R>() / nd;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / nd;
                let rstd = R::one() / (var + eps).sqrt();
                row.iter_mut().for_each(|v| *v = (*v - mean) * rstd);
            }
            Tensor::new(xs[0].shape().to_vec(), out)
        }
        Relu => {
            expect_arity(p, xs.len(), &unary)?;
            Ok(map(xs[0], |v| if v > R::zero() { v } else { R::zero() }))
        }
        Gelu => {
            expect_arity(p, xs.len(), &unary)?;
            let (c, a, half) = (R::of(GELU_C), R::of(GELU_A), R::of(0.5));
            Ok(map(xs[0], |x| half * x * (R::one() + (c * (x + a * x * x * x)).tanh())))
        }
        Sigmoid => {
            expect_arity(p, xs.len(), &unary)?;
            Ok(map(xs[0], |x| R::one() / (R::one() + (-x).exp())))
        }
        Mean | Sum => {
            expect_arity(p, xs.len(), &unary)?;
            let total: R = xs[0].data().iter().copied().sum();
            let v = if matches!(p, Mean) { total / R::of(xs[0].len() as f64) } else { total };
            Ok(Tensor::scalar(v))
        }
        Reshape { shape } => {
            expect_arity(p, xs.len(), &unary)?;
            xs[0].clone().reshaped(shape)
        }
        Transpose => {
            expect_arity(p, xs.len(), &unary)?;
            expect_rank("transpose", xs[0], 2)?;
            let (m, n) = (xs[0].shape()[0], xs[0].shape()[1]);
            let x = xs[0].data();
            let mut out = vec![R::zero(); m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = x[i * n + j];
                }
            }
            Tensor::new(vec![n, m], out)
        }
        WindowPartition { .. } | WindowMerge { .. } => {
            expect_arity(p, xs.len(), &unary)?;
            let index = window_index(p, xs[0].shape())?;
            let c = xs[0].shape()[1];
            let x = xs[0].data();
            let mut out = Vec::with_capacity(x.len());
            for &src in index.iter() {
                out.extend_from_slice(&x[src * c..(src + 1) * c]);
            }
            Tensor::new(xs[0].shape().to_vec(), out)
        }
        Concat { axis } => {
            if xs.is_empty() {
                return Err(NumericsError::InvalidArgument("concat of zero tensors".into()));
            }
            let rank = xs[0].shape().len();
            if *axis >= rank {
                return Err(mismatch("concat", format!("axis {axis} for rank {rank}")));
            }
            for t in xs {
                let ok = t.shape().len() == rank
                    && t.shape().iter().zip(xs[0].shape()).enumerate().all(|(i, (a, b))| i == *axis || a == b);
                if !ok {
                    return Err(mismatch("concat", format!("{:?} vs {:?}", t.shape(), xs[0].shape())));
                }
            }
            let (outer, _, inner) = split_axis(xs[0].shape(), *axis);
            let total: usize = xs.iter().map(|t| t.shape()[*axis]).sum();
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for t in xs {
                    let block = t.shape()[*axis] * inner;
                    out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
                }
            }
            let mut shape = xs[0].shape().to_vec();
            shape[*axis] = total;
            Tensor::new(shape, out)
        }
        Slice { axis, start, end } => {
            expect_arity(p, xs.len(), &unary)?;
            let shape = xs[0].shape();
            if *axis >= shape.len() || start >= end || *end > shape[*axis] {
                return Err(mismatch("slice", format!("[{start}, {end}) on axis {axis} of {shape:?}")));
            }
            let (outer, d, inner) = split_axis(shape, *axis);
            let x = xs[0].data();
            let mut out = Vec::with_capacity(outer * (end - start) * inner);
            for o in 0..outer {
                out.extend_from_slice(&x[(o * d + start) * inner..(o * d + end) * inner]);
            }
            let mut new_shape = shape.to_vec();
            new_shape[*axis] = end - start;
            Tensor::new(new_shape, out)
        }
    }
}

/// Vector-Jacobian product: adjoints for each input given the output adjoint.
///
/// `want[i]` says whether input `i` needs a gradient; skipped entries are `None`.
pub fn backward<R: Real>(
    p: &Primitive,
    xs: &[&Tensor<R>],
    y: &Tensor<R>,
    g: &[R],
    want: &[bool],
) -> Vec<Option<Vec<R>>> {
    use Primitive::*;
    let mut grads: Vec<Option<Vec<R>>> = vec![None; xs.len()];
    match p {
        Add => {
            for (i, slot) in grads.iter_mut().enumerate() {
                if want[i] {
                    *slot = Some(g.to_vec());
                }
            }
        }
        Sub => {
            if want[0] {
                grads[0] = Some(g.to_vec());
            }
            if want[1] {
                grads[1] = Some(g.iter().map(|&v| -v).collect());
            }
        }
        Mul => {
            if want[0] {
                grads[0] = Some(g.iter().zip(xs[1].data()).map(|(&a, &b)| a * b).collect());
            }
            if want[1] {
                grads[1] = Some(g.iter().zip(xs[0].data()).map(|(&a, &b)| a * b).collect());
            }
        }
        Div => {
            if want[0] {
                grads[0] = Some(g.iter().zip(xs[1].data()).map(|(&a, &b)| a / b).collect());
            }
            if want[1] {
                grads[1] = Some(g.iter().zip(y.data()).zip(xs[1].data()).map(|((&a, &q), &b)| -a * q / b).collect());
            }
        }
        Scale(c) => {
            let c = R::of(*c);
            grads[0] = Some(g.iter().map(|&v| v * c).collect());
        }
        AddBroadcast { axis } | MulBroadcast { axis } => {
            let (outer, d, inner) = split_axis(xs[0].shape(), *axis);
            let add = matches!(p, AddBroadcast { .. });
            let b = xs[1].data();
            if want[0] {
                grads[0] = Some(if add {
                    g.to_vec()
                } else {
                    let mut gx = g.to_vec();
                    for o in 0..outer {
                        for j in 0..d {
                            let base = (o * d + j) * inner;
                            gx[base..base + inner].iter_mut().for_each(|v| *v *= b[j]);
                        }
                    }
                    gx
                });
            }
            if want[1] {
                let x = xs[0].data();
                let mut gb = vec![R::zero(); d];
                for o in 0..outer {
                    for (j, acc) in gb.iter_mut().enumerate() {
                        let base = (o * d + j) * inner;
                        if add {
                            *acc += g[base..base + inner].iter().copied().sum::<R>();
                        } else {
                            *acc += g[base..base + inner]
                                .iter()
                                .zip(&x[base..base + inner])
                                .map(|(&a, &b)| a * b)
                                .sum::<R>();
                        }
                    }
                }
                grads[1] = Some(gb);
            }
        }
        MatMul => {
            let (m, k) = (xs[0].shape()[0], xs[0].shape()[1]);
            let n = xs[1].shape()[1];
            if want[0] {
                let mut ga = vec![R::zero(); m * k];
                gemm(false, true, m, n, k, g, xs[1].data(), &mut ga, false);
                grads[0] = Some(ga);
            }
            if want[1] {
                let mut gb = vec![R::zero(); k * n];
                gemm(true, false, k, m, n, xs[0].data(), g, &mut gb, false);
                grads[1] = Some(gb);
            }
        }
        Linear => {
            let (n, din) = (xs[0].shape()[0], xs[0].shape()[1]);
            let dout = xs[1].shape()[0];
            if want[0] {
                let mut gx = vec![R::zero(); n * din];
                gemm(false, false, n, dout, din, g, xs[1].data(), &mut gx, false);
                grads[0] = Some(gx);
            }
            if want[1] {
                let mut gw = vec![R::zero(); dout * din];
                gemm(true, false, dout, n, din, g, xs[0].data(), &mut gw, false);
                grads[1] = Some(gw);
            }
            if xs.len() == 3 && want[2] {
                let mut gb = vec![R::zero(); dout];
                for row in g.chunks(dout) {
                    gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                }
                grads[2] = Some(gb);
            }
        }
        Conv2d { stride, padding } => {
            let (c, h, w) = (xs[0].shape()[0], xs[0].shape()[1], xs[0].shape()[2]);
            let (o, k) = (xs[1].shape()[0], xs[1].shape()[2]);
            let (ho, wo) = (y.shape()[1], y.shape()[2]);
            let ckk = c * k * k;
            if want[1] {
                let (cols, _, _) = im2col(xs[0].data(), c, h, w, k, *stride, *padding);
                let mut gw = vec![R::zero(); o * ckk];
                gemm(false, true, o, ho * wo, ckk, g, &cols, &mut gw, false);
                grads[1] = Some(gw);
            }
            if want[0] {
                let mut gcols = vec![R::zero(); ckk * ho * wo];
                gemm(true, false, ckk, o, ho * wo, xs[1].data(), g, &mut gcols, false);
                let mut gx = vec![R::zero(); c * h * w];
                col2im(&gcols, &mut gx, c, h, w, k, *stride, *padding, ho, wo);
                grads[0] = Some(gx);
            }
            if xs.len() == 3 && want[2] {
                grads[2] = Some(g.chunks(ho * wo).map(|row| row.iter().copied().sum()).collect());
            }
        }
        Upsample2 => {
            let (c, h, w) = (xs[0].shape()[0], xs[0].shape()[1], xs[0].shape()[2]);
            let mut gx = vec![R::zero(); c * h * w];
            for ci in 0..c {
                for i in 0..2 * h {
                    for j in 0..2 * w {
                        gx[(ci * h + i / 2) * w + j / 2] += g[(ci * 2 * h + i) * 2 * w + j];
                    }
                }
            }
            grads[0] = Some(gx);
        }
        Softmax => {
            let d = *y.shape().last().unwrap();
            let mut gx = vec![R::zero(); g.len()];
            for ((gr, yr), out) in g.chunks(d).zip(y.data().chunks(d)).zip(gx.chunks_mut(d)) {
                let dot: R = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                    *o = yi * (gi - dot);
                }
            }
            grads[0] = Some(gx);
        }
        LayerNorm { eps } => {
            let d = *y.shape().last().unwrap();
            let nd = R::of(d as f64);
            let eps = R::of(*eps);
            let mut gx = vec![R::zero(); g.len()];
            for ((xr, gr), (yr, out)) in
                xs[0].data().chunks(d).zip(g.chunks(d)).zip(y.data().chunks(d).zip(gx.chunks_mut(d)))
            {
                let mean = xr.iter().copied().sum::<R>() / nd;
                let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / nd;
                let rstd = R::one() / (var + eps).sqrt();
                let gmean = gr.iter().copied().sum::<R>() / nd;
                let gymean = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<R>() / nd;
                for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                    *o = rstd * (gi - gmean - yi * gymean);
                }
            }
            grads[0] = Some(gx);
        }
        Relu => {
            grads[0] =
                Some(g.iter().zip(xs[0].data()).map(|(&gi, &x)| if x > R::zero() { gi } else { R::zero() }).collect());
        }
        Gelu => {
            let (c, a, half) = (R::of(GELU_C), R::of(GELU_A), R::of(0.5));
            let three = R::of(3.0);
            grads[0] = Some(
                g.iter()
                    .zip(xs[0].data())
                    .map(|(&gi, &x)| {
                        let t = (c * (x + a * x * x * x)).tanh();
                        let dt = (R::one() - t * t) * c * (R::one() + three * a * x * x);
                        gi * (half * (R::one() + t) + half * x * dt)
                    })
                    .collect(),
            );
        }
        Sigmoid => {
            grads[0] = Some(g.iter().zip(y.data()).map(|(&gi, &s)| gi * s * (R::one() - s)).collect());
        }
        Mean | Sum => {
            let n = xs[0].len();
            let v = if matches!(p, Mean) { g[0] / R::of(n as f64) } else { g[0] };
            grads[0] = Some(vec![v; n]);
        }
        Reshape { .. } => grads[0] = Some(g.to_vec()),
        Transpose => {
            let (m, n) = (xs[0].shape()[0], xs[0].shape()[1]);
            let mut gx = vec![R::zero(); m * n];
            for i in 0..m {
                for j in 0..n {
                    gx[i * n + j] = g[j * m + i];
                }
            }
            grads[0] = Some(gx);
        }
        WindowPartition { .. } | WindowMerge { .. } => {
            let index = window_index(p, xs[0].shape()).expect("validated in forward");
            let c = xs[0].shape()[1];
            let mut gx = vec![R::zero(); g.len()];
            for (dst, &src) in index.iter().enumerate() {
                for j in 0..c {
                    gx[src * c + j] += g[dst * c + j];
                }
            }
            grads[0] = Some(gx);
        }
        Concat { axis } => {
            let (outer, _, inner) = split_axis(y.shape(), *axis);
            let total = y.shape()[*axis];
            let mut offset = 0;
            for (i, t) in xs.iter().enumerate() {
                let di = t.shape()[*axis];
                if want[i] {
                    let mut gi = Vec::with_capacity(t.len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        gi.extend_from_slice(&g[base..base + di * inner]);
                    }
                    grads[i] = Some(gi);
                }
                offset += di;
            }
        }
        Slice { axis, start, end } => {
            let (outer, d, inner) = split_axis(xs[0].shape(), *axis);
            let width = (end - start) * inner;
            let mut gx = vec![R::zero(); numel(xs[0].shape())];
            for o in 0..outer {
                gx[(o * d + start) * inner..(o * d + start) * inner + width]
                    .copy_from_slice(&g[o * width..(o + 1) * width]);
            }
            grads[0] = Some(gx);
        }
    }
    grads
}
