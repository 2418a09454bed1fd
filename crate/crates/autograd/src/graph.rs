use ndarray::{s, Array1, Array2, ArrayD, Axis, IxDyn, Zip};

use crate::kernels;
use crate::{Result, ShapeError};

pub type Tensor = ArrayD<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Prelu { x: Var, alpha: Var },
    Conv2d { x: Var, w: Var, b: Option<Var>, pad: usize },
    UpConv2x2 { x: Var, w: Var, b: Var },
    MaxPool2x2 { x: Var, argmax: Vec<usize> },
    Upsample2x(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, inv_std: Array1<f64>, train: bool },
    Concat(Vec<Var>),
    MatMul(Var, Var),
    AddRow(Var, Var),
    SelectStep { x: Var, steps: usize, t: usize },
    StackSteps { parts: Vec<Var>, steps: usize },
    ChannelAffine { x: Var, scale: Vec<f64> },
    Sum(Var),
    External { x: Var, grad: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch normalization.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    /// Unbiased per-channel variance.
    pub var: Array1<f64>,
}

/// A single-use reverse-mode tape. Build the forward pass with the op
/// methods, then call [`Graph::backward`] on a scalar node.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]. Nodes that did not require a gradient, or
/// that the loss does not depend on, have none.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when the loss does not touch it.
    pub fn get_or_zeros(&self, v: Var, like: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(IxDyn(like)))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(ShapeError::Mismatch { op, left: a.shape().to_vec(), right: b.shape().to_vec() });
    }
    Ok(())
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.ndim() != rank {
        return Err(ShapeError::Rank { op, expected: rank, got: t.shape().to_vec() });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a zero-dimensional (or single-element) node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.len(), 1);
        t.iter().copied().next().unwrap_or(f64::NAN)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A trainable leaf.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value.as_standard_layout().into_owned(), Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value.as_standard_layout().into_owned(), Op::Leaf, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("identical shapes")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// Parametric ReLU with one negative slope per channel of an NCHW input.
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let xv = self.value(x);
        expect_rank("prelu", xv, 4)?;
        let c = xv.shape()[1];
        if self.value(alpha).shape() != [c] {
            return Err(ShapeError::Mismatch {
                op: "prelu",
                left: xv.shape().to_vec(),
                right: self.value(alpha).shape().to_vec(),
            });
        }
        let al = self.value(alpha).as_slice().expect("standard layout").to_vec();
        let mut out = xv.clone();
        for (ci, mut plane) in out.axis_iter_mut(Axis(1)).enumerate() {
            let a = al[ci];
            plane.mapv_inplace(|v| if v > 0.0 { v } else { a * v });
        }
        let rg = self.rg(x) || self.rg(alpha);
        Ok(self.push(out, Op::Prelu { x, alpha }, rg))
    }

    /// Stride-1 2-D convolution. `x` is `[N, C, H, W]`, `w` is `[O, C, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        expect_rank("conv2d", xv, 4)?;
        expect_rank("conv2d", wv, 4)?;
        let k = wv.shape()[2];
        if wv.shape()[1] != xv.shape()[1] || wv.shape()[3] != k {
            return Err(ShapeError::Mismatch { op: "conv2d", left: xv.shape().to_vec(), right: wv.shape().to_vec() });
        }
        if xv.shape()[2] + 2 * pad < k || xv.shape()[3] + 2 * pad < k {
            return Err(ShapeError::Mismatch { op: "conv2d", left: xv.shape().to_vec(), right: wv.shape().to_vec() });
        }
        if let Some(b) = b {
            if self.value(b).shape() != [wv.shape()[0]] {
                return Err(ShapeError::Mismatch {
                    op: "conv2d bias",
                    left: wv.shape().to_vec(),
                    right: self.value(b).shape().to_vec(),
                });
            }
        }
        let out = kernels::conv2d_forward(xv, wv, b.map(|b| self.value(b)), pad);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv2d { x, w, b, pad }, rg))
    }

    /// Transposed 2×2 stride-2 convolution. `w` is `[C, O, 2, 2]`.
    pub fn upconv2x2(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        expect_rank("upconv2x2", xv, 4)?;
        let (n, c, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        if wv.ndim() != 4 || wv.shape()[0] != c || wv.shape()[2] != 2 || wv.shape()[3] != 2 {
            return Err(ShapeError::Mismatch { op: "upconv2x2", left: xv.shape().to_vec(), right: wv.shape().to_vec() });
        }
        let o = wv.shape()[1];
        let plane = h * wd;
        let xmat = kernels::nchw_to_mat(xv.as_slice().expect("standard layout"), n, c, plane);
        let wmat: Array2<f64> = wv.view().into_shape_with_order((c, o * 4)).expect("reshape").to_owned();
        let ymat = kernels::matmul(wmat.t(), xmat.view());
        let bs = self.value(b).as_slice().expect("standard layout");
        let mut out = Tensor::zeros(IxDyn(&[n, o, 2 * h, 2 * wd]));
        for ni in 0..n {
            for oi in 0..o {
                for di in 0..2 {
                    for dj in 0..2 {
                        let row = ymat.row(oi * 4 + di * 2 + dj);
                        for i in 0..h {
                            for j in 0..wd {
                                out[[ni, oi, 2 * i + di, 2 * j + dj]] = row[ni * plane + i * wd + j] + bs[oi];
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::UpConv2x2 { x, w, b }, rg))
    }

    pub fn max_pool2x2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        expect_rank("max_pool2x2", xv, 4)?;
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(ShapeError::OddSpatial { h, w });
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = xv.as_slice().expect("standard layout");
        let mut out = vec![0.0; n * c * ho * wo];
        let mut argmax = vec![0usize; out.len()];
        for p in 0..n * c {
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = usize::MAX;
                    let mut bv = f64::NEG_INFINITY;
                    for di in 0..2 {
                        for dj in 0..2 {
                            let idx = p * h * w + (2 * i + di) * w + 2 * j + dj;
                            if src[idx] > bv || best == usize::MAX {
                                bv = src[idx];
                                best = idx;
                            }
                        }
                    }
                    let o = p * ho * wo + i * wo + j;
                    out[o] = bv;
                    argmax[o] = best;
                }
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(&[n, c, ho, wo]), out).expect("pool shape");
        let rg = self.rg(x);
        Ok(self.push(out, Op::MaxPool2x2 { x, argmax }, rg))
    }

    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        expect_rank("upsample_nearest2x", xv, 4)?;
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let src = xv.as_slice().expect("standard layout");
        let mut out = vec![0.0; n * c * 4 * h * w];
        for p in 0..n * c {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    out[(p * 2 * h + y) * 2 * w + x] = src[(p * h + y / 2) * w + x / 2];
                }
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(&[n, c, 2 * h, 2 * w]), out).expect("upsample shape");
        let rg = self.rg(x);
        Ok(self.push(out, Op::Upsample2x(x), rg))
    }

    /// Batch normalization over `(N, H, W)` per channel. In training mode the
    /// batch statistics are used and returned; otherwise `running` supplies
    /// `(mean, var)`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        running: Option<(&Array1<f64>, &Array1<f64>)>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xv = self.value(x);
        expect_rank("batch_norm", xv, 4)?;
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let m = (n * h * w) as f64;
        let (mean, var, stats) = match running {
            Some((rm, rv)) => (rm.clone(), rv.clone(), None),
            None => {
                let mut mean = Array1::<f64>::zeros(c);
                let mut var = Array1::<f64>::zeros(c);
                for (ci, plane) in xv.axis_iter(Axis(1)).enumerate() {
                    let mu = plane.sum() / m;
                    let v = plane.fold(0.0, |acc, &x| acc + (x - mu) * (x - mu)) / m;
                    mean[ci] = mu;
                    var[ci] = v;
                }
                let unbiased = if m > 1.0 { &var * (m / (m - 1.0)) } else { var.clone() };
                let stats = BatchStats { mean: mean.clone(), var: unbiased };
                (mean, var, Some(stats))
            }
        };
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let g = self.value(gamma).as_slice().expect("standard layout").to_vec();
        let bt = self.value(beta).as_slice().expect("standard layout").to_vec();
        if g.len() != c || bt.len() != c {
            return Err(ShapeError::Mismatch { op: "batch_norm", left: xv.shape().to_vec(), right: vec![g.len()] });
        }
        let mut xhat = xv.clone();
        for (ci, mut plane) in xhat.axis_iter_mut(Axis(1)).enumerate() {
            let (mu, is) = (mean[ci], inv_std[ci]);
            plane.mapv_inplace(|v| (v - mu) * is);
        }
        let mut out = xhat.clone();
        for (ci, mut plane) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (gg, bb) = (g[ci], bt[ci]);
            plane.mapv_inplace(|v| v * gg + bb);
        }
        let train = running.is_none();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(out, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train }, rg);
        Ok((v, stats))
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]);
        expect_rank("concat_channels", first, 4)?;
        for p in &parts[1..] {
            let v = self.value(*p);
            if v.ndim() != 4 || v.shape()[0] != first.shape()[0] || v.shape()[2..] != first.shape()[2..] {
                return Err(ShapeError::Mismatch {
                    op: "concat_channels",
                    left: first.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("checked shapes").as_standard_layout().into_owned();
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        expect_rank("matmul", av, 2)?;
        expect_rank("matmul", bv, 2)?;
        if av.shape()[1] != bv.shape()[0] {
            return Err(ShapeError::Mismatch { op: "matmul", left: av.shape().to_vec(), right: bv.shape().to_vec() });
        }
        let a2 = av.view().into_dimensionality().expect("2-d");
        let b2 = bv.view().into_dimensionality().expect("2-d");
        let out = kernels::matmul(a2, b2).into_dyn();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a[N, K] + b[K]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        expect_rank("add_row", av, 2)?;
        if bv.shape() != [av.shape()[1]] {
            return Err(ShapeError::Mismatch { op: "add_row", left: av.shape().to_vec(), right: bv.shape().to_vec() });
        }
        let out = av + &bv.view().insert_axis(Axis(0));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::AddRow(a, b), rg))
    }

    /// From frames `[B*steps, C, H, W]` (frame index `b*steps + t`), take
    /// step `t` of every window as per-pixel rows `[B*H*W, C]`.
    pub fn select_step(&mut self, x: Var, steps: usize, t: usize) -> Result<Var> {
        let xv = self.value(x);
        expect_rank("select_step", xv, 4)?;
        let (f, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        if steps == 0 || f % steps != 0 || t >= steps {
            return Err(ShapeError::Steps { frames: f, steps });
        }
        let b = f / steps;
        let plane = h * w;
        let src = xv.as_slice().expect("standard layout");
        let mut out = vec![0.0; b * plane * c];
        for bi in 0..b {
            let fi = bi * steps + t;
            for ci in 0..c {
                let s = &src[(fi * c + ci) * plane..(fi * c + ci + 1) * plane];
                for (p, v) in s.iter().enumerate() {
                    out[(bi * plane + p) * c + ci] = *v;
                }
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(&[b * plane, c]), out).expect("rows shape");
        let rg = self.rg(x);
        Ok(self.push(out, Op::SelectStep { x, steps, t }, rg))
    }

    /// Inverse of [`Graph::select_step`]: stack per-step rows `[B*H*W, C]`
    /// back into frames `[B*steps, C, H, W]`.
    pub fn stack_steps(&mut self, parts: &[Var], h: usize, w: usize) -> Result<Var> {
        let steps = parts.len();
        let first = self.value(parts[0]);
        expect_rank("stack_steps", first, 2)?;
        let (rows, c) = (first.shape()[0], first.shape()[1]);
        let plane = h * w;
        if plane == 0 || rows % plane != 0 {
            return Err(ShapeError::Steps { frames: rows, steps });
        }
        let b = rows / plane;
        let mut out = vec![0.0; b * steps * c * plane];
        for (t, p) in parts.iter().enumerate() {
            let pv = self.value(*p);
            if pv.shape() != first.shape() {
                return Err(ShapeError::Mismatch { op: "stack_steps", left: first.shape().to_vec(), right: pv.shape().to_vec() });
            }
            let src = pv.as_slice().expect("standard layout");
            for bi in 0..b {
                let fi = bi * steps + t;
                for pix in 0..plane {
                    for ci in 0..c {
                        out[(fi * c + ci) * plane + pix] = src[(bi * plane + pix) * c + ci];
                    }
                }
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(&[b * steps, c, h, w]), out).expect("frames shape");
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(out, Op::StackSteps { parts: parts.to_vec(), steps }, rg))
    }

    /// Per-channel `x * scale[c] + shift[c]` with constant coefficients.
    pub fn channel_affine(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        expect_rank("channel_affine", xv, 4)?;
        if scale.len() != xv.shape()[1] || shift.len() != xv.shape()[1] {
            return Err(ShapeError::Mismatch { op: "channel_affine", left: xv.shape().to_vec(), right: vec![scale.len()] });
        }
        let mut out = xv.clone();
        for (ci, mut plane) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (a, b) = (scale[ci], shift[ci]);
            plane.mapv_inplace(|v| v * a + b);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::ChannelAffine { x, scale: scale.to_vec() }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::from_elem(IxDyn(&[]), self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// A scalar computed outside the tape whose gradient with respect to `x`
    /// is already known.
    pub fn external_scalar(&mut self, x: Var, value: f64, grad: Tensor) -> Result<Var> {
        same_shape("external_scalar", self.value(x), &grad)?;
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_elem(IxDyn(&[]), value), Op::External { x, grad }, rg))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        let lv = &self.nodes[loss.0].value;
        grads[loss.0] = Some(Tensor::ones(lv.raw_dim()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.propagate(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, -gout);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, gout * self.value(*b));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, gout * self.value(*a));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, gout * *c),
            Op::Sigmoid(a) => {
                let mut g = gout.clone();
                Zip::from(&mut g).and(&node.value).for_each(|g, &y| *g *= y * (1.0 - y));
                self.accumulate(grads, *a, g);
            }
            Op::Tanh(a) => {
                let mut g = gout.clone();
                Zip::from(&mut g).and(&node.value).for_each(|g, &y| *g *= 1.0 - y * y);
                self.accumulate(grads, *a, g);
            }
            Op::Relu(a) => {
                let mut g = gout.clone();
                Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| {
                    if x <= 0.0 {
                        *g = 0.0
                    }
                });
                self.accumulate(grads, *a, g);
            }
            Op::Prelu { x, alpha } => {
                let xv = self.value(*x);
                let al = self.value(*alpha);
                let c = al.len();
                let mut gx = gout.clone();
                let mut ga = Array1::<f64>::zeros(c);
                for ci in 0..c {
                    let a = al[ci];
                    let xs = xv.index_axis(Axis(1), ci);
                    let mut gs = gx.index_axis_mut(Axis(1), ci);
                    Zip::from(&mut gs).and(&xs).for_each(|g, &xv| {
                        if xv <= 0.0 {
                            ga[ci] += *g * xv;
                            *g *= a;
                        }
                    });
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *alpha, ga.into_dyn());
            }
            Op::Conv2d { x, w, b, pad } => {
                let (gx, gw, gb) = kernels::conv2d_backward(self.value(*x), self.value(*w), gout, *pad, self.rg(*x));
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *w, gw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::UpConv2x2 { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, c, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                let o = wv.shape()[1];
                let plane = h * wd;
                let mut gy = Array2::<f64>::zeros((o * 4, n * plane));
                let mut gb = Array1::<f64>::zeros(o);
                for ni in 0..n {
                    for oi in 0..o {
                        for di in 0..2 {
                            for dj in 0..2 {
                                for ii in 0..h {
                                    for jj in 0..wd {
                                        let g = gout[[ni, oi, 2 * ii + di, 2 * jj + dj]];
                                        gy[[oi * 4 + di * 2 + dj, ni * plane + ii * wd + jj]] = g;
                                        gb[oi] += g;
                                    }
                                }
                            }
                        }
                    }
                }
                let xmat = kernels::nchw_to_mat(xv.as_slice().expect("standard layout"), n, c, plane);
                let wmat: Array2<f64> = wv.view().into_shape_with_order((c, o * 4)).expect("reshape").to_owned();
                if self.rg(*x) {
                    let gxm = kernels::matmul(wmat.view(), gy.view());
                    let flat = kernels::mat_to_nchw(&gxm, n, c, plane);
                    self.accumulate(grads, *x, Tensor::from_shape_vec(IxDyn(xv.shape()), flat).expect("shape"));
                }
                // gW[c, o4] = sum_cols X[c, col] * gY[o4, col]
                let gw = kernels::matmul(xmat.view(), gy.t());
                self.accumulate(grads, *w, gw.into_shape_with_order(IxDyn(wv.shape())).expect("shape"));
                self.accumulate(grads, *b, gb.into_dyn());
            }
            Op::MaxPool2x2 { x, argmax } => {
                let xv = self.value(*x);
                let mut g = vec![0.0; xv.len()];
                for (o, &src) in argmax.iter().enumerate() {
                    g[src] += gout.as_slice().expect("standard layout")[o];
                }
                self.accumulate(grads, *x, Tensor::from_shape_vec(IxDyn(xv.shape()), g).expect("shape"));
            }
            Op::Upsample2x(x) => {
                let xv = self.value(*x);
                let (h, w) = (xv.shape()[2], xv.shape()[3]);
                let src = gout.as_slice().expect("standard layout");
                let mut g = vec![0.0; xv.len()];
                for p in 0..xv.shape()[0] * xv.shape()[1] {
                    for y in 0..2 * h {
                        for x in 0..2 * w {
                            g[(p * h + y / 2) * w + x / 2] += src[(p * 2 * h + y) * 2 * w + x];
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_shape_vec(IxDyn(xv.shape()), g).expect("shape"));
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let c = inv_std.len();
                let gam = self.value(*gamma);
                let mut gg = Array1::<f64>::zeros(c);
                let mut gbeta = Array1::<f64>::zeros(c);
                let mut gx = gout.clone();
                let shape = gout.shape();
                let m = (shape[0] * shape[2] * shape[3]) as f64;
                for ci in 0..c {
                    let gs = gout.index_axis(Axis(1), ci);
                    let xs = xhat.index_axis(Axis(1), ci);
                    let sum_g = gs.sum();
                    let sum_gx = Zip::from(&gs).and(&xs).fold(0.0, |acc, &g, &xh| acc + g * xh);
                    gbeta[ci] = sum_g;
                    gg[ci] = sum_gx;
                    let k = gam[ci] * inv_std[ci];
                    let mut out = gx.index_axis_mut(Axis(1), ci);
                    if *train {
                        Zip::from(&mut out).and(&xs).for_each(|g, &xh| {
                            *g = k * (*g - sum_g / m - xh * sum_gx / m);
                        });
                    } else {
                        out.mapv_inplace(|g| g * k);
                    }
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *gamma, gg.into_dyn());
                self.accumulate(grads, *beta, gbeta.into_dyn());
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let c = self.value(*p).shape()[1];
                    let g = gout.slice_axis(Axis(1), (start..start + c).into()).to_owned();
                    self.accumulate(grads, *p, g);
                    start += c;
                }
            }
            Op::MatMul(a, b) => {
                let g2 = gout.view().into_dimensionality().expect("2-d");
                if self.rg(*a) {
                    let bv = self.value(*b).view().into_dimensionality::<ndarray::Ix2>().expect("2-d");
                    self.accumulate(grads, *a, kernels::matmul(g2, bv.t()).into_dyn());
                }
                if self.rg(*b) {
                    let av = self.value(*a).view().into_dimensionality::<ndarray::Ix2>().expect("2-d");
                    self.accumulate(grads, *b, kernels::matmul(av.t(), g2).into_dyn());
                }
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                if self.rg(*b) {
                    self.accumulate(grads, *b, gout.sum_axis(Axis(0)));
                }
            }
            Op::SelectStep { x, steps, t } => {
                let xv = self.value(*x);
                let (f, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                let plane = h * w;
                let b = f / steps;
                let src = gout.as_slice().expect("standard layout");
                let mut g = vec![0.0; xv.len()];
                for bi in 0..b {
                    let fi = bi * steps + t;
                    for ci in 0..c {
                        for p in 0..plane {
                            g[(fi * c + ci) * plane + p] = src[(bi * plane + p) * c + ci];
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_shape_vec(IxDyn(xv.shape()), g).expect("shape"));
            }
            Op::StackSteps { parts, steps } => {
                let (f, c, h, w) = (gout.shape()[0], gout.shape()[1], gout.shape()[2], gout.shape()[3]);
                let plane = h * w;
                let b = f / steps;
                let src = gout.as_slice().expect("standard layout");
                for (t, p) in parts.iter().enumerate() {
                    if !self.rg(*p) {
                        continue;
                    }
                    let mut g = vec![0.0; b * plane * c];
                    for bi in 0..b {
                        let fi = bi * steps + t;
                        for pix in 0..plane {
                            for ci in 0..c {
                                g[(bi * plane + pix) * c + ci] = src[(fi * c + ci) * plane + pix];
                            }
                        }
                    }
                    self.accumulate(grads, *p, Tensor::from_shape_vec(IxDyn(&[b * plane, c]), g).expect("shape"));
                }
            }
            Op::ChannelAffine { x, scale } => {
                let mut g = gout.clone();
                for (ci, mut plane) in g.axis_iter_mut(Axis(1)).enumerate() {
                    let a = scale[ci];
                    plane.mapv_inplace(|v| v * a);
                }
                self.accumulate(grads, *x, g);
            }
            Op::Sum(x) => {
                let s = gout.iter().copied().next().unwrap_or(0.0);
                let g = Tensor::from_elem(self.value(*x).raw_dim(), s);
                self.accumulate(grads, *x, g);
            }
            Op::External { x, grad } => {
                let s = gout.iter().copied().next().unwrap_or(0.0);
                self.accumulate(grads, *x, grad * s);
            }
        }
    }
}

/// Slice frames `[start, start+len)` out of an NCHW tensor (no tape).
pub fn frames(t: &Tensor, start: usize, len: usize) -> Tensor {
    t.slice_axis(Axis(0), (start..start + len).into()).to_owned()
}

/// Copy of one `H×W` plane of an NCHW tensor.
pub fn plane(t: &Tensor, n: usize, c: usize) -> Array2<f64> {
    t.slice(s![n, c, .., ..]).to_owned()
}
