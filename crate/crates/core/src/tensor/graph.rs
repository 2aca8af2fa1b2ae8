use rayon::prelude::*;

use super::kernels::{self, col2im, gemm, im2col, sigmoid, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    GlobalAvgPool(Var),
    GlobalMaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    ChannelScale {
        input: Var,
        scale: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Ordered tape of executed ops.
///
/// Nodes are appended in execution order, so reverse iteration is a valid
/// topological order for the adjoint pass. Gradients are kept only for leaves
/// created with `requires_grad`; [`Graph::backward`] adds into those buffers,
/// so two calls without [`Graph::zero_grad`] accumulate.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let grad = requires_grad.then(|| vec![0.0; value.numel()]);
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf created with `requires_grad`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.fill(0.0);
            }
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Collapses every dimension after the first.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let n = shape[0];
        let rest = shape[1..].iter().product::<usize>().max(1);
        self.reshape(a, vec![n, rest])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("shape preserved");
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| sigmoid(v)).collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("shape preserved");
        self.push(out, Op::Sigmoid(a), &[a])
    }

    /// 2-d cross-correlation with zero padding.
    ///
    /// `input` is `N×Cin×H×W`, `weight` is `Cout×Cin×kH×kW`, `bias` is `Cout`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("conv2d input")?;
        let [cout, cin, kh, kw] = self.value(weight).dims4("conv2d weight")?;
        if cin != c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels, weight expects {cin}"),
            ));
        }
        if self.shape(bias) != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?}, expected [{cout}]", self.shape(bias)),
            ));
        }
        let oh = kernels::out_extent(h, kh, stride.0, padding.0);
        let ow = kernels::out_extent(w, kw, stride.1, padding.1);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {kh}x{kw} (stride {stride:?}) does not fit input {h}x{w} with padding {padding:?}"
                ),
            ));
        };
        let geom = ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph: padding.0,
            pw: padding.1,
            oh,
            ow,
        };
        let (k, p) = (geom.col_rows(), geom.col_cols());
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; n * cout * p];
        out.par_chunks_mut(cout * p)
            .zip(x.par_chunks(c * h * w))
            .for_each_init(
                || vec![0.0; k * p],
                |col, (os, xs)| {
                    im2col(xs, &geom, col);
                    gemm(cout, k, p, wt, false, col, false, 0.0, os);
                    for (row, &bv) in os.chunks_mut(p).zip(b) {
                        row.iter_mut().for_each(|v| *v += bv);
                    }
                },
            );
        let out = Tensor::new(vec![n, cout, oh, ow], out)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            &[input, weight, bias],
        ))
    }

    /// Max pooling with floor semantics. Ties resolve to the first maximal
    /// cell in row-major order, which also receives the gradient.
    pub fn maxpool2d(
        &mut self,
        input: Var,
        kernel: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("maxpool2d input")?;
        let oh = kernels::out_extent(h, kernel.0, stride.0, 0);
        let ow = kernels::out_extent(w, kernel.1, stride.1, 0);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::shape(
                "maxpool2d",
                format!("kernel {kernel:?} larger than input {h}x{w}"),
            ));
        };
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride.0 * w + ox * stride.1;
                    for ky in 0..kernel.0 {
                        let row = base + (oy * stride.0 + ky) * w + ox * stride.1;
                        for idx in row..row + kernel.1 {
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(out, Op::MaxPool2d { input, argmax }, &[input]))
    }

    /// Length-preserving 1-d cross-correlation along the last axis of an
    /// `N×C` input, with a 3-tap kernel, scalar bias and one zero of padding
    /// on each side.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [n, c] = self.value(input).dims2("conv1d input")?;
        if self.shape(weight) != [3] || self.shape(bias) != [1] {
            return Err(Error::shape(
                "conv1d",
                format!(
                    "expected weight [3] and bias [1], got {:?} and {:?}",
                    self.shape(weight),
                    self.shape(bias)
                ),
            ));
        }
        let x = self.value(input).data();
        let k = self.value(weight).data();
        let b = self.value(bias).data()[0];
        let mut out = vec![0.0; n * c];
        for (xs, os) in x.chunks(c).zip(out.chunks_mut(c)) {
            for i in 0..c {
                let left = if i > 0 { xs[i - 1] } else { 0.0 };
                let right = if i + 1 < c { xs[i + 1] } else { 0.0 };
                os[i] = b + k[0] * left + k[1] * xs[i] + k[2] * right;
            }
        }
        let out = Tensor::new(vec![n, c], out)?;
        Ok(self.push(
            out,
            Op::Conv1d {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
        ))
    }

    /// `input · weightᵀ + bias` for `input: N×D`, `weight: K×D`, `bias: K`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [n, d] = self.value(input).dims2("linear input")?;
        let [k, dw] = self.value(weight).dims2("linear weight")?;
        if d != dw || self.shape(bias) != [k] {
            return Err(Error::shape(
                "linear",
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    self.shape(input),
                    self.shape(weight),
                    self.shape(bias)
                ),
            ));
        }
        let mut out = vec![0.0; n * k];
        gemm(
            n,
            d,
            k,
            self.value(input).data(),
            false,
            self.value(weight).data(),
            true,
            0.0,
            &mut out,
        );
        let b = self.value(bias).data();
        for row in out.chunks_mut(k) {
            row.iter_mut().zip(b).for_each(|(v, bv)| *v += bv);
        }
        let out = Tensor::new(vec![n, k], out)?;
        Ok(self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
        ))
    }

    /// Batch mean of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ones = vec![1.0; labels.len()];
        self.weighted_cross_entropy(logits, labels, &ones)
    }

    /// `(1/N) Σ weightᵢ · CEᵢ`: per-sample weighted cross-entropy over a batch.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        weights: &[f64],
    ) -> Result<Var> {
        let [n, k] = self.value(logits).dims2("cross-entropy logits")?;
        if labels.len() != n || weights.len() != n {
            return Err(Error::shape(
                "cross-entropy",
                format!(
                    "{n} rows of logits, {} labels, {} weights",
                    labels.len(),
                    weights.len()
                ),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::input(format!("label {bad} outside 0..{k}")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut total = 0.0;
        for i in 0..n {
            let row = &z[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            for j in 0..k {
                probs[i * k + j] = (row[j] - lse).exp();
            }
            total += weights[i] * (lse - row[labels[i]]);
        }
        let out = Tensor::scalar(total / n as f64);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Mean over the spatial extent: `N×C×H×W → N×C`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("global_avg_pool input")?;
        let hw = h * w;
        let data = self
            .value(input)
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().sum::<f64>() / hw as f64)
            .collect();
        let out = Tensor::new(vec![n, c], data)?;
        Ok(self.push(out, Op::GlobalAvgPool(input), &[input]))
    }

    /// Max over the spatial extent: `N×C×H×W → N×C`; first maximum wins.
    pub fn global_max_pool(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("global_max_pool input")?;
        let hw = h * w;
        let x = self.value(input).data();
        let mut data = Vec::with_capacity(n * c);
        let mut argmax = Vec::with_capacity(n * c);
        for (p, plane) in x.chunks(hw).enumerate() {
            let mut best = 0;
            for (i, &v) in plane.iter().enumerate() {
                if v > plane[best] {
                    best = i;
                }
            }
            data.push(plane[best]);
            argmax.push(p * hw + best);
        }
        let out = Tensor::new(vec![n, c], data)?;
        Ok(self.push(out, Op::GlobalMaxPool { input, argmax }, &[input]))
    }

    /// Multiplies every `H×W` plane of `input` (`N×C×H×W`) by the matching
    /// entry of `scale` (`N×C`).
    pub fn channel_scale(&mut self, input: Var, scale: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("channel_scale input")?;
        if self.shape(scale) != [n, c] {
            return Err(Error::shape(
                "channel_scale",
                format!("scale {:?} does not match {n}x{c}", self.shape(scale)),
            ));
        }
        let hw = h * w;
        let s = self.value(scale).data();
        let mut data = Vec::with_capacity(n * c * hw);
        for (plane, &sv) in self.value(input).data().chunks(hw).zip(s) {
            data.extend(plane.iter().map(|v| v * sv));
        }
        let out = Tensor::new(vec![n, c, h, w], data)?;
        Ok(self.push(out, Op::ChannelScale { input, scale }, &[input, scale]))
    }

    /// Reverse pass from a one-element `loss`, adding `∂loss/∂leaf` into the
    /// gradient buffer of every `requires_grad` leaf reachable from it.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::input(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj = Adjoints::new(&self.nodes);
        adj.bufs[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = adj.bufs[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &dy, &mut adj);
            if matches!(self.nodes[i].op, Op::Leaf) {
                adj.bufs[i] = Some(dy);
            }
        }
        for (node, buf) in self.nodes.iter_mut().zip(adj.bufs) {
            if let (Some(g), Some(d)) = (node.grad.as_mut(), buf) {
                g.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, dy: &[f64], adj: &mut Adjoints) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                adj.acc(*a, |g| axpy(g, dy));
                adj.acc(*b, |g| axpy(g, dy));
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                adj.acc(*a, |g| {
                    g.iter_mut()
                        .zip(dy.iter().zip(y))
                        .for_each(|(g, (d, y))| *g += d * y)
                });
                adj.acc(*b, |g| {
                    g.iter_mut()
                        .zip(dy.iter().zip(x))
                        .for_each(|(g, (d, x))| *g += d * x)
                });
            }
            Op::Sum(a) => adj.acc(*a, |g| g.iter_mut().for_each(|g| *g += dy[0])),
            Op::Reshape(a) => adj.acc(*a, |g| axpy(g, dy)),
            Op::Relu(a) => {
                let x = val(*a);
                adj.acc(*a, |g| {
                    for ((g, d), x) in g.iter_mut().zip(dy).zip(x) {
                        if *x > 0.0 {
                            *g += d;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[i].value.data();
                adj.acc(*a, |g| {
                    for ((g, d), y) in g.iter_mut().zip(dy).zip(y) {
                        *g += d * y * (1.0 - y);
                    }
                });
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => self.conv2d_backward(*input, *weight, *bias, geom, dy, adj),
            Op::MaxPool2d { input, argmax } | Op::GlobalMaxPool { input, argmax } => {
                adj.acc(*input, |g| {
                    for (&idx, d) in argmax.iter().zip(dy) {
                        g[idx] += d;
                    }
                });
            }
            Op::Conv1d {
                input,
                weight,
                bias,
            } => {
                let [_, c] = dims2(&self.nodes[input.0].value);
                let x = val(*input);
                let k = val(*weight);
                adj.acc(*input, |g| {
                    for (gs, ds) in g.chunks_mut(c).zip(dy.chunks(c)) {
                        for j in 0..c {
                            // y[i] reads x[j] through k[0] at i=j+1, k[1] at i=j, k[2] at i=j-1
                            let mut s = k[1] * ds[j];
                            if j + 1 < c {
                                s += k[0] * ds[j + 1];
                            }
                            if j > 0 {
                                s += k[2] * ds[j - 1];
                            }
                            gs[j] += s;
                        }
                    }
                });
                adj.acc(*weight, |g| {
                    for (xs, ds) in x.chunks(c).zip(dy.chunks(c)) {
                        for i in 0..c {
                            if i > 0 {
                                g[0] += ds[i] * xs[i - 1];
                            }
                            g[1] += ds[i] * xs[i];
                            if i + 1 < c {
                                g[2] += ds[i] * xs[i + 1];
                            }
                        }
                    }
                });
                adj.acc(*bias, |g| g[0] += dy.iter().sum::<f64>());
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let [n, d] = dims2(&self.nodes[input.0].value);
                let k = self.nodes[weight.0].value.shape()[0];
                adj.acc(*input, |g| gemm(n, k, d, dy, false, val(*weight), false, 1.0, g));
                adj.acc(*weight, |g| gemm(k, n, d, dy, true, val(*input), false, 1.0, g));
                adj.acc(*bias, |g| {
                    for row in dy.chunks(k) {
                        axpy(g, row);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                weights,
                probs,
            } => {
                let n = labels.len();
                let k = probs.len() / n;
                let scale = dy[0] / n as f64;
                adj.acc(*logits, |g| {
                    for r in 0..n {
                        let w = scale * weights[r];
                        for j in 0..k {
                            let target = if j == labels[r] { 1.0 } else { 0.0 };
                            g[r * k + j] += w * (probs[r * k + j] - target);
                        }
                    }
                });
            }
            Op::GlobalAvgPool(input) => {
                let [_, _, h, w] = dims4(&self.nodes[input.0].value);
                let inv = 1.0 / (h * w) as f64;
                adj.acc(*input, |g| {
                    for (plane, d) in g.chunks_mut(h * w).zip(dy) {
                        plane.iter_mut().for_each(|g| *g += d * inv);
                    }
                });
            }
            Op::ChannelScale { input, scale } => {
                let [_, _, h, w] = dims4(&self.nodes[input.0].value);
                let hw = h * w;
                let (x, s) = (val(*input), val(*scale));
                adj.acc(*input, |g| {
                    for ((gp, dp), sv) in g.chunks_mut(hw).zip(dy.chunks(hw)).zip(s) {
                        gp.iter_mut().zip(dp).for_each(|(g, d)| *g += d * sv);
                    }
                });
                adj.acc(*scale, |g| {
                    for ((gv, dp), xp) in g.iter_mut().zip(dy.chunks(hw)).zip(x.chunks(hw)) {
                        *gv += dp.iter().zip(xp).map(|(d, x)| d * x).sum::<f64>();
                    }
                });
            }
        }
    }

    fn conv2d_backward(
        &self,
        input: Var,
        weight: Var,
        bias: Var,
        geom: &ConvGeom,
        dy: &[f64],
        adj: &mut Adjoints,
    ) {
        let [cout, _, _, _] = dims4(&self.nodes[weight.0].value);
        let (k, p) = (geom.col_rows(), geom.col_cols());
        let in_len = geom.c * geom.h * geom.w;
        let x = self.nodes[input.0].value.data();
        let wt = self.nodes[weight.0].value.data();

        adj.acc(bias, |g| {
            for ds in dy.chunks(cout * p) {
                for (gv, row) in g.iter_mut().zip(ds.chunks(p)) {
                    *gv += row.iter().sum::<f64>();
                }
            }
        });

        if adj.wanted(weight) {
            // Partial sums over fixed groups of samples, added in group order,
            // so the result does not depend on the thread count.
            let partials: Vec<Vec<f64>> = x
                .par_chunks(in_len * CONV_GROUP)
                .zip(dy.par_chunks(cout * p * CONV_GROUP))
                .map(|(xg, dg)| {
                    let mut col = vec![0.0; k * p];
                    let mut part = vec![0.0; cout * k];
                    for (xs, ds) in xg.chunks(in_len).zip(dg.chunks(cout * p)) {
                        im2col(xs, geom, &mut col);
                        gemm(cout, p, k, ds, false, &col, true, 1.0, &mut part);
                    }
                    part
                })
                .collect();
            adj.acc(weight, |g| {
                for part in &partials {
                    axpy(g, part);
                }
            });
        }
        if adj.wanted(input) {
            adj.acc(input, |g| {
                g.par_chunks_mut(in_len)
                    .zip(dy.par_chunks(cout * p))
                    .for_each_init(
                        || vec![0.0; k * p],
                        |col, (gs, ds)| {
                            gemm(k, cout, p, wt, true, ds, false, 0.0, col);
                            col2im(col, geom, gs);
                        },
                    );
            });
        }
    }
}

/// Samples per partial weight gradient in the convolution reverse pass.
const CONV_GROUP: usize = 8;

/// Transient adjoint buffers for one reverse pass.
struct Adjoints {
    bufs: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
    wanted: Vec<bool>,
}

impl Adjoints {
    fn new(nodes: &[Node]) -> Self {
        Adjoints {
            bufs: vec![None; nodes.len()],
            sizes: nodes.iter().map(|n| n.value.numel()).collect(),
            wanted: nodes.iter().map(|n| n.requires_grad).collect(),
        }
    }

    fn wanted(&self, v: Var) -> bool {
        self.wanted[v.0]
    }

    /// Runs `f` on the adjoint buffer of `v`, allocating it on first use.
    /// Skipped entirely for nodes that do not need a gradient.
    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.wanted[v.0] {
            return;
        }
        let size = self.sizes[v.0];
        f(self.bufs[v.0].get_or_insert_with(|| vec![0.0; size]));
    }
}

fn axpy(g: &mut [f64], d: &[f64]) {
    g.iter_mut().zip(d).for_each(|(g, d)| *g += d);
}

fn dims4(t: &Tensor) -> [usize; 4] {
    t.dims4("backward").expect("shape checked in forward")
}

fn dims2(t: &Tensor) -> [usize; 2] {
    t.dims2("backward").expect("shape checked in forward")
}
