//! Tape-style reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node whose
//! parents always precede it, so node order is already a topological order
//! and [`Graph::backward`] is a single reverse sweep.
//!
//! Convolution and dense products accumulate in `f64` and round once per
//! output element. No reduction is parallelised, so results are
//! bit-reproducible.

use crate::tensor::{dim_err, Tensor, TensorError};

/// Lower/upper clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone)]
struct ConvGeom {
    stride: usize,
    pad_h: usize,
    pad_w: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, geom: ConvGeom },
    MaxPool { input: Var, argmax: Vec<usize> },
    GlobalMaxPool { input: Var, argmax: Vec<usize> },
    Dense { input: Var, weights: Var, bias: Var },
    Act(Activation, Var),
    Concat { inputs: Vec<Var> },
    Reshape(Var),
    Mul(Var, Var),
    Sum(Var),
    Mean(Var),
    BinaryCrossEntropy { scores: Var, labels: Vec<f32> },
    CategoricalCrossEntropy { probs: Var, labels: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    is_param: bool,
}

/// Gradients produced by one backward sweep. Every parameter node has an
/// entry, zero-filled when the loss does not depend on it.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<(), TensorError> {
    match t.first_non_finite() {
        Some(index) => Err(TensorError::NonFinite { op, index }),
        None => Ok(()),
    }
}

fn add_into(acc: &mut Option<Tensor>, delta: Tensor) {
    match acc {
        Some(t) => {
            for (a, d) in t.data_mut().iter_mut().zip(delta.data()) {
                *a += d;
            }
        }
        None => *acc = Some(delta),
    }
}

fn out_extent(op: &'static str, axis: &str, size: usize, pad: usize, window: usize, stride: usize) -> Result<usize, TensorError> {
    let padded = size + 2 * pad;
    if window > padded {
        return Err(dim_err(
            op,
            format!("window {window} exceeds padded {axis} extent {padded} (size {size}, padding {pad})"),
        ));
    }
    Ok((padded - window) / stride + 1)
}

fn stable_sigmoid(x: f32) -> f32 {
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

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            is_param: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; gradients never flow into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            is_param: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            is_param: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var, TensorError> {
        self.conv2d_asym(input, kernel, bias, stride, padding, padding)
    }

    /// Cross-correlation with independent vertical and horizontal zero padding.
    pub fn conv2d_asym(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, pad_h: usize, pad_w: usize) -> Result<Var, TensorError> {
        const OP: &str = "conv2d";
        if stride == 0 {
            return Err(dim_err(OP, "stride must be positive"));
        }
        let x = self.value(input);
        let k = self.value(kernel);
        let b = self.value(bias);
        let [n, c, h, w] = x.dims4(OP)?;
        let [f, kc, kh, kw] = k.dims4(OP)?;
        if kc != c {
            return Err(dim_err(OP, format!("kernel expects {kc} input channels, input has {c}")));
        }
        if b.shape() != [f] {
            return Err(dim_err(OP, format!("bias shape {:?} does not match {f} filters", b.shape())));
        }
        let ho = out_extent(OP, "height", h, pad_h, kh, stride)?;
        let wo = out_extent(OP, "width", w, pad_w, kw, stride)?;
        let (xd, kd, bd) = (x.data(), k.data(), b.data());
        let mut out = vec![0f32; n * f * ho * wo];
        let mut acc = vec![0f64; ho * wo];
        for ni in 0..n {
            for fi in 0..f {
                acc.fill(bd[fi] as f64);
                for ci in 0..c {
                    let plane = &xd[(ni * c + ci) * h * w..][..h * w];
                    for i in 0..kh {
                        for j in 0..kw {
                            let kv = kd[((fi * c + ci) * kh + i) * kw + j] as f64;
                            for oy in 0..ho {
                                let iy = (oy * stride + i) as isize - pad_h as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let row = &plane[iy as usize * w..][..w];
                                let arow = &mut acc[oy * wo..][..wo];
                                for (ox, a) in arow.iter_mut().enumerate() {
                                    let ix = (ox * stride + j) as isize - pad_w as isize;
                                    if ix >= 0 && ix < w as isize {
                                        *a += kv * row[ix as usize] as f64;
                                    }
                                }
                            }
                        }
                    }
                }
                let dst = &mut out[(ni * f + fi) * ho * wo..][..ho * wo];
                for (d, a) in dst.iter_mut().zip(&acc) {
                    *d = *a as f32;
                }
            }
        }
        let value = Tensor::new(vec![n, f, ho, wo], out)?;
        check_finite(OP, &value)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom: ConvGeom { stride, pad_h, pad_w },
            },
            &[input, kernel, bias],
        ))
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var, TensorError> {
        self.maxpool2d_padded(input, window, stride, 0)
    }

    /// Max pooling where out-of-bounds positions never win (implicit `-inf` padding).
    pub fn maxpool2d_padded(&mut self, input: Var, window: usize, stride: usize, padding: usize) -> Result<Var, TensorError> {
        const OP: &str = "maxpool2d";
        if window == 0 || stride == 0 {
            return Err(dim_err(OP, "window and stride must be positive"));
        }
        if padding >= window {
            return Err(dim_err(OP, format!("padding {padding} must be smaller than window {window}")));
        }
        let x = self.value(input);
        let [n, c, h, w] = x.dims4(OP)?;
        let ho = out_extent(OP, "height", h, padding, window, stride)?;
        let wo = out_extent(OP, "width", w, padding, window, stride)?;
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for i in 0..window {
                        let iy = (oy * stride + i) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for j in 0..window {
                            let ix = (ox * stride + j) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if best_idx == usize::MAX || xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(value, Op::MaxPool { input, argmax }, &[input]))
    }

    pub fn global_maxpool(&mut self, input: Var) -> Result<Var, TensorError> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("global_maxpool")?;
        let plane = h * w;
        let mut out = Vec::with_capacity(n * c);
        let mut argmax = Vec::with_capacity(n * c);
        for (p, chunk) in x.data().chunks_exact(plane).enumerate() {
            let mut best_idx = 0;
            for (i, &v) in chunk.iter().enumerate() {
                if v > chunk[best_idx] {
                    best_idx = i;
                }
            }
            out.push(chunk[best_idx]);
            argmax.push(p * plane + best_idx);
        }
        let value = Tensor::new(vec![n, c], out)?;
        Ok(self.push(value, Op::GlobalMaxPool { input, argmax }, &[input]))
    }

    /// Affine map `input · weights + bias`.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var, TensorError> {
        const OP: &str = "dense";
        let x = self.value(input);
        let wt = self.value(weights);
        let b = self.value(bias);
        let [n, d] = x.dims2(OP)?;
        let [wd, k] = wt.dims2(OP)?;
        if wd != d {
            return Err(dim_err(OP, format!("input has {d} features but weights expect {wd}")));
        }
        if b.shape() != [k] {
            return Err(dim_err(OP, format!("bias shape {:?} does not match {k} outputs", b.shape())));
        }
        let (xd, wdata, bd) = (x.data(), wt.data(), b.data());
        let mut out = vec![0f32; n * k];
        let mut acc = vec![0f64; k];
        for r in 0..n {
            for (a, &bv) in acc.iter_mut().zip(bd) {
                *a = bv as f64;
            }
            for i in 0..d {
                let xv = xd[r * d + i] as f64;
                for (a, &wv) in acc.iter_mut().zip(&wdata[i * k..(i + 1) * k]) {
                    *a += xv * wv as f64;
                }
            }
            for (o, a) in out[r * k..(r + 1) * k].iter_mut().zip(&acc) {
                *o = *a as f32;
            }
        }
        let value = Tensor::new(vec![n, k], out)?;
        check_finite(OP, &value)?;
        Ok(self.push(value, Op::Dense { input, weights, bias }, &[input, weights, bias]))
    }

    pub fn activate(&mut self, input: Var, kind: Activation) -> Result<Var, TensorError> {
        let x = self.value(input);
        let value = match kind {
            Activation::Relu => x.map(|v| v.max(0.0)),
            Activation::Sigmoid => x.map(stable_sigmoid),
            Activation::Softmax => {
                let last = *x.shape().last().expect("rank >= 1");
                let mut out = x.clone();
                for row in out.data_mut().chunks_exact_mut(last) {
                    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    let mut total = 0f64;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        total += *v as f64;
                    }
                    for v in row.iter_mut() {
                        *v = (*v as f64 / total) as f32;
                    }
                }
                out
            }
        };
        check_finite("activate", &value)?;
        Ok(self.push(value, Op::Act(kind, input), &[input]))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var, TensorError> {
        self.activate(input, Activation::Relu)
    }

    /// Concatenates NCHW tensors along the channel axis, in argument order.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var, TensorError> {
        const OP: &str = "concat_channels";
        let first = *inputs.first().ok_or_else(|| dim_err(OP, "no inputs"))?;
        let [n, _, h, w] = self.value(first).dims4(OP)?;
        let mut total_c = 0;
        for (i, &v) in inputs.iter().enumerate() {
            let [ni, ci, hi, wi] = self.value(v).dims4(OP)?;
            if (ni, hi, wi) != (n, h, w) {
                return Err(dim_err(OP, format!("input {i} has N,H,W = {ni},{hi},{wi}; expected {n},{h},{w}")));
            }
            total_c += ci;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for &v in inputs {
                let t = self.value(v);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let value = Tensor::new(vec![n, total_c, h, w], data)?;
        Ok(self.push(value, Op::Concat { inputs: inputs.to_vec() }, inputs))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(input).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(input), &[input]))
    }

    /// Collapses everything after the batch axis.
    pub fn flatten(&mut self, input: Var) -> Result<Var, TensorError> {
        let shape = self.value(input).shape().to_vec();
        let rest: usize = shape[1..].iter().product();
        self.reshape(input, &[shape[0], rest])
    }

    /// Elementwise product of equally-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(dim_err("mul", format!("shapes {:?} and {:?} differ", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        check_finite("mul", &value)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var, TensorError> {
        let s: f64 = self.value(input).data().iter().map(|&v| v as f64).sum();
        let value = Tensor::scalar(s as f32);
        check_finite("sum", &value)?;
        Ok(self.push(value, Op::Sum(input), &[input]))
    }

    pub fn mean(&mut self, input: Var) -> Result<Var, TensorError> {
        let t = self.value(input);
        let s: f64 = t.data().iter().map(|&v| v as f64).sum();
        let value = Tensor::scalar((s / t.len() as f64) as f32);
        Ok(self.push(value, Op::Mean(input), &[input]))
    }

    /// Mean binary cross-entropy of probability scores (any shape with one
    /// element per sample) against 0/1 labels. Scores are clamped into
    /// `[PROB_CLAMP, 1 - PROB_CLAMP]` before the logarithm.
    pub fn binary_cross_entropy(&mut self, scores: Var, labels: &[f32]) -> Result<Var, TensorError> {
        const OP: &str = "binary_cross_entropy";
        let s = self.value(scores);
        if labels.is_empty() {
            return Err(TensorError::EmptyBatch(OP));
        }
        if s.len() != labels.len() {
            return Err(dim_err(OP, format!("{} scores for {} labels", s.len(), labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(TensorError::BadLabel { op: OP, label });
        }
        let total: f64 = s
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let p = (p as f64).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                let y = y as f64;
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let value = Tensor::scalar((total / labels.len() as f64) as f32);
        check_finite(OP, &value)?;
        Ok(self.push(
            value,
            Op::BinaryCrossEntropy {
                scores,
                labels: labels.to_vec(),
            },
            &[scores],
        ))
    }

    /// Mean negative log-likelihood of class-probability rows `[N, K]`
    /// against integer class labels, with the same clamp as the binary loss.
    pub fn categorical_cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var, TensorError> {
        const OP: &str = "categorical_cross_entropy";
        let p = self.value(probs);
        let [n, k] = p.dims2(OP)?;
        if labels.is_empty() {
            return Err(TensorError::EmptyBatch(OP));
        }
        if n != labels.len() {
            return Err(dim_err(OP, format!("{n} rows for {} labels", labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= k) {
            return Err(TensorError::BadLabel { op: OP, label: label as f32 });
        }
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &y)| -((p.data()[r * k + y] as f64).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)).ln())
            .sum();
        let value = Tensor::scalar((total / n as f64) as f32);
        check_finite(OP, &value)?;
        Ok(self.push(
            value,
            Op::CategoricalCrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            &[probs],
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.is_param && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            } else if !node.is_param {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, geom } => {
                let (dx, dk, db) = self.conv2d_backward(*input, *kernel, geom, g);
                if self.wants(*input) {
                    add_into(&mut grads[input.0], dx);
                }
                if self.wants(*kernel) {
                    add_into(&mut grads[kernel.0], dk);
                }
                if self.wants(*bias) {
                    add_into(&mut grads[bias.0], db);
                }
            }
            Op::MaxPool { input, argmax } | Op::GlobalMaxPool { input, argmax } => {
                if self.wants(*input) {
                    let mut dx = Tensor::zeros(self.value(*input).shape());
                    let d = dx.data_mut();
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        d[src] += gv;
                    }
                    add_into(&mut grads[input.0], dx);
                }
            }
            Op::Dense { input, weights, bias } => {
                let x = self.value(*input);
                let wt = self.value(*weights);
                let [n, d] = [x.shape()[0], x.shape()[1]];
                let k = wt.shape()[1];
                let gd = g.data();
                if self.wants(*input) {
                    let mut dx = vec![0f32; n * d];
                    for r in 0..n {
                        let grow = &gd[r * k..(r + 1) * k];
                        for i in 0..d {
                            let s: f64 = grow.iter().zip(&wt.data()[i * k..(i + 1) * k]).map(|(&a, &b)| a as f64 * b as f64).sum();
                            dx[r * d + i] = s as f32;
                        }
                    }
                    add_into(&mut grads[input.0], Tensor::new(vec![n, d], dx).expect("shape"));
                }
                if self.wants(*weights) {
                    let mut dw = vec![0f64; d * k];
                    for r in 0..n {
                        let grow = &gd[r * k..(r + 1) * k];
                        for i in 0..d {
                            let xv = x.data()[r * d + i] as f64;
                            for (acc, &gv) in dw[i * k..(i + 1) * k].iter_mut().zip(grow) {
                                *acc += xv * gv as f64;
                            }
                        }
                    }
                    let dw = dw.into_iter().map(|v| v as f32).collect();
                    add_into(&mut grads[weights.0], Tensor::new(vec![d, k], dw).expect("shape"));
                }
                if self.wants(*bias) {
                    let mut db = vec![0f64; k];
                    for grow in gd.chunks_exact(k) {
                        for (acc, &gv) in db.iter_mut().zip(grow) {
                            *acc += gv as f64;
                        }
                    }
                    let db = db.into_iter().map(|v| v as f32).collect();
                    add_into(&mut grads[bias.0], Tensor::new(vec![k], db).expect("shape"));
                }
            }
            Op::Act(kind, input) => {
                if !self.wants(*input) {
                    return;
                }
                let x = self.value(*input);
                let y = &node.value;
                let dx = match kind {
                    Activation::Relu => {
                        let data = x.data().iter().zip(g.data()).map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 }).collect();
                        Tensor::new(x.shape().to_vec(), data).expect("shape")
                    }
                    Activation::Sigmoid => {
                        let data = y.data().iter().zip(g.data()).map(|(&s, &gv)| gv * s * (1.0 - s)).collect();
                        Tensor::new(x.shape().to_vec(), data).expect("shape")
                    }
                    Activation::Softmax => {
                        let last = *x.shape().last().expect("rank >= 1");
                        let mut dx = Vec::with_capacity(x.len());
                        for (srow, grow) in y.data().chunks_exact(last).zip(g.data().chunks_exact(last)) {
                            let dot: f64 = srow.iter().zip(grow).map(|(&s, &gv)| s as f64 * gv as f64).sum();
                            dx.extend(srow.iter().zip(grow).map(|(&s, &gv)| (s as f64 * (gv as f64 - dot)) as f32));
                        }
                        Tensor::new(x.shape().to_vec(), dx).expect("shape")
                    }
                };
                add_into(&mut grads[input.0], dx);
            }
            Op::Concat { inputs } => {
                let [n, total_c, h, w] = [g.shape()[0], g.shape()[1], g.shape()[2], g.shape()[3]];
                let plane = h * w;
                let mut offset = 0;
                for &v in inputs {
                    let c = self.value(v).shape()[1];
                    if self.wants(v) {
                        let mut data = Vec::with_capacity(n * c * plane);
                        for b in 0..n {
                            let start = (b * total_c + offset) * plane;
                            data.extend_from_slice(&g.data()[start..start + c * plane]);
                        }
                        add_into(&mut grads[v.0], Tensor::new(vec![n, c, h, w], data).expect("shape"));
                    }
                    offset += c;
                }
            }
            Op::Reshape(input) => {
                if self.wants(*input) {
                    let dx = g.reshape(self.value(*input).shape()).expect("same length");
                    add_into(&mut grads[input.0], dx);
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let data = y.data().iter().zip(g.data()).map(|(q, gv)| q * gv).collect();
                    add_into(&mut grads[a.0], Tensor::new(x.shape().to_vec(), data).expect("shape"));
                }
                if self.wants(*b) {
                    let data = x.data().iter().zip(g.data()).map(|(p, gv)| p * gv).collect();
                    add_into(&mut grads[b.0], Tensor::new(y.shape().to_vec(), data).expect("shape"));
                }
            }
            Op::Sum(input) => {
                if self.wants(*input) {
                    add_into(&mut grads[input.0], Tensor::full(self.value(*input).shape(), g.data()[0]));
                }
            }
            Op::Mean(input) => {
                if self.wants(*input) {
                    let x = self.value(*input);
                    let v = (g.data()[0] as f64 / x.len() as f64) as f32;
                    add_into(&mut grads[input.0], Tensor::full(x.shape(), v));
                }
            }
            Op::BinaryCrossEntropy { scores, labels } => {
                if !self.wants(*scores) {
                    return;
                }
                let s = self.value(*scores);
                let scale = g.data()[0] as f64 / labels.len() as f64;
                let data = s
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&p, &y)| {
                        let p = p as f64;
                        if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                            return 0.0;
                        }
                        let y = y as f64;
                        (scale * ((1.0 - y) / (1.0 - p) - y / p)) as f32
                    })
                    .collect();
                add_into(&mut grads[scores.0], Tensor::new(s.shape().to_vec(), data).expect("shape"));
            }
            Op::CategoricalCrossEntropy { probs, labels } => {
                if !self.wants(*probs) {
                    return;
                }
                let p = self.value(*probs);
                let k = p.shape()[1];
                let scale = g.data()[0] as f64 / labels.len() as f64;
                let mut dx = Tensor::zeros(p.shape());
                for (r, &y) in labels.iter().enumerate() {
                    let pv = p.data()[r * k + y] as f64;
                    if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pv) {
                        dx.data_mut()[r * k + y] = (-scale / pv) as f32;
                    }
                }
                add_into(&mut grads[probs.0], dx);
            }
        }
    }

    fn conv2d_backward(&self, input: Var, kernel: Var, geom: &ConvGeom, g: &Tensor) -> (Tensor, Tensor, Tensor) {
        let x = self.value(input);
        let k = self.value(kernel);
        let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [f, _, kh, kw] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]];
        let [ho, wo] = [g.shape()[2], g.shape()[3]];
        let (xd, kd, gd) = (x.data(), k.data(), g.data());
        let ConvGeom { stride, pad_h, pad_w } = *geom;

        let mut dx = vec![0f64; x.len()];
        let mut dk = vec![0f64; k.len()];
        let mut db = vec![0f64; f];
        for ni in 0..n {
            for fi in 0..f {
                let gplane = &gd[(ni * f + fi) * ho * wo..][..ho * wo];
                db[fi] += gplane.iter().map(|&v| v as f64).sum::<f64>();
                for ci in 0..c {
                    let xoff = (ni * c + ci) * h * w;
                    for i in 0..kh {
                        for j in 0..kw {
                            let kidx = ((fi * c + ci) * kh + i) * kw + j;
                            let kv = kd[kidx] as f64;
                            let mut dkv = 0f64;
                            for oy in 0..ho {
                                let iy = (oy * stride + i) as isize - pad_h as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let row = xoff + iy as usize * w;
                                for ox in 0..wo {
                                    let ix = (ox * stride + j) as isize - pad_w as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let gv = gplane[oy * wo + ox] as f64;
                                    let xi = row + ix as usize;
                                    dkv += gv * xd[xi] as f64;
                                    dx[xi] += gv * kv;
                                }
                            }
                            dk[kidx] += dkv;
                        }
                    }
                }
            }
        }
        let cast = |v: Vec<f64>| v.into_iter().map(|a| a as f32).collect::<Vec<_>>();
        (
            Tensor::new(x.shape().to_vec(), cast(dx)).expect("shape"),
            Tensor::new(k.shape().to_vec(), cast(dk)).expect("shape"),
            Tensor::new(vec![f], cast(db)).expect("shape"),
        )
    }
}
