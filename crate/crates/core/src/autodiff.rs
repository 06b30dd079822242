//! Tape-based reverse-mode differentiation over the small op set the two
//! trainers need.
//!
//! Every op evaluates eagerly and appends a node holding its value, so the
//! tape is topologically ordered by construction. [`Tape::backward`] walks
//! it once in reverse, accumulating adjoints only for nodes that depend on a
//! parameter leaf.

use std::collections::BTreeMap;

use crate::dynamics::logistic;
use crate::error::{invalid, shape, Result};
use crate::grid::{correlate_same, correlate_same_grad_image, correlate_same_grad_kernel, Grid};

/// Dense row-major tensor. A scalar has shape `[]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(self::shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn from_grid(grid: &Grid) -> Self {
        Self { shape: vec![grid.height(), grid.width()], data: grid.data().to_vec() }
    }

    pub fn to_grid(&self) -> Result<Grid> {
        match self.shape[..] {
            [h, w] => Grid::new(h, w, self.data.clone()),
            _ => Err(self::shape(format!("tensor of shape {:?} is not a grid", self.shape))),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(self::shape(format!("expected one element, tensor has shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2dSame { image: NodeId, kernel: NodeId },
    ConvLayer { input: NodeId, weight: NodeId, bias: NodeId, stride: usize },
    SigmoidThreshold { x: NodeId, a: NodeId, s: f64 },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    Dense { weight: NodeId, input: NodeId, bias: NodeId },
    GlobalAvgPool(NodeId),
    MseLoss { pred: NodeId, target: NodeId },
    Reshape(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    is_param: bool,
    needs_grad: bool,
}

#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every parameter leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_param: BTreeMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { op, value, is_param: false, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf; receives a gradient in [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value, is_param: true, needs_grad: true });
        NodeId(self.nodes.len() - 1)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value, is_param: false, needs_grad: false });
        NodeId(self.nodes.len() - 1)
    }

    fn dims(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].value.shape
    }

    /// Same-size zero-padded cross-correlation of a `[h, w]` image with an
    /// odd-sided `[kh, kw]` kernel.
    pub fn conv2d_same(&mut self, image: NodeId, kernel: NodeId) -> Result<NodeId> {
        let (h, w) = match self.dims(image) {
            &[h, w] => (h, w),
            s => return Err(shape(format!("conv2d_same image must be 2D, got {s:?}"))),
        };
        let (kh, kw) = match self.dims(kernel) {
            &[kh, kw] => (kh, kw),
            s => return Err(shape(format!("conv2d_same kernel must be 2D, got {s:?}"))),
        };
        if kh % 2 == 0 || kw % 2 == 0 || kh > h || kw > w {
            return Err(invalid(format!("kernel {kh}x{kw} invalid for image {h}x{w}")));
        }
        let mut out = vec![0.0; h * w];
        correlate_same(self.value(image).data(), h, w, self.value(kernel).data(), kh, kw, &mut out);
        let value = Tensor { shape: vec![h, w], data: out };
        Ok(self.push(Op::Conv2dSame { image, kernel }, value, &[image, kernel]))
    }

    /// Multi-channel convolution layer: input `[c, h, w]`, weight
    /// `[o, c, k, k]` (odd `k`, padding `k / 2`), bias `[o]`, given stride.
    /// Output is `[o, (h - 1) / stride + 1, (w - 1) / stride + 1]`.
    pub fn conv_layer(&mut self, input: NodeId, weight: NodeId, bias: NodeId, stride: usize) -> Result<NodeId> {
        let (c, h, w) = match self.dims(input) {
            &[c, h, w] => (c, h, w),
            s => return Err(shape(format!("conv layer input must be [c, h, w], got {s:?}"))),
        };
        let (o, wc, k) = match self.dims(weight) {
            &[o, wc, k1, k2] if k1 == k2 && k1 % 2 == 1 => (o, wc, k1),
            s => return Err(shape(format!("conv layer weight must be [o, c, k, k] with odd k, got {s:?}"))),
        };
        if wc != c || self.dims(bias) != [o] || stride == 0 {
            return Err(shape(format!(
                "conv layer mismatch: input channels {c}, weight channels {wc}, bias {:?}, stride {stride}",
                self.dims(bias)
            )));
        }
        let geo = ConvGeometry { c, h, w, o, k, stride };
        let out = geo.forward(self.value(input).data(), self.value(weight).data(), self.value(bias).data());
        let value = Tensor { shape: vec![o, geo.out_h(), geo.out_w()], data: out };
        Ok(self.push(Op::ConvLayer { input, weight, bias, stride }, value, &[input, weight, bias]))
    }

    /// Elementwise `1 / (1 + exp(-s (x - a)))` with a scalar threshold node `a`.
    pub fn sigmoid_threshold(&mut self, x: NodeId, a: NodeId, s: f64) -> Result<NodeId> {
        let a_val = self.value(a).item()?;
        if !(s > 0.0) {
            return Err(invalid(format!("steepness must be positive, got {s}")));
        }
        let xv = self.value(x);
        let data = xv.data.iter().map(|&v| logistic(s * (v - a_val))).collect();
        let value = Tensor { shape: xv.shape.clone(), data };
        Ok(self.push(Op::SigmoidThreshold { x, a, s }, value, &[x, a]))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(shape(format!("{what}: {:?} vs {:?}", self.dims(a), self.dims(b))));
        }
        Ok(())
    }

    fn zip_with(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        Tensor { shape: av.shape.clone(), data }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(Op::Add(a, b), v, &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), v, &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), v, &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let av = self.value(a);
        let v = Tensor { shape: av.shape.clone(), data: av.data.iter().map(|x| x * factor).collect() };
        self.push(Op::Scale(a, factor), v, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let v = Tensor { shape: av.shape.clone(), data: av.data.iter().map(|x| x.max(0.0)).collect() };
        self.push(Op::Relu(a), v, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let v = Tensor { shape: av.shape.clone(), data: av.data.iter().map(|&x| logistic(x)).collect() };
        self.push(Op::Sigmoid(a), v, &[a])
    }

    /// `weight · input + bias` with weight `[o, i]`, input `[i]`, bias `[o]`.
    pub fn dense(&mut self, weight: NodeId, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let (o, i) = match self.dims(weight) {
            &[o, i] => (o, i),
            s => return Err(shape(format!("dense weight must be 2D, got {s:?}"))),
        };
        if self.dims(input) != [i] || self.dims(bias) != [o] {
            return Err(shape(format!(
                "dense [{o}, {i}] with input {:?} and bias {:?}",
                self.dims(input),
                self.dims(bias)
            )));
        }
        let wv = self.value(weight).data();
        let xv = self.value(input).data();
        let bv = self.value(bias).data();
        let data =
            (0..o).map(|r| bv[r] + wv[r * i..(r + 1) * i].iter().zip(xv).map(|(a, b)| a * b).sum::<f64>()).collect();
        let v = Tensor { shape: vec![o], data };
        Ok(self.push(Op::Dense { weight, input, bias }, v, &[weight, input, bias]))
    }

    /// Mean over the spatial axes of a `[c, h, w]` tensor, giving `[c]`.
    pub fn global_average_pool(&mut self, a: NodeId) -> Result<NodeId> {
        let (c, h, w) = match self.dims(a) {
            &[c, h, w] => (c, h, w),
            s => return Err(shape(format!("pooling needs [c, h, w], got {s:?}"))),
        };
        let av = self.value(a).data();
        let n = (h * w) as f64;
        let data = (0..c).map(|ch| av[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / n).collect();
        let v = Tensor { shape: vec![c], data };
        Ok(self.push(Op::GlobalAvgPool(a), v, &[a]))
    }

    /// Scalar `mean((pred − target)²)`.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.same_shape(pred, target, "mse_loss")?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let n = p.len() as f64;
        let loss = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        Ok(self.push(Op::MseLoss { pred, target }, Tensor::scalar(loss), &[pred, target]))
    }

    pub fn reshape(&mut self, a: NodeId, new_shape: Vec<usize>) -> Result<NodeId> {
        let av = self.value(a);
        if new_shape.iter().product::<usize>() != av.numel() {
            return Err(shape(format!("cannot reshape {:?} into {new_shape:?}", av.shape)));
        }
        let v = Tensor { shape: new_shape, data: av.data.clone() };
        Ok(self.push(Op::Reshape(a), v, &[a]))
    }

    /// Reverse sweep from a scalar loss. Returns gradients for parameter
    /// leaves only.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(invalid(format!("backward needs a scalar loss, node has shape {:?}", self.value(loss).shape)));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.is_param {
                adj[idx] = Some(g);
                continue;
            }
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut adj);
        }

        let mut by_param = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if node.is_param {
                let data = adj[idx].take().unwrap_or_else(|| vec![0.0; node.value.numel()]);
                by_param.insert(NodeId(idx), Tensor { shape: node.value.shape.clone(), data });
            }
        }
        Ok(Gradients { by_param })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn slot<'a>(&self, id: NodeId, adj: &'a mut [Option<Vec<f64>>]) -> &'a mut Vec<f64> {
        let n = self.nodes[id.0].value.numel();
        adj[id.0].get_or_insert_with(|| vec![0.0; n])
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        macro_rules! acc {
            ($id:expr) => {
                self.slot($id, adj)
            };
        }

        match node.op {
            Op::Leaf => {}
            Op::Conv2dSame { image, kernel } => {
                let (h, w) = (node.value.shape[0], node.value.shape[1]);
                let kv = self.value(kernel);
                let (kh, kw) = (kv.shape[0], kv.shape[1]);
                if self.wants(image) {
                    let gi = acc!(image);
                    correlate_same_grad_image(g, h, w, kv.data(), kh, kw, gi);
                }
                if self.wants(kernel) {
                    let gk = acc!(kernel);
                    correlate_same_grad_kernel(self.value(image).data(), g, h, w, kh, kw, gk);
                }
            }
            Op::ConvLayer { input, weight, bias, stride } => {
                let iv = self.value(input);
                let wv = self.value(weight);
                let geo = ConvGeometry {
                    c: iv.shape[0],
                    h: iv.shape[1],
                    w: iv.shape[2],
                    o: wv.shape[0],
                    k: wv.shape[2],
                    stride,
                };
                if self.wants(bias) {
                    let gb = acc!(bias);
                    let plane = geo.out_h() * geo.out_w();
                    for (o, b) in gb.iter_mut().enumerate() {
                        *b += g[o * plane..(o + 1) * plane].iter().sum::<f64>();
                    }
                }
                if self.wants(weight) {
                    let gw = acc!(weight);
                    geo.grad_weight(iv.data(), g, gw);
                }
                if self.wants(input) {
                    let gi = acc!(input);
                    geo.grad_input(wv.data(), g, gi);
                }
            }
            Op::SigmoidThreshold { x, a, s } => {
                let y = node.value.data();
                if self.wants(x) {
                    let gx = acc!(x);
                    for ((d, &yi), &gi) in gx.iter_mut().zip(y).zip(g) {
                        *d += gi * s * yi * (1.0 - yi);
                    }
                }
                if self.wants(a) {
                    let total: f64 = y.iter().zip(g).map(|(&yi, &gi)| gi * s * yi * (1.0 - yi)).sum();
                    acc!(a)[0] -= total;
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.wants(a) {
                    for (d, gi) in acc!(a).iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                if self.wants(b) {
                    for (d, gi) in acc!(b).iter_mut().zip(g) {
                        *d += sign * gi;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    let bv = self.value(b).data();
                    for ((d, gi), bi) in acc!(a).iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if self.wants(b) {
                    let av = self.value(a).data();
                    for ((d, gi), ai) in acc!(b).iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Scale(a, f) => {
                for (d, gi) in acc!(a).iter_mut().zip(g) {
                    *d += f * gi;
                }
            }
            Op::Relu(a) => {
                let av = self.value(a).data();
                for ((d, gi), ai) in acc!(a).iter_mut().zip(g).zip(av) {
                    if *ai > 0.0 {
                        *d += gi;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                for ((d, gi), yi) in acc!(a).iter_mut().zip(g).zip(y) {
                    *d += gi * yi * (1.0 - yi);
                }
            }
            Op::Dense { weight, input, bias } => {
                let (o, i) = (self.value(weight).shape[0], self.value(weight).shape[1]);
                if self.wants(bias) {
                    for (d, gi) in acc!(bias).iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                if self.wants(weight) {
                    let xv = self.value(input).data();
                    let gw = acc!(weight);
                    for r in 0..o {
                        for (d, xi) in gw[r * i..(r + 1) * i].iter_mut().zip(xv) {
                            *d += g[r] * xi;
                        }
                    }
                }
                if self.wants(input) {
                    let wv = self.value(weight).data();
                    let gx = acc!(input);
                    for r in 0..o {
                        for (d, wi) in gx.iter_mut().zip(&wv[r * i..(r + 1) * i]) {
                            *d += g[r] * wi;
                        }
                    }
                }
            }
            Op::GlobalAvgPool(a) => {
                let s = &self.value(a).shape;
                let plane = s[1] * s[2];
                let n = plane as f64;
                let ga = acc!(a);
                for (ch, gi) in g.iter().enumerate() {
                    for d in &mut ga[ch * plane..(ch + 1) * plane] {
                        *d += gi / n;
                    }
                }
            }
            Op::MseLoss { pred, target } => {
                let p = self.value(pred).data();
                let t = self.value(target).data();
                let c = 2.0 * g[0] / p.len() as f64;
                if self.wants(pred) {
                    for ((d, pi), ti) in acc!(pred).iter_mut().zip(p).zip(t) {
                        *d += c * (pi - ti);
                    }
                }
                if self.wants(target) {
                    for ((d, pi), ti) in acc!(target).iter_mut().zip(p).zip(t) {
                        *d -= c * (pi - ti);
                    }
                }
            }
            Op::Reshape(a) => {
                for (d, gi) in acc!(a).iter_mut().zip(g) {
                    *d += gi;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
}

impl ConvGeometry {
    fn out_h(&self) -> usize {
        (self.h - 1) / self.stride + 1
    }

    fn out_w(&self) -> usize {
        (self.w - 1) / self.stride + 1
    }

    /// Calls `f(out_index, in_index, weight_index)` for every valid tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let pad = (self.k / 2) as isize;
        for o in 0..self.o {
            for c in 0..self.c {
                for i in 0..self.k {
                    for j in 0..self.k {
                        let widx = ((o * self.c + c) * self.k + i) * self.k + j;
                        for y in 0..oh {
                            let sy = (y * self.stride) as isize + i as isize - pad;
                            if sy < 0 || sy >= self.h as isize {
                                continue;
                            }
                            for x in 0..ow {
                                let sx = (x * self.stride) as isize + j as isize - pad;
                                if sx < 0 || sx >= self.w as isize {
                                    continue;
                                }
                                let iidx = (c * self.h + sy as usize) * self.w + sx as usize;
                                f((o * oh + y) * ow + x, iidx, widx);
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let plane = self.out_h() * self.out_w();
        let mut out = vec![0.0; self.o * plane];
        for (o, b) in bias.iter().enumerate() {
            out[o * plane..(o + 1) * plane].fill(*b);
        }
        self.for_each_tap(|oi, ii, wi| out[oi] += weight[wi] * input[ii]);
        out
    }

    fn grad_weight(&self, input: &[f64], g: &[f64], gw: &mut [f64]) {
        self.for_each_tap(|oi, ii, wi| gw[wi] += g[oi] * input[ii]);
    }

    fn grad_input(&self, weight: &[f64], g: &[f64], gi: &mut [f64]) {
        self.for_each_tap(|oi, ii, wi| gi[ii] += g[oi] * weight[wi]);
    }
}

/// Outcome of comparing [`Tape::backward`] against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub n_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Gradients smaller than this are compared in absolute terms.
    pub floor: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, floor: 1e-6 }
    }
}

/// Checks backward against central differences for every entry of every
/// parameter. `build` receives the parameter leaves (in the order of
/// `params`) and returns the scalar loss node; it must be deterministic.
///
/// The per-entry error is `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
pub fn gradcheck<F>(params: &[Tensor], build: F, options: GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor]| -> Result<(Tape, Vec<NodeId>, NodeId)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        Ok((tape, ids, loss))
    };

    let (tape, ids, loss) = eval(params)?;
    let grads = tape.backward(loss)?;
    let mut work = params.to_vec();
    let mut max_rel: f64 = 0.0;
    let mut n_checked = 0;
    for (p, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).expect("parameter gradient").data().to_vec();
        for e in 0..work[p].numel() {
            let orig = work[p].data[e];
            work[p].data[e] = orig + options.step;
            let (t, _, l) = eval(&work)?;
            let plus = t.value(l).item()?;
            work[p].data[e] = orig - options.step;
            let (t, _, l) = eval(&work)?;
            let minus = t.value(l).item()?;
            work[p].data[e] = orig;

            let numeric = (plus - minus) / (2.0 * options.step);
            let denom = analytic[e].abs().max(numeric.abs()).max(options.floor);
            max_rel = max_rel.max((analytic[e] - numeric).abs() / denom);
            n_checked += 1;
        }
    }
    Ok(GradcheckReport {
        max_rel_error: max_rel,
        n_checked,
        tolerance: options.tolerance,
        passed: max_rel <= options.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn mse_of_identical_inputs_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.3, -1.0, 2.0]));
        let loss = tape.mse_loss(x, x).unwrap();
        assert_eq!(tape.value(loss).item().unwrap(), 0.0);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_by_one_kernel_closed_form() {
        // loss = mean((k u − t)²) over 4 pixels; dL/dk = (2/4) Σ (k u − t) u
        let u = [1.0, 2.0, -1.0, 0.5];
        let t = [0.5, 1.0, 0.0, 2.0];
        let k = 0.7;
        let mut tape = Tape::new();
        let ui = tape.constant(Tensor::new(vec![2, 2], u.to_vec()).unwrap());
        let ti = tape.constant(Tensor::new(vec![2, 2], t.to_vec()).unwrap());
        let ki = tape.param(Tensor::new(vec![1, 1], vec![k]).unwrap());
        let y = tape.conv2d_same(ui, ki).unwrap();
        let loss = tape.mse_loss(y, ti).unwrap();
        let g = tape.backward(loss).unwrap();
        let expected: f64 = u.iter().zip(&t).map(|(ui, ti)| 0.5 * (k * ui - ti) * ui).sum();
        assert!((g.get(ki).unwrap().data()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.relu(x);
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn constants_receive_no_gradient_entry() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let p = tape.param(Tensor::scalar(3.0));
        let m = tape.mul(c, p).unwrap();
        let g = tape.backward(m).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.get(p).unwrap().data(), &[2.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn conv_graph_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let image = random(&mut rng, vec![7, 6], 0.0, 1.0);
        let target = random(&mut rng, vec![7, 6], 0.0, 1.0);
        let kernel = random(&mut rng, vec![3, 5], -0.5, 0.5);
        let report = gradcheck(
            &[image, kernel],
            |tape, p| {
                let t = tape.constant(target.clone());
                let y = tape.conv2d_same(p[0], p[1])?;
                tape.mse_loss(y, t)
            },
            GradcheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn mixed_op_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = random(&mut rng, vec![2, 6, 5], 0.0, 1.0);
        let weight = random(&mut rng, vec![3, 2, 3, 3], -0.5, 0.5);
        let bias = random(&mut rng, vec![3], -0.1, 0.1);
        let dense_w = random(&mut rng, vec![4, 3], -1.0, 1.0);
        let dense_b = random(&mut rng, vec![4], -0.1, 0.1);
        let target = Tensor::vector(vec![0.2, 0.8, 0.5, 0.1]);
        let report = gradcheck(
            &[input, weight, bias, dense_w, dense_b],
            |tape, p| {
                let c = tape.conv_layer(p[0], p[1], p[2], 2)?;
                let r = tape.relu(c);
                let pooled = tape.global_average_pool(r)?;
                let d = tape.dense(p[3], pooled, p[4])?;
                let s = tape.sigmoid(d);
                let sq = tape.mul(s, s)?;
                let mix = tape.sub(sq, s)?;
                let scaled = tape.scale(mix, 3.0);
                let sum = tape.add(scaled, s)?;
                let reshaped = tape.reshape(sum, vec![2, 2])?;
                let t = tape.constant(Tensor::new(vec![2, 2], target.data().to_vec())?);
                tape.mse_loss(reshaped, t)
            },
            GradcheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn sigmoid_threshold_gradcheck_including_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&mut rng, vec![4, 4], 0.3, 0.7);
        let a = Tensor::scalar(0.5);
        let target = random(&mut rng, vec![4, 4], 0.0, 1.0);
        let report = gradcheck(
            &[x, a],
            |tape, p| {
                let t = tape.constant(target.clone());
                let y = tape.sigmoid_threshold(p[0], p[1], 8.0)?;
                tape.mse_loss(y, t)
            },
            GradcheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn shared_kernel_accumulates_per_layer_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let frame = random(&mut rng, vec![8, 8], 0.0, 1.0);
        let target = random(&mut rng, vec![8, 8], 0.0, 1.0);
        let kernel = random(&mut rng, vec![3, 3], 0.0, 0.3);

        let build = |tape: &mut Tape, ks: [NodeId; 3]| {
            let f = tape.constant(frame.clone());
            let t = tape.constant(target.clone());
            let mut cur = f;
            for k in ks {
                cur = tape.conv2d_same(cur, k).unwrap();
            }
            tape.mse_loss(cur, t).unwrap()
        };

        let mut shared = Tape::new();
        let k = shared.param(kernel.clone());
        let loss = build(&mut shared, [k, k, k]);
        let g_shared = shared.backward(loss).unwrap();

        let mut split = Tape::new();
        let ks = [0; 3].map(|_| split.param(kernel.clone()));
        let loss = build(&mut split, ks);
        let g_split = split.backward(loss).unwrap();

        for e in 0..9 {
            let sum: f64 = ks.iter().map(|k| g_split.get(*k).unwrap().data()[e]).sum();
            assert!((g_shared.get(k).unwrap().data()[e] - sum).abs() < 1e-14);
        }
    }

    #[test]
    fn conv_layer_output_shape() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![4, 48, 48]));
        let w = tape.param(Tensor::zeros(vec![16, 4, 3, 3]));
        let b = tape.param(Tensor::zeros(vec![16]));
        let y = tape.conv_layer(x, w, b, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[16, 24, 24]);
        let bad = tape.param(Tensor::zeros(vec![16, 3, 3, 3]));
        assert!(tape.conv_layer(x, bad, b, 2).is_err());
    }
}
