//! Reverse-mode autodiff over a linear tape.
//!
//! Every operation appends a node holding its value; `backward` walks the
//! tape in reverse. Nodes that do not depend on a trainable leaf are
//! skipped entirely.

use std::sync::Arc;

use super::conv::{conv3d_backward, conv3d_forward, ConvGeom};
use super::expand::ExpansionPlan;
use super::interp;
use super::{dims5, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    ScalarMul(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Square(Var),
    SqrtEps(Var),
    Mean(Var),
    Sum(Var),
    Conv3d { input: Var, kernel: Var, geom: ConvGeom },
    AddBias { x: Var, bias: Var },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Crop { x: Var },
    Upsample2(Var),
    GridSample { image: Var, disp: Var },
    BoxSum { x: Var, window: usize },
    ForwardDiff { x: Var, axis: usize },
    GatherMul { x: Var, gates: Var, index: Arc<[usize]> },
    Expand { weights: Var, plan: Arc<ExpansionPlan> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every trainable leaf.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when it does not influence the loss.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor { shape: self.shapes[v.0].clone(), data: g.clone() })
    }

    /// Gradient for `v`, zeros when it does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

/// Leading-dimension broadcast: `b` may have leading extent 1 where `a` has N.
fn broadcast(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let compatible = |big: &[usize], small: &[usize]| {
        big.len() == small.len() && !big.is_empty() && small[0] == 1 && big[1..] == small[1..]
    };
    if compatible(a, b) {
        Ok(a.to_vec())
    } else if compatible(b, a) {
        Ok(b.to_vec())
    } else if b.iter().product::<usize>() == 1 {
        Ok(a.to_vec())
    } else if a.iter().product::<usize>() == 1 {
        Ok(b.to_vec())
    } else {
        Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}")))
    }
}

/// Sums a broadcast gradient back down to `len` elements.
fn reduce_to(g: &[f64], len: usize) -> Vec<f64> {
    if g.len() == len {
        return g.to_vec();
    }
    let mut out = vec![0.0; len];
    for (i, v) in g.iter().enumerate() {
        out[i % len] += v;
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub const SQRT_EPS: f64 = 1e-12;

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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast(&ta.shape, &tb.shape)?;
        let n: usize = shape.iter().product();
        let (la, lb) = (ta.data.len(), tb.data.len());
        let data = (0..n).map(|i| f(ta.data[i % la], tb.data[i % lb])).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape, data }, op, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scalar_mul(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| s * v, Op::ScalarMul(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// `sqrt(x + 1e-12)`, finite gradient at zero.
    pub fn sqrt_eps(&mut self, x: Var) -> Var {
        self.unary(x, |v| (v + SQRT_EPS).sqrt(), Op::SqrtEps(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data.iter().sum::<f64>() / t.data.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum::<f64>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Zero-padded 3D cross-correlation; `kernel` is `[Cout, Cin, K, K, K]`.
    pub fn conv3d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::new(dims5(self.shape(input))?, dims5(self.shape(kernel))?, stride, pad)?;
        let out = conv3d_forward(&geom, &self.value(input).data, &self.value(kernel).data);
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(Tensor { shape: geom.out_shape().to_vec(), data: out }, Op::Conv3d { input, kernel, geom }, rg))
    }

    /// Adds a per-channel bias `[B]` to the first `B` channels of `[N, C, ...]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.rank() < 2 || tb.rank() != 1 || tb.shape[0] > tx.shape[1] {
            return Err(Error::Shape(format!("bias {:?} does not match input {:?}", tb.shape, tx.shape)));
        }
        let (c, nb) = (tx.shape[1], tb.shape[0]);
        let inner: usize = tx.shape[2..].iter().product();
        let data = tx
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let ch = (i / inner) % c;
                if ch < nb {
                    v + tb.data[ch]
                } else {
                    *v
                }
            })
            .collect();
        let t = Tensor { shape: tx.shape.clone(), data };
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddBias { x, bias }, rg))
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| Error::Shape("empty concat".into()))?).to_vec();
        if first.len() < 2 {
            return Err(Error::Shape(format!("concat needs [N, C, ...], got {first:?}")));
        }
        let mut c = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                return Err(Error::Shape(format!("cannot concat {first:?} with {s:?}")));
            }
            c += s[1];
        }
        let inner: usize = first[2..].iter().product();
        let n = first[0];
        let mut data = Vec::with_capacity(n * c * inner);
        for b in 0..n {
            for &p in parts {
                let t = self.value(p);
                let len = t.shape[1] * inner;
                data.extend_from_slice(&t.data[b * len..(b + 1) * len]);
            }
        }
        let mut shape = first;
        shape[1] = c;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor { shape, data }, Op::Concat(parts.to_vec()), rg))
    }

    /// Channels `start..start+len` of `[N, C, ...]`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() < 2 || start + len > t.shape[1] {
            return Err(Error::Shape(format!("channel slice {start}..{} out of {:?}", start + len, t.shape)));
        }
        let (n, c) = (t.shape[0], t.shape[1]);
        let inner: usize = t.shape[2..].iter().product();
        let mut data = Vec::with_capacity(n * len * inner);
        for b in 0..n {
            data.extend_from_slice(&t.data[(b * c + start) * inner..(b * c + start + len) * inner]);
        }
        let mut shape = t.shape.clone();
        shape[1] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape, data }, Op::Slice { x, start }, rg))
    }

    /// Keeps the leading `dims` voxels of each spatial axis.
    pub fn crop(&mut self, x: Var, dims: [usize; 3]) -> Result<Var> {
        let [n, c, d, h, w] = dims5(self.shape(x))?;
        if dims[0] > d || dims[1] > h || dims[2] > w {
            return Err(Error::Shape(format!("cannot crop {:?} to {dims:?}", [d, h, w])));
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(n * c * dims.iter().product::<usize>());
        for bc in 0..n * c {
            for z in 0..dims[0] {
                for y in 0..dims[1] {
                    let off = ((bc * d + z) * h + y) * w;
                    data.extend_from_slice(&t.data[off..off + dims[2]]);
                }
            }
        }
        let shape = vec![n, c, dims[0], dims[1], dims[2]];
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape, data }, Op::Crop { x }, rg))
    }

    /// Trilinear ×2 upsampling (half-pixel centers).
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let [n, c, d, h, w] = dims5(self.shape(x))?;
        let data = interp::upsample2_forward(&self.value(x).data, [n * c, d, h, w]);
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape: vec![n, c, 2 * d, 2 * h, 2 * w], data }, Op::Upsample2(x), rg))
    }

    /// Warps `image` by the voxel displacement field `disp` `[N, 3, D, H, W]`.
    pub fn grid_sample(&mut self, image: Var, disp: Var) -> Result<Var> {
        let [n, c, d, h, w] = dims5(self.shape(image))?;
        let ds = self.shape(disp);
        if ds != [n, 3, d, h, w] {
            return Err(Error::Shape(format!("displacement {ds:?} does not match image {:?}", [n, c, d, h, w])));
        }
        let data = interp::grid_sample_forward(&self.value(image).data, &self.value(disp).data, n, c, [d, h, w]);
        let rg = self.rg(image) || self.rg(disp);
        Ok(self.push(Tensor { shape: vec![n, c, d, h, w], data }, Op::GridSample { image, disp }, rg))
    }

    /// Zero-padded box sum of odd width over the spatial axes.
    pub fn box_sum(&mut self, x: Var, window: usize) -> Result<Var> {
        if window % 2 == 0 {
            return Err(Error::Shape(format!("box window must be odd, got {window}")));
        }
        let [n, c, d, h, w] = dims5(self.shape(x))?;
        let data = interp::box_sum(&self.value(x).data, [n * c, d, h, w], window);
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape, data }, Op::BoxSum { x, window }, rg))
    }

    /// Forward difference along spatial axis 0, 1 or 2 (D, H, W).
    pub fn forward_diff(&mut self, x: Var, axis: usize) -> Result<Var> {
        let [n, c, d, h, w] = dims5(self.shape(x))?;
        let dims = [n * c, d, h, w];
        if axis > 2 || dims[axis + 1] < 2 {
            return Err(Error::Shape(format!("cannot difference axis {axis} of {:?}", [d, h, w])));
        }
        let (data, od) = interp::forward_diff(&self.value(x).data, dims, axis);
        let shape = vec![n, c, od[1], od[2], od[3]];
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape, data }, Op::ForwardDiff { x, axis }, rg))
    }

    /// `out[:, i] = x[:, i] * gates[:, index[i]]`, with `index[i] == usize::MAX`
    /// meaning a pass-through channel.
    pub fn gather_mul(&mut self, x: Var, gates: Var, index: &[usize]) -> Result<Var> {
        let (tx, tg) = (self.value(x), self.value(gates));
        if tx.rank() < 2 || tg.rank() != tx.rank() || tx.shape[0] != tg.shape[0] || tx.shape[2..] != tg.shape[2..] {
            return Err(Error::Shape(format!("gates {:?} do not match input {:?}", tg.shape, tx.shape)));
        }
        let (n, c, gc) = (tx.shape[0], tx.shape[1], tg.shape[1]);
        if index.len() != c || index.iter().any(|&i| i != usize::MAX && i >= gc) {
            return Err(Error::Shape(format!("gate index does not fit {c} channels / {gc} gates")));
        }
        let inner: usize = tx.shape[2..].iter().product();
        let mut data = tx.data.clone();
        for b in 0..n {
            for (ch, &gi) in index.iter().enumerate() {
                if gi == usize::MAX {
                    continue;
                }
                let g = &tg.data[(b * gc + gi) * inner..][..inner];
                for (o, gv) in data[(b * c + ch) * inner..][..inner].iter_mut().zip(g) {
                    *o *= gv;
                }
            }
        }
        let t = Tensor { shape: tx.shape.clone(), data };
        let rg = self.rg(x) || self.rg(gates);
        Ok(self.push(t, Op::GatherMul { x, gates, index: index.into() }, rg))
    }

    /// Dense kernel from steerable-basis weights.
    pub fn expand(&mut self, weights: Var, plan: Arc<ExpansionPlan>) -> Result<Var> {
        let w = self.value(weights);
        if w.numel() != plan.n_weights {
            return Err(Error::Shape(format!("plan needs {} weights, got {}", plan.n_weights, w.numel())));
        }
        let data = plan.expand(&w.data);
        let shape = plan.kernel_shape().to_vec();
        let rg = self.rg(weights);
        Ok(self.push(Tensor { shape, data }, Op::Expand { weights, plan }, rg))
    }

    /// Gradients of the scalar `loss` with respect to all trainable leaves.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.shape.clone()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|nd| nd.value.shape.clone()).collect();
        for (nd, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !(nd.requires_grad && matches!(nd.op, Op::Leaf)) {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        match &mut grads[v.0] {
            Some(e) => e.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value.data;
        let out = &node.value.data;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        self.acc(grads, v, reduce_to(g, val(v).len()));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, reduce_to(g, val(*a).len()));
                }
                if self.rg(*b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    self.acc(grads, *b, reduce_to(&neg, val(*b).len()));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if self.rg(*a) {
                    let c: Vec<f64> = g.iter().enumerate().map(|(i, gv)| gv * vb[i % vb.len()]).collect();
                    self.acc(grads, *a, reduce_to(&c, va.len()));
                }
                if self.rg(*b) {
                    let c: Vec<f64> = g.iter().enumerate().map(|(i, gv)| gv * va[i % va.len()]).collect();
                    self.acc(grads, *b, reduce_to(&c, vb.len()));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if self.rg(*a) {
                    let c: Vec<f64> = g.iter().enumerate().map(|(i, gv)| gv / vb[i % vb.len()]).collect();
                    self.acc(grads, *a, reduce_to(&c, va.len()));
                }
                if self.rg(*b) {
                    let c: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, gv)| {
                            let y = vb[i % vb.len()];
                            -gv * va[i % va.len()] / (y * y)
                        })
                        .collect();
                    self.acc(grads, *b, reduce_to(&c, vb.len()));
                }
            }
            Op::ScalarMul(x, s) => self.acc(grads, *x, g.iter().map(|v| v * s).collect()),
            Op::AddScalar(x) => self.acc(grads, *x, g.to_vec()),
            Op::Sigmoid(x) => self.acc(grads, *x, g.iter().zip(out).map(|(gv, y)| gv * y * (1.0 - y)).collect()),
            Op::LeakyRelu(x, slope) => {
                let c = g.iter().zip(val(*x)).map(|(gv, xv)| if *xv > 0.0 { *gv } else { gv * slope }).collect();
                self.acc(grads, *x, c)
            }
            Op::Square(x) => self.acc(grads, *x, g.iter().zip(val(*x)).map(|(gv, xv)| 2.0 * gv * xv).collect()),
            Op::SqrtEps(x) => self.acc(grads, *x, g.iter().zip(out).map(|(gv, y)| gv * 0.5 / y).collect()),
            Op::Mean(x) => {
                let n = val(*x).len();
                self.acc(grads, *x, vec![g[0] / n as f64; n])
            }
            Op::Sum(x) => self.acc(grads, *x, vec![g[0]; val(*x).len()]),
            Op::Conv3d { input, kernel, geom } => {
                let (gi, gk) =
                    conv3d_backward(geom, val(*input), val(*kernel), g, self.rg(*input), self.rg(*kernel));
                if let Some(gi) = gi {
                    self.acc(grads, *input, gi);
                }
                if let Some(gk) = gk {
                    self.acc(grads, *kernel, gk);
                }
            }
            Op::AddBias { x, bias } => {
                if self.rg(*x) {
                    self.acc(grads, *x, g.to_vec());
                }
                if self.rg(*bias) {
                    let s = &node.value.shape;
                    let c = s[1];
                    let nb = self.nodes[bias.0].value.numel();
                    let inner: usize = s[2..].iter().product();
                    let mut gb = vec![0.0; nb];
                    for (i, gv) in g.iter().enumerate() {
                        let ch = (i / inner) % c;
                        if ch < nb {
                            gb[ch] += gv;
                        }
                    }
                    self.acc(grads, *bias, gb);
                }
            }
            Op::Concat(parts) => {
                let s = &node.value.shape;
                let inner: usize = s[2..].iter().product();
                let c = s[1];
                let mut off = 0;
                for &p in parts {
                    let pc = self.nodes[p.0].value.shape[1];
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(s[0] * pc * inner);
                        for b in 0..s[0] {
                            gp.extend_from_slice(&g[(b * c + off) * inner..(b * c + off + pc) * inner]);
                        }
                        self.acc(grads, p, gp);
                    }
                    off += pc;
                }
            }
            Op::Slice { x, start } => {
                let xs = &self.nodes[x.0].value.shape;
                let (n, c) = (xs[0], xs[1]);
                let len = node.value.shape[1];
                let inner: usize = xs[2..].iter().product();
                let mut gx = vec![0.0; n * c * inner];
                for b in 0..n {
                    gx[(b * c + start) * inner..(b * c + start + len) * inner]
                        .copy_from_slice(&g[b * len * inner..(b + 1) * len * inner]);
                }
                self.acc(grads, *x, gx);
            }
            Op::Crop { x } => {
                let xs = &self.nodes[x.0].value.shape;
                let (d, h, w) = (xs[2], xs[3], xs[4]);
                let os = &node.value.shape;
                let mut gx = vec![0.0; val(*x).len()];
                let mut k = 0;
                for bc in 0..os[0] * os[1] {
                    for z in 0..os[2] {
                        for y in 0..os[3] {
                            let off = ((bc * d + z) * h + y) * w;
                            gx[off..off + os[4]].copy_from_slice(&g[k..k + os[4]]);
                            k += os[4];
                        }
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::Upsample2(x) => {
                let s = &self.nodes[x.0].value.shape;
                self.acc(grads, *x, interp::upsample2_backward(g, [s[0] * s[1], s[2], s[3], s[4]]));
            }
            Op::GridSample { image, disp } => {
                let s = &node.value.shape;
                let (gi, gu) = interp::grid_sample_backward(
                    val(*image),
                    val(*disp),
                    g,
                    s[0],
                    s[1],
                    [s[2], s[3], s[4]],
                    self.rg(*image),
                    self.rg(*disp),
                );
                if let Some(gi) = gi {
                    self.acc(grads, *image, gi);
                }
                if let Some(gu) = gu {
                    self.acc(grads, *disp, gu);
                }
            }
            Op::BoxSum { x, window } => {
                let s = &node.value.shape;
                self.acc(grads, *x, interp::box_sum(g, [s[0] * s[1], s[2], s[3], s[4]], *window));
            }
            Op::ForwardDiff { x, axis } => {
                let s = &self.nodes[x.0].value.shape;
                self.acc(grads, *x, interp::forward_diff_adjoint(g, [s[0] * s[1], s[2], s[3], s[4]], *axis));
            }
            Op::GatherMul { x, gates, index } => {
                let (vx, vg) = (val(*x), val(*gates));
                let s = &node.value.shape;
                let gs = &self.nodes[gates.0].value.shape;
                let (n, c, gc) = (s[0], s[1], gs[1]);
                let inner: usize = s[2..].iter().product();
                if self.rg(*x) {
                    let mut gx = g.to_vec();
                    for b in 0..n {
                        for (ch, &gi) in index.iter().enumerate() {
                            if gi == usize::MAX {
                                continue;
                            }
                            let gate = &vg[(b * gc + gi) * inner..][..inner];
                            for (o, gv) in gx[(b * c + ch) * inner..][..inner].iter_mut().zip(gate) {
                                *o *= gv;
                            }
                        }
                    }
                    self.acc(grads, *x, gx);
                }
                if self.rg(*gates) {
                    let mut gg = vec![0.0; vg.len()];
                    for b in 0..n {
                        for (ch, &gi) in index.iter().enumerate() {
                            if gi == usize::MAX {
                                continue;
                            }
                            let xs = &vx[(b * c + ch) * inner..][..inner];
                            let go = &g[(b * c + ch) * inner..][..inner];
                            let dst = &mut gg[(b * gc + gi) * inner..][..inner];
                            for k in 0..inner {
                                dst[k] += go[k] * xs[k];
                            }
                        }
                    }
                    self.acc(grads, *gates, gg);
                }
            }
            Op::Expand { weights, plan } => self.acc(grads, *weights, plan.adjoint(g)),
        }
    }
}
