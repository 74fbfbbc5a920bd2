//! Define-by-run expression graph with reverse-mode differentiation.
//!
//! Every builder method evaluates its node immediately, so node order is a
//! topological order. [`Graph::eval`] replays the recorded operations with
//! new leaf bindings, which is what finite-difference checks rely on.
//!
//! Binary elementwise ops broadcast over the rank-≤2 view of their operands
//! (a vector `[n]` acts as a `1×n` row, extents of 1 stretch).

use crate::error::{Error, Result};
use crate::tensor::{dims2, Tensor};
use crate::vmf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Neg,
    Scale(f64),
    AddScalar(f64),
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Softplus,
    Sqrt,
    Cos,
    Square,
    ClampMin(f64),
    /// Elementwise `log C_p(κ)`, the von Mises–Fisher log-normalizer.
    LogVmfNorm(usize),
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param,
    Binary(Binary, NodeId, NodeId),
    Unary(Unary, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    SumAxis(NodeId, usize),
    LogSumExp(NodeId, usize),
    L2Normalize(NodeId),
    Dot(NodeId, NodeId),
    Concat(Vec<NodeId>, usize),
    Detach(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::Binary(b, ..) => match b {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
                Binary::Div => "div",
            },
            Op::Unary(u, _) => match u {
                Unary::Neg => "neg",
                Unary::Scale(_) => "scale",
                Unary::AddScalar(_) => "add_scalar",
                Unary::Relu => "relu",
                Unary::Sigmoid => "sigmoid",
                Unary::Tanh => "tanh",
                Unary::Exp => "exp",
                Unary::Log => "log",
                Unary::Softplus => "softplus",
                Unary::Sqrt => "sqrt",
                Unary::Cos => "cos",
                Unary::Square => "square",
                Unary::ClampMin(_) => "clamp_min",
                Unary::LogVmfNorm(_) => "log_vmf_norm",
            },
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::SumAll(_) => "sum",
            Op::MeanAll(_) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::LogSumExp(..) => "log_sum_exp",
            Op::L2Normalize(_) => "l2_normalize",
            Op::Dot(..) => "dot",
            Op::Concat(..) => "concat",
            Op::Detach(_) => "detach",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
}

/// Gradients of a scalar root with respect to every node that influences it.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`, zero-filled when the root does not depend on it.
    pub fn wrt(&self, graph: &Graph, id: NodeId) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(graph.value(id).shape()))
    }

    pub fn get_mut(&mut self, id: NodeId) -> Option<&mut Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.as_mut())
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    pub fn is_param(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Param)
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Op::Input, value)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.input(Tensor::scalar(value))
    }

    pub fn param(&mut self, value: Tensor) -> NodeId {
        let id = self.push_leaf(Op::Param, value);
        self.params.push(id);
        id
    }

    fn push_leaf(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let value = compute(&op, &self.nodes)?;
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    // ── elementwise ──────────────────────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Binary(Binary::Add, a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Binary(Binary::Sub, a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Binary(Binary::Mul, a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Binary(Binary::Div, a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Neg, a))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Scale(factor), a))
    }

    pub fn add_scalar(&mut self, a: NodeId, offset: f64) -> Result<NodeId> {
        self.push(Op::Unary(Unary::AddScalar(offset), a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Relu, a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Sigmoid, a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Tanh, a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Exp, a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Log, a))
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Softplus, a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Sqrt, a))
    }

    pub fn cos(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Cos, a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Square, a))
    }

    /// `max(a, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> Result<NodeId> {
        self.push(Op::Unary(Unary::ClampMin(floor), a))
    }

    /// Elementwise von Mises–Fisher log-normalizer `log C_dim(κ)`.
    pub fn log_vmf_norm(&mut self, kappa: NodeId, dim: usize) -> Result<NodeId> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!("vMF dimension must be at least 2, got {dim}")));
        }
        self.push(Op::Unary(Unary::LogVmfNorm(dim), kappa))
    }

    // ── linear algebra and reductions ───────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Transpose(a))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::SumAll(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::MeanAll(a))
    }

    /// Sum along `axis`, keeping the reduced extent as 1.
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.push(Op::SumAxis(a, axis))
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let (r, c) = dims2(self.value(a).shape())?;
        let n = if view_axis(self.value(a).shape(), axis)? == 0 { r } else { c };
        let s = self.sum_axis(a, axis)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Numerically stable `log Σ exp` along `axis`, keeping the reduced extent.
    pub fn log_sum_exp(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.push(Op::LogSumExp(a, axis))
    }

    /// Normalizes each row (last axis) to unit Euclidean length.
    pub fn l2_normalize(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::L2Normalize(a))
    }

    /// Inner product of two equally sized tensors, as a scalar.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Dot(a, b))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        self.push(Op::Concat(parts.to_vec(), axis))
    }

    /// Identity in the forward pass, blocks gradient flow in the backward pass.
    pub fn detach(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Detach(a))
    }

    // ── composites ──────────────────────────────────────────────────────

    pub fn linear(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, weight)?;
        self.add(xw, bias)
    }

    /// Row-wise log-softmax of a `[n, c]` matrix.
    pub fn log_softmax(&mut self, logits: NodeId) -> Result<NodeId> {
        let lse = self.log_sum_exp(logits, 1)?;
        self.sub(logits, lse)
    }

    pub fn softmax(&mut self, logits: NodeId) -> Result<NodeId> {
        let ls = self.log_softmax(logits)?;
        self.exp(ls)
    }

    /// Elementwise `log Σ_k exp(a_k)` over equally shaped nodes. The shift by
    /// the running maximum enters as a constant, which leaves the value and the
    /// gradient of the exact function unchanged.
    pub fn log_sum_exp_stack(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| Error::InvalidArgument("log_sum_exp_stack of nothing".into()))?;
        let shape = self.value(first).shape().to_vec();
        let mut shift = self.value(first).clone();
        for &p in &parts[1..] {
            let v = self.value(p);
            if v.shape() != shape.as_slice() {
                return Err(Error::shape("log_sum_exp_stack", format!("{:?} vs {:?}", shape, v.shape())));
            }
            for (s, &x) in shift.data_mut().iter_mut().zip(v.data()) {
                *s = s.max(x);
            }
        }
        let shift = self.input(shift);
        let mut acc: Option<NodeId> = None;
        for &p in parts {
            let d = self.sub(p, shift)?;
            let e = self.exp(d)?;
            acc = Some(match acc {
                None => e,
                Some(a) => self.add(a, e)?,
            });
        }
        let l = self.log(acc.expect("non-empty"))?;
        self.add(l, shift)
    }

    /// Per-row inner products of two `[n, p]` matrices, as `[n, 1]`.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let m = self.mul(a, b)?;
        self.sum_axis(m, 1)
    }

    // ── evaluation ──────────────────────────────────────────────────────

    /// Rebinds leaves and recomputes every derived node in recorded order.
    pub fn eval(&mut self, bindings: &[(NodeId, Tensor)]) -> Result<()> {
        self.replay(bindings, false)
    }

    /// Rebinds leaves, recomputes the graph and returns the value of `root`.
    pub fn eval_graph(&mut self, root: NodeId, bindings: &[(NodeId, Tensor)]) -> Result<Tensor> {
        self.eval(bindings)?;
        Ok(self.value(root).clone())
    }

    /// Replay. With `freeze_detached`, detached nodes keep their cached
    /// value, so the recomputed function is the one the gradient describes.
    pub(crate) fn replay(&mut self, bindings: &[(NodeId, Tensor)], freeze_detached: bool) -> Result<()> {
        for (id, value) in bindings {
            let node = self.nodes.get_mut(id.0).ok_or_else(|| Error::InvalidArgument(format!("unknown node {}", id.0)))?;
            if !matches!(node.op, Op::Input | Op::Param) {
                return Err(Error::InvalidArgument(format!("node {} is not a leaf and cannot be rebound", id.0)));
            }
            if node.value.shape() != value.shape() {
                return Err(Error::shape(
                    "eval",
                    format!("binding {:?} for leaf of shape {:?}", value.shape(), node.value.shape()),
                ));
            }
            node.value = value.clone();
        }
        for i in 0..self.nodes.len() {
            let op = &self.nodes[i].op;
            if matches!(op, Op::Input | Op::Param) || (freeze_detached && matches!(op, Op::Detach(_))) {
                continue;
            }
            let value = compute(op, &self.nodes[..i])?;
            self.nodes[i].value = value;
        }
        Ok(())
    }

    /// Overwrites one leaf value without recomputing dependents.
    pub(crate) fn set_leaf(&mut self, id: NodeId, value: Tensor) {
        self.nodes[id.0].value = value;
    }

    /// Reverse-mode gradients of the scalar node `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_val = &self.nodes[root.0].value;
        if root_val.numel() != 1 {
            return Err(Error::shape("backward", format!("root must be scalar, has shape {:?}", root_val.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::filled(root_val.shape(), 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Input | Op::Param | Op::Detach(_) => {}
            Op::Binary(kind, a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (ga, gb) = binary_backward(*kind, av, bv, &node.value, g)?;
                accumulate(grads, *a, ga)?;
                accumulate(grads, *b, gb)?;
            }
            Op::Unary(kind, a) => {
                let x = val(*a);
                let y = &node.value;
                let mut out = g.clone();
                let od = out.data_mut();
                let (xd, yd) = (x.data(), y.data());
                match kind {
                    Unary::Neg => od.iter_mut().for_each(|v| *v = -*v),
                    Unary::Scale(c) => od.iter_mut().for_each(|v| *v *= c),
                    Unary::AddScalar(_) => {}
                    Unary::Relu => {
                        for (o, &xi) in od.iter_mut().zip(xd) {
                            if xi <= 0.0 {
                                *o = 0.0;
                            }
                        }
                    }
                    Unary::Sigmoid => {
                        for (o, &yi) in od.iter_mut().zip(yd) {
                            *o *= yi * (1.0 - yi);
                        }
                    }
                    Unary::Tanh => {
                        for (o, &yi) in od.iter_mut().zip(yd) {
                            *o *= 1.0 - yi * yi;
                        }
                    }
                    Unary::Exp => {
                        for (o, &yi) in od.iter_mut().zip(yd) {
                            *o *= yi;
                        }
                    }
                    Unary::Log => {
                        for (o, &xi) in od.iter_mut().zip(xd) {
                            *o /= xi;
                        }
                    }
                    Unary::Softplus => {
                        for (o, &xi) in od.iter_mut().zip(xd) {
                            *o *= sigmoid(xi);
                        }
                    }
                    Unary::Sqrt => {
                        for (o, &yi) in od.iter_mut().zip(yd) {
                            *o /= 2.0 * yi;
                        }
                    }
                    Unary::Cos => {
                        for (o, &xi) in od.iter_mut().zip(xd) {
                            *o *= -xi.sin();
                        }
                    }
                    Unary::Square => {
                        for (o, &xi) in od.iter_mut().zip(xd) {
                            *o *= 2.0 * xi;
                        }
                    }
                    Unary::ClampMin(floor) => {
                        for (o, &xi) in od.iter_mut().zip(xd) {
                            if xi < *floor {
                                *o = 0.0;
                            }
                        }
                    }
                    Unary::LogVmfNorm(dim) => {
                        for (o, &xi) in od.iter_mut().zip(xd) {
                            if xi < vmf::KAPPA_FLOOR {
                                *o = 0.0;
                            } else {
                                *o *= -vmf::mean_resultant_length(*dim, xi);
                            }
                        }
                    }
                }
                check_finite(&out, node.op.name())?;
                accumulate(grads, *a, out)?;
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga = g.matmul(&bv.transpose()?)?;
                let gb = av.transpose()?.matmul(g)?;
                accumulate(grads, *a, ga)?;
                accumulate(grads, *b, gb)?;
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()?)?,
            Op::SumAll(a) => {
                let s = g.item()?;
                accumulate(grads, *a, Tensor::filled(val(*a).shape(), s))?;
            }
            Op::MeanAll(a) => {
                let x = val(*a);
                let s = g.item()? / x.numel() as f64;
                accumulate(grads, *a, Tensor::filled(x.shape(), s))?;
            }
            Op::SumAxis(a, _) => {
                let x = val(*a);
                let (r, c) = dims2(x.shape())?;
                let mut out = Tensor::zeros(x.shape());
                let (gr, gc) = dims2(g.shape())?;
                for i in 0..r {
                    for j in 0..c {
                        let gi = if gr == 1 { 0 } else { i };
                        let gj = if gc == 1 { 0 } else { j };
                        out.data_mut()[i * c + j] = g.data()[gi * gc + gj];
                    }
                }
                accumulate(grads, *a, out)?;
            }
            Op::LogSumExp(a, _) => {
                let x = val(*a);
                let y = &node.value;
                let (r, c) = dims2(x.shape())?;
                let (yr, yc) = dims2(y.shape())?;
                let mut out = Tensor::zeros(x.shape());
                for i in 0..r {
                    for j in 0..c {
                        let yi = if yr == 1 { 0 } else { i };
                        let yj = if yc == 1 { 0 } else { j };
                        let k = yi * yc + yj;
                        out.data_mut()[i * c + j] = g.data()[k] * (x.data()[i * c + j] - y.data()[k]).exp();
                    }
                }
                accumulate(grads, *a, out)?;
            }
            Op::L2Normalize(a) => {
                let x = val(*a);
                let y = &node.value;
                let (r, c) = dims2(x.shape())?;
                let mut out = Tensor::zeros(x.shape());
                for i in 0..r {
                    let xr = &x.data()[i * c..(i + 1) * c];
                    let yr = &y.data()[i * c..(i + 1) * c];
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let yg: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        out.data_mut()[i * c + j] = (gr[j] - yr[j] * yg) / norm;
                    }
                }
                accumulate(grads, *a, out)?;
            }
            Op::Dot(a, b) => {
                let s = g.item()?;
                let (av, bv) = (val(*a), val(*b));
                accumulate(grads, *a, bv.map(|v| v * s).reshape(av.shape().to_vec())?)?;
                accumulate(grads, *b, av.map(|v| v * s).reshape(bv.shape().to_vec())?)?;
            }
            Op::Concat(parts, axis) => {
                let (gr, gc) = dims2(g.shape())?;
                let along_rows = view_axis(g.shape(), *axis)? == 0;
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    let (pr, pc) = dims2(pv.shape())?;
                    let mut out = Vec::with_capacity(pr * pc);
                    if along_rows {
                        out.extend_from_slice(&g.data()[offset * gc..(offset + pr) * gc]);
                        offset += pr;
                    } else {
                        for i in 0..gr {
                            out.extend_from_slice(&g.data()[i * gc + offset..i * gc + offset + pc]);
                        }
                        offset += pc;
                    }
                    accumulate(grads, p, Tensor::new(pv.shape().to_vec(), out)?)?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => {
            if existing.shape() != g.shape() {
                return Err(Error::shape("backward", format!("gradient {:?} vs {:?}", existing.shape(), g.shape())));
            }
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
    Ok(())
}

fn check_finite(t: &Tensor, op: &'static str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Axis index in the rank-2 view. Vectors only have axis 0, which is the
/// column axis of their `1×n` view.
fn view_axis(shape: &[usize], axis: usize) -> Result<usize> {
    match (shape.len(), axis) {
        (2, 0) | (2, 1) => Ok(axis),
        (1, 0) => Ok(1),
        _ => Err(Error::shape("axis", format!("axis {} invalid for shape {:?}", axis, shape))),
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<(Vec<usize>, usize, usize)> {
    let (ar, ac) = dims2(a)?;
    let (br, bc) = dims2(b)?;
    let pick = |x: usize, y: usize| -> Option<usize> {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    let (r, c) = match (pick(ar, br), pick(ac, bc)) {
        (Some(r), Some(c)) => (r, c),
        _ => return Err(Error::shape("broadcast", format!("{:?} vs {:?}", a, b))),
    };
    let shape = match a.len().max(b.len()) {
        0 => vec![],
        1 => vec![c],
        _ => vec![r, c],
    };
    Ok((shape, r, c))
}

/// Sums a `[r, c]` gradient over broadcast extents down to `shape`.
fn reduce_to(g: &[f64], r: usize, c: usize, shape: &[usize]) -> Result<Tensor> {
    let (sr, sc) = dims2(shape)?;
    if sr == r && sc == c {
        return Tensor::new(shape.to_vec(), g.to_vec());
    }
    let mut out = vec![0.0; sr * sc];
    for i in 0..r {
        for j in 0..c {
            let oi = if sr == 1 { 0 } else { i };
            let oj = if sc == 1 { 0 } else { j };
            out[oi * sc + oj] += g[i * c + j];
        }
    }
    Tensor::new(shape.to_vec(), out)
}

fn binary_forward(kind: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (shape, r, c) = broadcast_shape(a.shape(), b.shape())?;
    let (ar, ac) = dims2(a.shape())?;
    let (br, bc) = dims2(b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let ai = if ar == 1 { 0 } else { i };
        let bi = if br == 1 { 0 } else { i };
        for j in 0..c {
            let x = ad[ai * ac + if ac == 1 { 0 } else { j }];
            let y = bd[bi * bc + if bc == 1 { 0 } else { j }];
            out.push(match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => x / y,
            });
        }
    }
    Tensor::new(shape, out)
}

fn binary_backward(kind: Binary, a: &Tensor, b: &Tensor, _y: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, r, c) = broadcast_shape(a.shape(), b.shape())?;
    let (ar, ac) = dims2(a.shape())?;
    let (br, bc) = dims2(b.shape())?;
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let mut ga = Vec::with_capacity(r * c);
    let mut gb = Vec::with_capacity(r * c);
    for i in 0..r {
        let ai = if ar == 1 { 0 } else { i };
        let bi = if br == 1 { 0 } else { i };
        for j in 0..c {
            let x = ad[ai * ac + if ac == 1 { 0 } else { j }];
            let y = bd[bi * bc + if bc == 1 { 0 } else { j }];
            let gv = gd[i * c + j];
            let (da, db) = match kind {
                Binary::Add => (gv, gv),
                Binary::Sub => (gv, -gv),
                Binary::Mul => (gv * y, gv * x),
                Binary::Div => (gv / y, -gv * x / (y * y)),
            };
            ga.push(da);
            gb.push(db);
        }
    }
    let ga = reduce_to(&ga, r, c, a.shape())?;
    let gb = reduce_to(&gb, r, c, b.shape())?;
    check_finite(&ga, "binary backward")?;
    check_finite(&gb, "binary backward")?;
    Ok((ga, gb))
}

fn compute(op: &Op, nodes: &[Node]) -> Result<Tensor> {
    let val = |id: &NodeId| -> Result<&Tensor> {
        nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or_else(|| Error::InvalidArgument(format!("node {} does not precede its user", id.0)))
    };
    let out = match op {
        Op::Input | Op::Param => unreachable!("leaves are never recomputed"),
        Op::Binary(kind, a, b) => binary_forward(*kind, val(a)?, val(b)?)?,
        Op::Unary(kind, a) => {
            let x = val(a)?;
            match *kind {
                Unary::Neg => x.map(|v| -v),
                Unary::Scale(c) => x.map(|v| v * c),
                Unary::AddScalar(c) => x.map(|v| v + c),
                Unary::Relu => x.map(|v| v.max(0.0)),
                Unary::Sigmoid => x.map(sigmoid),
                Unary::Tanh => x.map(f64::tanh),
                Unary::Exp => x.map(f64::exp),
                Unary::Log => x.map(f64::ln),
                Unary::Softplus => x.map(softplus),
                Unary::Sqrt => x.map(f64::sqrt),
                Unary::Cos => x.map(f64::cos),
                Unary::Square => x.map(|v| v * v),
                Unary::ClampMin(floor) => x.map(|v| v.max(floor)),
                Unary::LogVmfNorm(dim) => {
                    let mut out = Vec::with_capacity(x.numel());
                    for &k in x.data() {
                        out.push(vmf::log_norm_const(dim, k)?);
                    }
                    Tensor::new(x.shape().to_vec(), out)?
                }
            }
        }
        Op::MatMul(a, b) => val(a)?.matmul(val(b)?)?,
        Op::Transpose(a) => val(a)?.transpose()?,
        Op::SumAll(a) => Tensor::scalar(val(a)?.sum()),
        Op::MeanAll(a) => {
            let x = val(a)?;
            if x.numel() == 0 {
                return Err(Error::shape("mean", "mean of an empty tensor"));
            }
            Tensor::scalar(x.sum() / x.numel() as f64)
        }
        Op::SumAxis(a, axis) | Op::LogSumExp(a, axis) => {
            let x = val(a)?;
            let (r, c) = dims2(x.shape())?;
            let vaxis = view_axis(x.shape(), *axis)?;
            let lse = matches!(op, Op::LogSumExp(..));
            let groups: Vec<Vec<f64>> = if vaxis == 0 {
                (0..c).map(|j| (0..r).map(|i| x.data()[i * c + j]).collect()).collect()
            } else {
                (0..r).map(|i| x.data()[i * c..(i + 1) * c].to_vec()).collect()
            };
            let reduced: Vec<f64> = groups.iter().map(|g| if lse { log_sum_exp(g) } else { g.iter().sum() }).collect();
            let shape = match (x.rank(), vaxis) {
                (1, _) => vec![1],
                (_, 0) => vec![1, c],
                _ => vec![r, 1],
            };
            if lse && groups.iter().any(|g| g.is_empty()) {
                return Err(Error::shape("log_sum_exp", "reduction over an empty axis"));
            }
            Tensor::new(shape, reduced)?
        }
        Op::L2Normalize(a) => {
            let x = val(a)?;
            let (r, c) = dims2(x.shape())?;
            let mut out = x.clone();
            for i in 0..r {
                let row = &mut out.data_mut()[i * c..(i + 1) * c];
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::NonFinite { op: "l2_normalize" });
                }
                row.iter_mut().for_each(|v| *v /= norm);
            }
            out
        }
        Op::Dot(a, b) => {
            let (x, y) = (val(a)?, val(b)?);
            if x.numel() != y.numel() {
                return Err(Error::shape("dot", format!("{:?} vs {:?}", x.shape(), y.shape())));
            }
            Tensor::scalar(x.data().iter().zip(y.data()).map(|(p, q)| p * q).sum())
        }
        Op::Concat(parts, axis) => {
            let first = val(parts.first().ok_or_else(|| Error::shape("concat", "no parts"))?)?;
            let vaxis = view_axis(first.shape(), *axis)?;
            let rank = first.rank();
            let views = parts
                .iter()
                .map(|p| {
                    let t = val(p)?;
                    if t.rank() != rank {
                        return Err(Error::shape("concat", "mixed ranks"));
                    }
                    Ok((t, dims2(t.shape())?))
                })
                .collect::<Result<Vec<_>>>()?;
            let (r0, c0) = views[0].1;
            if vaxis == 0 {
                if views.iter().any(|(_, (_, c))| *c != c0) {
                    return Err(Error::shape("concat", "column extents differ"));
                }
                let rows: usize = views.iter().map(|(_, (r, _))| r).sum();
                let mut data = Vec::with_capacity(rows * c0);
                for (t, _) in &views {
                    data.extend_from_slice(t.data());
                }
                Tensor::new(vec![rows, c0], data)?
            } else {
                if views.iter().any(|(_, (r, _))| *r != r0) {
                    return Err(Error::shape("concat", "row extents differ"));
                }
                let cols: usize = views.iter().map(|(_, (_, c))| c).sum();
                let mut data = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for (t, (_, c)) in &views {
                        data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
                    }
                }
                let shape = if rank == 1 { vec![cols] } else { vec![r0, cols] };
                Tensor::new(shape, data)?
            }
        }
        Op::Detach(a) => val(a)?.clone(),
    };
    check_finite(&out, op.name())?;
    Ok(out)
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
