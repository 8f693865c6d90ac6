//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is an append-only arena of nodes. Every operation pushes a new
//! node whose parents already exist, so insertion order is a topological order
//! and [`Graph::backward`] is a single reverse sweep. Graphs are cheap to build
//! and are rebuilt on every forward pass.
//!
//! Binary operations broadcast in exactly two ways: a single-element operand
//! against anything, and a `[1, n]` (or `[n]`) row against a `[batch, n]` matrix.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Tanh,
    Softplus,
    Exp,
    Log,
    Square,
    Relu,
    /// ELU with `alpha = 1`.
    Elu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Full,
    Row,
    Scalar,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Unary(Unary, NodeId),
    Binary(Binary, NodeId, Bcast, NodeId, Bcast),
    Scale(NodeId, f64),
    Offset(NodeId),
    MatMul(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumCols(NodeId),
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    PickRows(Vec<NodeId>, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Arena of differentiable nodes.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of one backward sweep. Nodes that do not require gradients, or that
/// are unreachable from the loss, report zeros.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `id`, zero-filled when nothing reached it.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
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

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that accumulates gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never accumulates gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    /// Same value as `x`, cut off from `x`'s ancestors during backward.
    pub fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).clone();
        self.push(value, Op::Leaf, false)
    }

    pub fn unary(&mut self, kind: Unary, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| unary_forward(kind, v));
        let rg = self.requires_grad(x);
        self.push(value, Op::Unary(kind, x), rg)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.unary(Unary::Neg, x)
    }
    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(Unary::Tanh, x)
    }
    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.unary(Unary::Softplus, x)
    }
    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(Unary::Exp, x)
    }
    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.unary(Unary::Log, x)
    }
    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(Unary::Square, x)
    }
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(Unary::Relu, x)
    }
    pub fn elu(&mut self, x: NodeId) -> NodeId {
        self.unary(Unary::Elu, x)
    }
    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn binary(&mut self, kind: Binary, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (ba, bb, shape) = broadcast(va, vb)?;
        let cols = *shape.last().unwrap_or(&1);
        let n: usize = shape.iter().product();
        let f = binary_forward(kind);
        let (da, db) = (va.data(), vb.data());
        let data = (0..n).map(|i| f(da[bidx(ba, i, cols)], db[bidx(bb, i, cols)])).collect();
        let value = Tensor::new(shape, data)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::Binary(kind, a, ba, b, bb), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Binary::Add, a, b)
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Binary::Sub, a, b)
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Binary::Mul, a, b)
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Binary::Div, a, b)
    }

    /// `c * x`.
    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.value(x).scale(c);
        let rg = self.requires_grad(x);
        self.push(value, Op::Scale(x, c), rg)
    }

    /// `x + c`.
    pub fn offset(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.value(x).map(|v| v + c);
        let rg = self.requires_grad(x);
        self.push(value, Op::Offset(x), rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.requires_grad(x);
        self.push(value, Op::Sum(x), rg)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).mean());
        let rg = self.requires_grad(x);
        self.push(value, Op::Mean(x), rg)
    }

    /// Row sums: `[r, c] -> [r, 1]`.
    pub fn sum_cols(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let sums: Vec<f64> = (0..v.rows()).map(|r| v.row(r).iter().sum()).collect();
        let value = Tensor::column(&sums);
        let rg = self.requires_grad(x);
        self.push(value, Op::SumCols(x), rg)
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(x);
        if start > end || end > v.cols() {
            return Err(Error::Shape(format!(
                "column slice {start}..{end} out of range for {:?}",
                v.shape()
            )));
        }
        let value = v.slice_cols(start, end);
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::SliceCols(x, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_cols(&values)?;
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Rows `[start, end)` of a rank-2 node.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(x);
        let (r, c) = v.dims2();
        if start > end || end > r {
            return Err(Error::Shape(format!("row slice {start}..{end} out of range for {:?}", v.shape())));
        }
        let value = Tensor::new(vec![end - start, c], v.data()[start * c..end * c].to_vec())?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::SliceRows(x, start), rg))
    }

    /// Stacks rank-2 nodes with equal column counts.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let cols = match parts.first() {
            Some(&p) => self.value(p).cols(),
            None => return Err(Error::invalid("concat_rows of nothing")),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::Shape(format!(
                    "concat_rows column mismatch: {:?} vs {:?}",
                    self.value(parts[0]).shape(),
                    v.shape()
                )));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        let value = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Row `r` of the output is row `r` of `candidates[choice[r]]`.
    ///
    /// Gradient reaches only the selected rows of the selected candidates.
    pub fn pick_rows(&mut self, candidates: &[NodeId], choice: &[usize]) -> Result<NodeId> {
        let first = candidates.first().ok_or_else(|| Error::invalid("no candidates"))?;
        let shape = self.value(*first).shape().to_vec();
        for &c in candidates {
            if self.value(c).shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "pick_rows candidates differ: {:?} vs {:?}",
                    shape,
                    self.value(c).shape()
                )));
            }
        }
        let rows = self.value(*first).rows();
        if choice.len() != rows || choice.iter().any(|&j| j >= candidates.len()) {
            return Err(Error::invalid(format!(
                "choice of length {} for {} rows and {} candidates",
                choice.len(),
                rows,
                candidates.len()
            )));
        }
        let mut data = Vec::with_capacity(self.value(*first).len());
        for (r, &j) in choice.iter().enumerate() {
            data.extend_from_slice(self.value(candidates[j]).row(r));
        }
        let value = Tensor::new(shape, data)?;
        let rg = choice.iter().any(|&j| self.requires_grad(candidates[j]));
        Ok(self.push(value, Op::PickRows(candidates.to_vec(), choice.to_vec()), rg))
    }

    /// Gradients of a single-element `loss` with respect to every node.
    ///
    /// Each call starts from zero; nothing accumulates between calls.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar loss, got {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(self.nodes.len(), None);
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Unary(kind, x) => {
                let xv = self.value(*x);
                let mut out = g.clone();
                for ((o, &xi), &yi) in out.data_mut().iter_mut().zip(xv.data()).zip(node.value.data()) {
                    *o *= unary_derivative(*kind, xi, yi);
                }
                self.accumulate(grads, *x, out);
            }
            Op::Binary(kind, a, ba, b, bb) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let cols = g.cols();
                let (da, db) = (va.data(), vb.data());
                let gd = g.data();
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; va.len()];
                    for (i, &gi) in gd.iter().enumerate() {
                        let (ia, ib) = (bidx(*ba, i, cols), bidx(*bb, i, cols));
                        let d = match kind {
                            Binary::Add | Binary::Sub => 1.0,
                            Binary::Mul => db[ib],
                            Binary::Div => 1.0 / db[ib],
                        };
                        ga[ia] += gi * d;
                    }
                    self.accumulate(grads, *a, Tensor::new(va.shape().to_vec(), ga).unwrap());
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; vb.len()];
                    for (i, &gi) in gd.iter().enumerate() {
                        let (ia, ib) = (bidx(*ba, i, cols), bidx(*bb, i, cols));
                        let d = match kind {
                            Binary::Add => 1.0,
                            Binary::Sub => -1.0,
                            Binary::Mul => da[ia],
                            Binary::Div => -da[ia] / (db[ib] * db[ib]),
                        };
                        gb[ib] += gi * d;
                    }
                    self.accumulate(grads, *b, Tensor::new(vb.shape().to_vec(), gb).unwrap());
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, g.scale(*c)),
            Op::Offset(x) => self.accumulate(grads, *x, g.clone()),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.dims2();
                let n = vb.cols();
                if self.requires_grad(*a) {
                    // dA = G · Bᵀ
                    let mut ga = vec![0.0; m * k];
                    gemm(false, true, m, n, k, g.data(), vb.data(), &mut ga, 0.0);
                    self.accumulate(grads, *a, Tensor::new(va.shape().to_vec(), ga).unwrap());
                }
                if self.requires_grad(*b) {
                    // dB = Aᵀ · G
                    let mut gb = vec![0.0; k * n];
                    gemm(true, false, k, m, n, va.data(), g.data(), &mut gb, 0.0);
                    self.accumulate(grads, *b, Tensor::new(vb.shape().to_vec(), gb).unwrap());
                }
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(&shape, g.item()));
            }
            Op::Mean(x) => {
                let v = self.value(*x);
                let scale = g.item() / v.len().max(1) as f64;
                self.accumulate(grads, *x, Tensor::full(v.shape(), scale));
            }
            Op::SumCols(x) => {
                let v = self.value(*x);
                let (r, c) = v.dims2();
                let data = (0..r * c).map(|i| g.data()[i / c]).collect();
                self.accumulate(grads, *x, Tensor::new(v.shape().to_vec(), data).unwrap());
            }
            Op::SliceCols(x, start) => {
                let v = self.value(*x);
                let (r, c) = v.dims2();
                let w = g.cols();
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    data[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *x, Tensor::new(v.shape().to_vec(), data).unwrap());
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        let part = g.slice_cols(start, start + w);
                        let part = part.reshape(self.value(p).shape()).unwrap();
                        self.accumulate(grads, p, part);
                    }
                    start += w;
                }
            }
            Op::SliceRows(x, start) => {
                let v = self.value(*x);
                let c = v.cols();
                let mut data = vec![0.0; v.len()];
                data[start * c..start * c + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *x, Tensor::new(v.shape().to_vec(), data).unwrap());
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let v = self.value(p);
                    let n = v.len();
                    if self.requires_grad(p) {
                        let part = Tensor::new(v.shape().to_vec(), g.data()[offset..offset + n].to_vec()).unwrap();
                        self.accumulate(grads, p, part);
                    }
                    offset += n;
                }
            }
            Op::PickRows(candidates, choice) => {
                let cols = g.cols();
                for (j, &cand) in candidates.iter().enumerate() {
                    if !self.requires_grad(cand) || !choice.contains(&j) {
                        continue;
                    }
                    let mut data = vec![0.0; g.len()];
                    for (r, _) in choice.iter().enumerate().filter(|(_, &c)| c == j) {
                        data[r * cols..(r + 1) * cols].copy_from_slice(g.row(r));
                    }
                    self.accumulate(grads, cand, Tensor::new(g.shape().to_vec(), data).unwrap());
                }
            }
        }
    }
}

/// `mean + stddev ⊙ ε` with `ε ~ N(0, I)` drawn from `rng`.
///
/// Gradient flows through `mean` and `stddev`; the noise is a constant. A zero
/// stddev is accepted and yields the degenerate point mass at `mean`; negative
/// or non-finite stddev is rejected.
pub fn gaussian_reparam_sample(
    g: &mut Graph,
    mean: NodeId,
    stddev: NodeId,
    rng: &mut Rng,
) -> Result<NodeId> {
    if let Some(bad) = g.value(stddev).data().iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
        return Err(Error::invalid(format!("stddev must be non-negative and finite, got {bad}")));
    }
    let shape = g.value(mean).shape().to_vec();
    let noise = Tensor::new(shape.clone(), rng.normals(shape.iter().product()))?;
    let eps = g.constant(noise);
    let scaled = g.mul(stddev, eps)?;
    g.add(mean, scaled)
}

fn broadcast(a: &Tensor, b: &Tensor) -> Result<(Bcast, Bcast, Vec<usize>)> {
    if a.shape() == b.shape() {
        return Ok((Bcast::Full, Bcast::Full, a.shape().to_vec()));
    }
    if b.len() == 1 {
        return Ok((Bcast::Full, Bcast::Scalar, a.shape().to_vec()));
    }
    if a.len() == 1 {
        return Ok((Bcast::Scalar, Bcast::Full, b.shape().to_vec()));
    }
    let is_row = |t: &Tensor| t.shape().len() == 1 || (t.shape().len() == 2 && t.shape()[0] == 1);
    if a.shape().len() == 2 && is_row(b) && b.cols() == a.cols() {
        return Ok((Bcast::Full, Bcast::Row, a.shape().to_vec()));
    }
    if b.shape().len() == 2 && is_row(a) && a.cols() == b.cols() {
        return Ok((Bcast::Row, Bcast::Full, b.shape().to_vec()));
    }
    Err(Error::Shape(format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape())))
}

#[inline]
fn bidx(kind: Bcast, i: usize, cols: usize) -> usize {
    match kind {
        Bcast::Full => i,
        Bcast::Row => i % cols,
        Bcast::Scalar => 0,
    }
}

fn binary_forward(kind: Binary) -> fn(f64, f64) -> f64 {
    match kind {
        Binary::Add => |a, b| a + b,
        Binary::Sub => |a, b| a - b,
        Binary::Mul => |a, b| a * b,
        Binary::Div => |a, b| a / b,
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unary_forward(kind: Unary, x: f64) -> f64 {
    match kind {
        Unary::Neg => -x,
        Unary::Tanh => x.tanh(),
        Unary::Softplus => softplus(x),
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Square => x * x,
        Unary::Relu => x.max(0.0),
        Unary::Elu => {
            if x > 0.0 {
                x
            } else {
                x.exp_m1()
            }
        }
        Unary::Sigmoid => sigmoid(x),
    }
}

/// `dy/dx` given input `x` and output `y`.
fn unary_derivative(kind: Unary, x: f64, y: f64) -> f64 {
    match kind {
        Unary::Neg => -1.0,
        Unary::Tanh => 1.0 - y * y,
        Unary::Softplus => sigmoid(x),
        Unary::Exp => y,
        Unary::Log => 1.0 / x,
        Unary::Square => 2.0 * x,
        Unary::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Unary::Elu => {
            if x > 0.0 {
                1.0
            } else {
                y + 1.0
            }
        }
        Unary::Sigmoid => y * (1.0 - y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_grad(f: impl Fn(&mut Graph, NodeId) -> NodeId, x: f64) -> (f64, f64) {
        let mut g = Graph::new();
        let xn = g.param(Tensor::scalar(x));
        let y = f(&mut g, xn);
        let grads = g.backward(y).unwrap();
        (g.value(y).item(), grads.wrt(xn).item())
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(scalar_grad(|g, x| g.tanh(x), 0.0).0, 0.0);
        assert!((scalar_grad(|g, x| g.softplus(x), 0.0).0 - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn product_rule_on_self() {
        let (_, d) = scalar_grad(|g, x| g.mul(x, x).unwrap(), 3.0);
        assert_eq!(d, 6.0);
    }

    #[test]
    fn stop_gradient_detaches_one_factor() {
        let (v, d) = scalar_grad(
            |g, x| {
                let s = g.stop_gradient(x);
                g.mul(s, x).unwrap()
            },
            3.0,
        );
        assert_eq!(v, 9.0);
        assert_eq!(d, 3.0);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[2, 2]));
        let c = g.scalar(5.0);
        let grads = g.backward(c).unwrap();
        assert_eq!(grads.wrt(x), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let mut g = Graph::new();
        let xv = Tensor::row_vector(&[1.0, -2.0, 0.5]);
        let x = g.param(xv.clone());
        let sq = g.square(x);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x), xv.scale(2.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.param(Tensor::ones(&[2, 3]));
        let b = g.param(Tensor::ones(&[3, 2]));
        let msg = g.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn row_broadcast_reduces_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::ones(&[3, 2]));
        let b = g.param(Tensor::row_vector(&[1.0, 2.0]));
        let s = g.add(a, b).unwrap();
        let loss = g.sum(s);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(b).data(), &[3.0, 3.0]);
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::eye(3));
        let x = g.param(Tensor::column(&[1.0, 2.0, 3.0]));
        let y = g.matmul(i, x).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn reparam_with_zero_stddev_is_mean() {
        let mut g = Graph::new();
        let m = g.param(Tensor::row_vector(&[1.0, -1.0]));
        let s = g.constant(Tensor::zeros(&[1, 2]));
        let y = gaussian_reparam_sample(&mut g, m, s, &mut Rng::new(0)).unwrap();
        assert_eq!(g.value(y), g.value(m));
    }

    #[test]
    fn reparam_rejects_negative_stddev() {
        let mut g = Graph::new();
        let m = g.param(Tensor::scalar(0.0));
        let s = g.constant(Tensor::scalar(-1.0));
        assert!(gaussian_reparam_sample(&mut g, m, s, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn pick_rows_routes_gradient_to_selected_rows() {
        let mut g = Graph::new();
        let a = g.param(Tensor::column(&[1.0, 2.0]));
        let b = g.param(Tensor::column(&[3.0, 4.0]));
        let p = g.pick_rows(&[a, b], &[1, 0]).unwrap();
        assert_eq!(g.value(p).data(), &[3.0, 2.0]);
        let loss = g.sum(p);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(a).data(), &[0.0, 1.0]);
        assert_eq!(grads.wrt(b).data(), &[1.0, 0.0]);
    }
}
