//! Reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Graph`] records one forward pass eagerly; [`Value`] is a handle to a
//! node in it. Nodes are appended in creation order, so parents always
//! precede children and the backward sweep is a single reverse iteration
//! that visits each reachable node exactly once. Graphs are meant to live
//! for one training step and be dropped after [`Value::backward`].
//!
//! Supported kernels: add, sub, mul (equal-shape or scalar broadcast),
//! scalar scale, exp, log, sigmoid, relu, sum, mean, row/element gathers,
//! matmul, log-softmax over the last axis, and stop-gradient.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Real};
use crate::tensor::Tensor;

/// Identifier of a node within its graph.
pub type NodeId = usize;

#[derive(Debug)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Exp,
    Log,
    Sigmoid,
    /// max(x, 0); subgradient 0 at the kink.
    Relu,
    Sum,
    Mean,
    /// `table[ids[j], :]` for a rank-2 parent.
    GatherRows(Vec<usize>),
    /// `mat[r, ids[r]]` for every row r of a rank-2 parent.
    TakePerRow(Vec<usize>),
    /// Flat-index gather from any parent.
    Gather(Vec<usize>),
    MatMul,
    LogSoftmax,
    StopGradient,
}

#[derive(Debug)]
struct Node<T> {
    op: Op,
    parents: Vec<NodeId>,
    data: Tensor<T>,
    grad: Tensor<T>,
}

/// A recorded computation graph. Cheap to clone (shared handle).
#[derive(Clone)]
pub struct Graph<T> {
    nodes: Rc<RefCell<Vec<Node<T>>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Rc::new(RefCell::new(Vec::new())),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, parents: Vec<NodeId>, data: Tensor<T>) -> Value<T> {
        let mut nodes = self.nodes.borrow_mut();
        let grad = Tensor::zeros(data.shape().to_vec());
        let id = nodes.len();
        nodes.push(Node {
            op,
            parents,
            data,
            grad,
        });
        Value {
            graph: self.clone(),
            id,
        }
    }

    /// Insert an input node holding `data`.
    pub fn leaf(&self, data: Tensor<T>) -> Value<T> {
        self.push(Op::Leaf, vec![], data)
    }

    pub fn scalar(&self, x: T) -> Value<T> {
        self.leaf(Tensor::scalar(x))
    }

    pub fn vector(&self, data: Vec<T>) -> Value<T> {
        self.leaf(Tensor::vector(data))
    }

    /// Reset every gradient accumulator to zero.
    pub fn zero_grads(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad.fill(T::zero());
        }
    }

    fn same_graph(&self, other: &Graph<T>) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }
}

/// Handle to a node in a [`Graph`]: a differentiable array value.
#[derive(Clone)]
pub struct Value<T> {
    graph: Graph<T>,
    id: NodeId,
}

impl<T: Real> Value<T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor<T> {
        self.graph.nodes.borrow()[self.id].data.clone()
    }

    /// Copy of the accumulated gradient.
    pub fn grad(&self) -> Tensor<T> {
        self.graph.nodes.borrow()[self.id].grad.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].data.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.graph.nodes.borrow()[self.id].data.numel()
    }

    /// The element of a one-element value.
    pub fn item(&self) -> T {
        self.graph.nodes.borrow()[self.id].data.item()
    }

    fn check_same_graph(&self, other: &Value<T>) -> Result<()> {
        if self.graph.same_graph(&other.graph) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "operands belong to different graphs".into(),
            ))
        }
    }

    fn binary(&self, other: &Value<T>, op: Op) -> Result<Value<T>> {
        self.check_same_graph(other)?;
        let data = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].data;
            let b = &nodes[other.id].data;
            broadcast_zip(a, b, |x, y| match op {
                Op::Add => x + y,
                Op::Sub => x - y,
                Op::Mul => x * y,
                _ => unreachable!(),
            })?
        };
        Ok(self.graph.push(op, vec![self.id, other.id], data))
    }

    pub fn add(&self, other: &Value<T>) -> Result<Value<T>> {
        self.binary(other, Op::Add)
    }

    pub fn sub(&self, other: &Value<T>) -> Result<Value<T>> {
        self.binary(other, Op::Sub)
    }

    pub fn mul(&self, other: &Value<T>) -> Result<Value<T>> {
        self.binary(other, Op::Mul)
    }

    /// Multiply every element by the constant `c`.
    pub fn scale(&self, c: T) -> Value<T> {
        let data = {
            let nodes = self.graph.nodes.borrow();
            let mut t = nodes[self.id].data.clone();
            t.scale_assign(c);
            t
        };
        self.graph.push(Op::Scale(c.as_f64()), vec![self.id], data)
    }

    pub fn neg(&self) -> Value<T> {
        self.scale(-T::one())
    }

    fn unary(&self, op: Op, f: impl Fn(T) -> T) -> Value<T> {
        let data = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].data;
            let out: Vec<T> = src.data().iter().map(|&x| f(x)).collect();
            Tensor::new(src.shape().to_vec(), out).expect("unary preserves shape")
        };
        self.graph.push(op, vec![self.id], data)
    }

    pub fn exp(&self) -> Value<T> {
        self.unary(Op::Exp, |x| x.exp())
    }

    pub fn sigmoid(&self) -> Value<T> {
        self.unary(Op::Sigmoid, sigmoid)
    }

    /// Elementwise max(x, 0).
    pub fn relu(&self) -> Value<T> {
        self.unary(Op::Relu, |x| if x > T::zero() { x } else { T::zero() })
    }

    /// Natural logarithm. Nonpositive inputs are a hard error: clamping
    /// would silently mask coefficient collapse downstream.
    pub fn log(&self) -> Result<Value<T>> {
        {
            let nodes = self.graph.nodes.borrow();
            if let Some(&bad) = nodes[self.id]
                .data
                .data()
                .iter()
                .find(|&&x| !(x > T::zero()))
            {
                return Err(Error::Domain(format!("log of nonpositive value {bad}")));
            }
        }
        Ok(self.unary(Op::Log, |x| x.ln()))
    }

    pub fn sum(&self) -> Value<T> {
        let data = {
            let nodes = self.graph.nodes.borrow();
            let mut acc = T::zero();
            for &x in nodes[self.id].data.data() {
                acc += x;
            }
            Tensor::scalar(acc)
        };
        self.graph.push(Op::Sum, vec![self.id], data)
    }

    pub fn mean(&self) -> Value<T> {
        let data = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].data;
            let mut acc = T::zero();
            for &x in src.data() {
                acc += x;
            }
            Tensor::scalar(acc / T::from_f64_c(src.numel() as f64))
        };
        self.graph.push(Op::Mean, vec![self.id], data)
    }

    /// Select rows of a rank-2 value: `out[j, :] = self[ids[j], :]`.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Value<T>> {
        let data = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].data;
            if src.shape().len() != 2 {
                return Err(Error::ShapeMismatch(format!(
                    "gather_rows needs a rank-2 operand, got shape {:?}",
                    src.shape()
                )));
            }
            let (rows, cols) = (src.rows(), src.cols());
            let mut out = Vec::with_capacity(ids.len() * cols);
            for &r in ids {
                if r >= rows {
                    return Err(Error::InvalidArgument(format!(
                        "row index {r} out of range for {rows} rows"
                    )));
                }
                out.extend_from_slice(src.row(r));
            }
            Tensor::new(vec![ids.len(), cols], out)?
        };
        Ok(self
            .graph
            .push(Op::GatherRows(ids.to_vec()), vec![self.id], data))
    }

    /// One element per row of a rank-2 value: `out[r] = self[r, ids[r]]`.
    pub fn take_per_row(&self, ids: &[usize]) -> Result<Value<T>> {
        let data = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].data;
            if src.shape().len() != 2 || ids.len() != src.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "take_per_row: shape {:?} with {} indices",
                    src.shape(),
                    ids.len()
                )));
            }
            let cols = src.cols();
            let mut out = Vec::with_capacity(ids.len());
            for (r, &c) in ids.iter().enumerate() {
                if c >= cols {
                    return Err(Error::InvalidArgument(format!(
                        "column index {c} out of range for {cols} columns"
                    )));
                }
                out.push(src.row(r)[c]);
            }
            Tensor::vector(out)
        };
        Ok(self
            .graph
            .push(Op::TakePerRow(ids.to_vec()), vec![self.id], data))
    }

    /// Flat-index gather: `out[j] = self.data[ids[j]]`.
    pub fn gather(&self, ids: &[usize]) -> Result<Value<T>> {
        let data = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].data;
            let mut out = Vec::with_capacity(ids.len());
            for &i in ids {
                if i >= src.numel() {
                    return Err(Error::InvalidArgument(format!(
                        "flat index {i} out of range for {} elements",
                        src.numel()
                    )));
                }
                out.push(src.data()[i]);
            }
            Tensor::vector(out)
        };
        Ok(self.graph.push(Op::Gather(ids.to_vec()), vec![self.id], data))
    }

    /// Rank-2 matrix product `self @ other`.
    pub fn matmul(&self, other: &Value<T>) -> Result<Value<T>> {
        self.check_same_graph(other)?;
        let data = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].data;
            let b = &nodes[other.id].data;
            if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "matmul of {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            matmul_raw(a, b)
        };
        Ok(self.graph.push(Op::MatMul, vec![self.id, other.id], data))
    }

    /// Log-softmax over the last axis, computed in max-shifted form.
    /// Rejects non-finite logits.
    pub fn log_softmax(&self) -> Result<Value<T>> {
        let data = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].data;
            if src.shape().is_empty() {
                return Err(Error::ShapeMismatch(
                    "log_softmax needs at least one axis".into(),
                ));
            }
            if !src.all_finite() {
                return Err(Error::Domain("log_softmax of non-finite logits".into()));
            }
            let cols = *src.shape().last().expect("rank checked above");
            let rows = src.numel() / cols;
            let mut out = vec![T::zero(); src.numel()];
            for r in 0..rows {
                let row = &src.data()[r * cols..(r + 1) * cols];
                log_softmax_row(row, &mut out[r * cols..(r + 1) * cols]);
            }
            Tensor::new(src.shape().to_vec(), out)?
        };
        Ok(self.graph.push(Op::LogSoftmax, vec![self.id], data))
    }

    /// Identity forward; blocks all gradient flow to ancestors.
    pub fn stop_gradient(&self) -> Value<T> {
        let data = self.graph.nodes.borrow()[self.id].data.clone();
        self.graph.push(Op::StopGradient, vec![self.id], data)
    }

    /// Reverse sweep from a scalar root. Gradients accumulate into each
    /// node's `grad`; repeated calls without [`Graph::zero_grads`] add up,
    /// each call contributing exactly one ∂root/∂value.
    pub fn backward(&self) -> Result<()> {
        let mut nodes = self.graph.nodes.borrow_mut();
        if !nodes[self.id].data.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward root must be scalar, got shape {:?}",
                nodes[self.id].data.shape()
            )));
        }
        let root = self.id;
        // Upstream gradients of this pass only, kept apart from the
        // persistent accumulators so repeated backward calls stay correct.
        let mut pass: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        pass[root] = Some(Tensor::scalar(T::one()));
        for id in (0..=root).rev() {
            let up = match pass[id].take() {
                Some(u) => u,
                None => continue,
            };
            backprop_node(&nodes, id, &up, &mut pass);
            nodes[id].grad.add_assign(&up);
        }
        Ok(())
    }
}

/// Scratch gradient for parent `p`, created on first touch.
fn pass_slot<'a, T: Real>(
    nodes: &[Node<T>],
    pass: &'a mut [Option<Tensor<T>>],
    p: usize,
) -> &'a mut Tensor<T> {
    pass[p].get_or_insert_with(|| Tensor::zeros(nodes[p].data.shape().to_vec()))
}

/// Apply one node's backward rule, accumulating the upstream gradient `up`
/// into this pass's parent slots.
fn backprop_node<T: Real>(
    nodes: &[Node<T>],
    id: usize,
    up: &Tensor<T>,
    pass: &mut [Option<Tensor<T>>],
) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf | Op::StopGradient => {}
        Op::Add => {
            accumulate_broadcast(pass_slot(nodes, pass, node.parents[0]), up, |u| u);
            accumulate_broadcast(pass_slot(nodes, pass, node.parents[1]), up, |u| u);
        }
        Op::Sub => {
            accumulate_broadcast(pass_slot(nodes, pass, node.parents[0]), up, |u| u);
            accumulate_broadcast(pass_slot(nodes, pass, node.parents[1]), up, |u| -u);
        }
        Op::Mul => {
            let (pa, pb) = (node.parents[0], node.parents[1]);
            accumulate_broadcast_with(
                pass_slot(nodes, pass, pa),
                up,
                &nodes[pb].data,
                |u, b| u * b,
            );
            accumulate_broadcast_with(
                pass_slot(nodes, pass, pb),
                up,
                &nodes[pa].data,
                |u, a| u * a,
            );
        }
        Op::Scale(c) => {
            let c = T::from_f64_c(*c);
            let g = pass_slot(nodes, pass, node.parents[0]).data_mut();
            for (gi, &u) in g.iter_mut().zip(up.data()) {
                *gi += c * u;
            }
        }
        Op::Exp => {
            // d exp = exp(x) = saved output
            let g = pass_slot(nodes, pass, node.parents[0]).data_mut();
            for ((gi, &u), &o) in g.iter_mut().zip(up.data()).zip(node.data.data()) {
                *gi += u * o;
            }
        }
        Op::Log => {
            let p = node.parents[0];
            let x = &nodes[p].data;
            let g = pass_slot(nodes, pass, p).data_mut();
            for ((gi, &u), &xi) in g.iter_mut().zip(up.data()).zip(x.data()) {
                *gi += u / xi;
            }
        }
        Op::Sigmoid => {
            let g = pass_slot(nodes, pass, node.parents[0]).data_mut();
            for ((gi, &u), &s) in g.iter_mut().zip(up.data()).zip(node.data.data()) {
                *gi += u * s * (T::one() - s);
            }
        }
        Op::Relu => {
            let p = node.parents[0];
            let x = &nodes[p].data;
            let g = pass_slot(nodes, pass, p).data_mut();
            for ((gi, &u), &xi) in g.iter_mut().zip(up.data()).zip(x.data()) {
                if xi > T::zero() {
                    *gi += u;
                }
            }
        }
        Op::Sum => {
            let u = up.item();
            for gi in pass_slot(nodes, pass, node.parents[0]).data_mut() {
                *gi += u;
            }
        }
        Op::Mean => {
            let p = node.parents[0];
            let n = T::from_f64_c(nodes[p].data.numel() as f64);
            let u = up.item() / n;
            for gi in pass_slot(nodes, pass, p).data_mut() {
                *gi += u;
            }
        }
        Op::GatherRows(ids) => {
            let p = node.parents[0];
            let cols = nodes[p].data.cols();
            let g = pass_slot(nodes, pass, p).data_mut();
            for (j, &r) in ids.iter().enumerate() {
                for c in 0..cols {
                    g[r * cols + c] += up.data()[j * cols + c];
                }
            }
        }
        Op::TakePerRow(ids) => {
            let p = node.parents[0];
            let cols = nodes[p].data.cols();
            let g = pass_slot(nodes, pass, p).data_mut();
            for (r, &c) in ids.iter().enumerate() {
                g[r * cols + c] += up.data()[r];
            }
        }
        Op::Gather(ids) => {
            let g = pass_slot(nodes, pass, node.parents[0]).data_mut();
            for (j, &i) in ids.iter().enumerate() {
                g[i] += up.data()[j];
            }
        }
        Op::MatMul => {
            let (pa, pb) = (node.parents[0], node.parents[1]);
            let (m, k) = (nodes[pa].data.rows(), nodes[pa].data.cols());
            let n = nodes[pb].data.cols();
            // dA += U Bᵀ ; dB += Aᵀ U
            {
                let b = nodes[pb].data.clone();
                let ga = pass_slot(nodes, pass, pa).data_mut();
                for i in 0..m {
                    for j in 0..k {
                        let mut acc = T::zero();
                        for c in 0..n {
                            acc += up.data()[i * n + c] * b.data()[j * n + c];
                        }
                        ga[i * k + j] += acc;
                    }
                }
            }
            {
                let a = nodes[pa].data.clone();
                let gb = pass_slot(nodes, pass, pb).data_mut();
                for i in 0..k {
                    for j in 0..n {
                        let mut acc = T::zero();
                        for r in 0..m {
                            acc += a.data()[r * k + i] * up.data()[r * n + j];
                        }
                        gb[i * n + j] += acc;
                    }
                }
            }
        }
        Op::LogSoftmax => {
            let p = node.parents[0];
            let cols = *node.data.shape().last().expect("rank>=1");
            let rows = node.data.numel() / cols;
            let g = pass_slot(nodes, pass, p).data_mut();
            for r in 0..rows {
                let seg = r * cols..(r + 1) * cols;
                let mut usum = T::zero();
                for &u in &up.data()[seg.clone()] {
                    usum += u;
                }
                for c in 0..cols {
                    let i = r * cols + c;
                    g[i] += up.data()[i] - node.data.data()[i].exp() * usum;
                }
            }
        }
    }
}

/// Max-shifted log-softmax of one row.
fn log_softmax_row<T: Real>(row: &[T], out: &mut [T]) {
    let mut m = row[0];
    for &x in row {
        if x > m {
            m = x;
        }
    }
    let mut z = T::zero();
    for &x in row {
        z += (x - m).exp();
    }
    let lz = z.ln();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = x - m - lz;
    }
}

fn matmul_raw<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for l in 0..k {
            let av = a.data()[i * k + l];
            let brow = &b.data()[l * n..(l + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out).expect("matmul shape")
}

/// Elementwise combine with scalar broadcasting (either side may be a
/// one-element tensor); equal shapes otherwise.
fn broadcast_zip<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let out: Vec<T> = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(a.shape().to_vec(), out)
    } else if a.is_scalar() {
        let x = a.item();
        let out: Vec<T> = b.data().iter().map(|&y| f(x, y)).collect();
        Tensor::new(b.shape().to_vec(), out)
    } else if b.is_scalar() {
        let y = b.item();
        let out: Vec<T> = a.data().iter().map(|&x| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), out)
    } else {
        Err(Error::ShapeMismatch(format!(
            "cannot broadcast {:?} with {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

/// Accumulate `f(up)` into `grad`, reducing over `up` when `grad` is the
/// scalar side of a broadcast.
fn accumulate_broadcast<T: Real>(grad: &mut Tensor<T>, up: &Tensor<T>, f: impl Fn(T) -> T) {
    if grad.numel() == up.numel() {
        for (g, &u) in grad.data_mut().iter_mut().zip(up.data()) {
            *g += f(u);
        }
    } else {
        debug_assert!(grad.is_scalar());
        let mut acc = T::zero();
        for &u in up.data() {
            acc += f(u);
        }
        grad.data_mut()[0] += acc;
    }
}

/// Like [`accumulate_broadcast`] but the chain rule also needs the other
/// operand's forward data (which may itself be scalar-broadcast).
fn accumulate_broadcast_with<T: Real>(
    grad: &mut Tensor<T>,
    up: &Tensor<T>,
    other: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) {
    let other_at = |i: usize| {
        if other.is_scalar() {
            other.item()
        } else {
            other.data()[i]
        }
    };
    if grad.numel() == up.numel() {
        for (i, (g, &u)) in grad.data_mut().iter_mut().zip(up.data()).enumerate() {
            *g += f(u, other_at(i));
        }
    } else {
        debug_assert!(grad.is_scalar());
        let mut acc = T::zero();
        for (i, &u) in up.data().iter().enumerate() {
            acc += f(u, other_at(i));
        }
        grad.data_mut()[0] += acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type G = Graph<f64>;

    #[test]
    fn sigmoid_at_zero() {
        let g = G::new();
        let x = g.scalar(0.0);
        assert_eq!(x.sigmoid().item(), 0.5);
    }

    #[test]
    fn exp_log_round_trip() {
        let g = G::new();
        let x = g.scalar(2.5);
        let y = x.log().unwrap().exp();
        assert!((y.item() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn sum_forward_and_grad() {
        let g = G::new();
        let x = g.vector(vec![1.0, 2.0, 3.0]);
        let s = x.sum();
        assert_eq!(s.item(), 6.0);
        s.backward().unwrap();
        assert_eq!(x.grad().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn log_softmax_uniform() {
        let g = G::new();
        let x = g.vector(vec![0.0, 0.0]);
        let y = x.log_softmax().unwrap();
        let ln2 = 2.0f64.ln();
        assert!((y.value().data()[0] + ln2).abs() < 1e-15);
        assert!((y.value().data()[1] + ln2).abs() < 1e-15);
    }

    #[test]
    fn log_softmax_shift_invariance() {
        let g = G::new();
        let a = g.vector(vec![1.0, -2.0, 0.5]);
        let b = g.vector(vec![1.0 + 123.0, -2.0 + 123.0, 0.5 + 123.0]);
        let la = a.log_softmax().unwrap().value();
        let lb = b.log_softmax().unwrap().value();
        for (x, y) in la.data().iter().zip(lb.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_two_zero() {
        // [2, 0]: hand log-sum-exp is ln(e^2 + 1).
        let g = G::new();
        let x = g.vector(vec![2.0, 0.0]);
        let y = x.log_softmax().unwrap().value();
        let lse = (2.0f64.exp() + 1.0).ln();
        assert!((y.data()[0] - (2.0 - lse)).abs() < 1e-15);
        assert!((y.data()[1] - (0.0 - lse)).abs() < 1e-15);
        assert!((y.data()[0] - (-0.126928)).abs() < 1e-6);
        assert!((y.data()[1] - (-2.126928)).abs() < 1e-6);
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let g = G::new();
        let x = g
            .leaf(Tensor::matrix(2, 3, vec![800.0, -3.0, 0.1, -700.0, 2.0, 2.0]).unwrap());
        let y = x.log_softmax().unwrap().value();
        for r in 0..2 {
            let s: f64 = y.row(r).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12, "row {r} sums to {s}");
        }
    }

    #[test]
    fn log_softmax_rejects_non_finite() {
        let g = G::new();
        let x = g.vector(vec![1.0, f64::NAN]);
        assert!(x.log_softmax().is_err());
        let y = g.vector(vec![f64::INFINITY, 0.0]);
        assert!(y.log_softmax().is_err());
    }

    #[test]
    fn log_rejects_nonpositive() {
        let g = G::new();
        assert!(g.scalar(0.0).log().is_err());
        assert!(g.scalar(-1.0).log().is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g = G::new();
        let a = g.vector(vec![1.0, 2.0]);
        let b = g.vector(vec![1.0, 2.0, 3.0]);
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn scalar_broadcast() {
        let g = G::new();
        let a = g.scalar(2.0);
        let b = g.vector(vec![1.0, 2.0, 3.0]);
        let c = a.mul(&b).unwrap();
        assert_eq!(c.value().data(), &[2.0, 4.0, 6.0]);
        let s = c.sum();
        s.backward().unwrap();
        // d/da sum(a*b) = sum(b) = 6
        assert_eq!(a.grad().item(), 6.0);
        assert_eq!(b.grad().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn stop_gradient_product_rule() {
        // d/dx [sg(x) * x] at x = 3 is 3, not 6.
        let g = G::new();
        let x = g.scalar(3.0);
        let y = x.stop_gradient().mul(&x).unwrap();
        assert_eq!(y.item(), 9.0);
        y.backward().unwrap();
        assert_eq!(x.grad().item(), 3.0);
    }

    #[test]
    fn stop_gradient_forward_identity() {
        let g = G::new();
        let x = g.vector(vec![3.0, -1.25, 0.1 + 0.2]);
        let y = x.stop_gradient();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn stop_gradient_sigmoid_log_mix() {
        // d/dx [sg(sigmoid(x)) * ln(x)] at x = 1 is sigmoid(1).
        let g = G::new();
        let x = g.scalar(1.0);
        let y = x.sigmoid().stop_gradient().mul(&x.log().unwrap()).unwrap();
        y.backward().unwrap();
        let s1 = sigmoid(1.0f64);
        assert!((x.grad().item() - s1).abs() < 1e-12);
        assert!((x.grad().item() - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn stop_gradient_leaves_grad_zero() {
        let g = G::new();
        let x = g.vector(vec![1.0, 2.0]);
        let y = x.stop_gradient();
        let s = y.sum();
        s.backward().unwrap();
        assert_eq!(x.grad().data(), &[0.0, 0.0]);
        assert_eq!(y.grad().data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_square() {
        let g = G::new();
        let x = g.scalar(3.0);
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().item(), 6.0);
    }

    #[test]
    fn backward_sigmoid_at_zero() {
        let g = G::new();
        let x = g.scalar(0.0);
        let y = x.sigmoid();
        y.backward().unwrap();
        assert_eq!(x.grad().item(), 0.25);
    }

    #[test]
    fn backward_neg_log_sigmoid() {
        // d/dz [-ln(sigmoid(z))] = -sigmoid(-z); at z = 0.2 that is -0.450166.
        let g = G::new();
        let z = g.scalar(0.2);
        let y = z.sigmoid().log().unwrap().neg();
        y.backward().unwrap();
        let expect = -sigmoid(-0.2f64);
        assert!((z.grad().item() - expect).abs() < 1e-12);
        assert!((z.grad().item() - (-0.450166)).abs() < 1e-6);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let g = G::new();
        let x = g.scalar(5.0);
        let y = x.add(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().item(), 2.0);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let g = G::new();
        let x = g.scalar(3.0);
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().item(), 12.0);
        g.zero_grads();
        assert_eq!(x.grad().item(), 0.0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let g = G::new();
        let x = g.vector(vec![1.0, 2.0]);
        assert!(x.backward().is_err());
    }

    #[test]
    fn root_grad_is_one() {
        let g = G::new();
        let x = g.scalar(2.0);
        let y = x.exp();
        y.backward().unwrap();
        assert_eq!(y.grad().item(), 1.0);
    }

    #[test]
    fn cross_graph_rejected() {
        let g1 = G::new();
        let g2 = G::new();
        let a = g1.scalar(1.0);
        let b = g2.scalar(2.0);
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn matmul_known_product() {
        let g = G::new();
        let a = g.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.leaf(Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.value().data(), &[19.0, 22.0, 43.0, 50.0]);
        c.sum().backward().unwrap();
        // d sum(AB)/dA = 1 Bᵀ: row sums of Bᵀ columns.
        assert_eq!(a.grad().data(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(b.grad().data(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn gather_rows_and_backward() {
        let g = G::new();
        let t = g.leaf(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let picked = t.gather_rows(&[2, 0, 2]).unwrap();
        assert_eq!(picked.value().data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        picked.sum().backward().unwrap();
        assert_eq!(t.grad().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn take_per_row_and_backward() {
        let g = G::new();
        let m = g.leaf(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let v = m.take_per_row(&[2, 0]).unwrap();
        assert_eq!(v.value().data(), &[3.0, 4.0]);
        v.sum().backward().unwrap();
        assert_eq!(m.grad().data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn gather_flat_and_backward() {
        let g = G::new();
        let v = g.vector(vec![10.0, 20.0, 30.0, 40.0]);
        let picked = v.gather(&[3, 1, 3]).unwrap();
        assert_eq!(picked.value().data(), &[40.0, 20.0, 40.0]);
        picked.sum().backward().unwrap();
        assert_eq!(v.grad().data(), &[0.0, 1.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_kink_subgradient_zero() {
        let g = G::new();
        let x = g.vector(vec![-1.0, 0.0, 2.0]);
        let y = x.relu();
        assert_eq!(y.value().data(), &[0.0, 0.0, 2.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn mean_backward() {
        let g = G::new();
        let x = g.vector(vec![1.0, 3.0, 5.0, 7.0]);
        let m = x.mean();
        assert_eq!(m.item(), 4.0);
        m.backward().unwrap();
        assert_eq!(x.grad().data(), &[0.25, 0.25, 0.25, 0.25]);
    }
}
