use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Primitive operations recorded on the tape. Operand fields are node ids.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Transpose(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Abs(usize),
    SumAll(usize),
    SumAxis { a: usize, axis: usize, keepdim: bool },
    SumSquares(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Slice { a: usize, axis: usize, start: usize },
    Pad { a: usize, axis: usize, start: usize },
    Reshape(usize),
    BroadcastTo(usize),
    SumTo(usize),
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![*a, *b],
            MatMul { a, b, .. } => vec![*a, *b],
            Neg(a)
            | Scale(a, _)
            | AddScalar(a)
            | Transpose(a)
            | Relu(a)
            | Tanh(a)
            | Sigmoid(a)
            | Exp(a)
            | Log(a)
            | Sqrt(a)
            | Abs(a)
            | SumAll(a)
            | SumSquares(a)
            | Softmax(a)
            | LogSoftmax(a)
            | Reshape(a)
            | BroadcastTo(a)
            | SumTo(a) => vec![*a],
            SumAxis { a, .. } | Slice { a, .. } | Pad { a, .. } => vec![*a],
            Concat { parts, .. } => parts.clone(),
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Arc<Tensor>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Append-only record of a computation. Node `i` only refers to nodes `< i`,
/// so insertion order is a topological order.
///
/// A tape is single-threaded; build one per thread.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A differentiable input.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(Arc::new(value), Op::Leaf, true)
    }

    pub fn var_shared(&self, value: Arc<Tensor>) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A value that is never differentiated.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Arc::new(value), Op::Leaf, false)
    }

    pub fn constant_shared(&self, value: Arc<Tensor>) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub(crate) fn value_of(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    pub(crate) fn op_of(&self, id: usize) -> Op {
        self.nodes.borrow()[id].op.clone()
    }

    /// Records `value` as produced by `op`. Results that depend on no
    /// differentiable input are stored as constants.
    pub(crate) fn record(&self, value: Tensor, op: Op) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.parents().iter().any(|&p| nodes[p].requires_grad)
        };
        let op = if requires_grad { op } else { Op::Leaf };
        self.push(Arc::new(value), op, requires_grad)
    }
}

fn same_tape(a: &Var<'_>, b: &Var<'_>) {
    assert!(std::ptr::eq(a.tape, b.tape), "variables belong to different tapes");
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// The same value as a constant node, cut off from the graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant_shared(self.value())
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'t> {
        let v = f(&self.value());
        self.tape.record(v, op)
    }

    fn try_unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        let v = f(&self.value())?;
        Ok(self.tape.record(v, op))
    }

    fn binary(&self, other: &Var<'t>, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        same_tape(self, other);
        let v = self.value().zip_with(&other.value(), name, f)?;
        Ok(self.tape.record(v, op))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |t| t.map(|v| -v))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |t| t.map(|v| c * v))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |t| t.map(|v| v + c))
    }

    /// Matrix product `self @ other`.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) @ op(other)` where `op` transposes when the flag is set.
    pub fn matmul_t(&self, other: &Var<'t>, ta: bool, tb: bool) -> Result<Var<'t>> {
        same_tape(self, other);
        let v = self.value().matmul_t(&other.value(), ta, tb)?;
        Ok(self.tape.record(v, Op::MatMul { a: self.id, b: other.id, ta, tb }))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        self.try_unary(Op::Transpose(self.id), |t| t.transpose())
    }

    /// Rectified linear unit; the derivative at 0 is taken to be 0.
    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |t| t.map(|v| v.max(0.0)))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), |t| t.map(f64::tanh))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |t| t.map(|v| 1.0 / (1.0 + (-v).exp())))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |t| t.map(f64::exp))
    }

    pub fn ln(&self) -> Var<'t> {
        self.unary(Op::Log(self.id), |t| t.map(f64::ln))
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.unary(Op::Sqrt(self.id), |t| t.map(f64::sqrt))
    }

    /// Absolute value; the derivative at 0 is taken to be 0.
    pub fn abs(&self) -> Var<'t> {
        self.unary(Op::Abs(self.id), |t| t.map(f64::abs))
    }

    pub fn square(&self) -> Var<'t> {
        self.mul(self).expect("a tensor always matches its own shape")
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Var<'t> {
        self.unary(Op::SumAll(self.id), |t| Tensor::scalar(t.sum()))
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Var<'t>> {
        self.try_unary(Op::SumAxis { a: self.id, axis, keepdim }, |t| t.sum_axis(axis, keepdim))
    }

    /// Squared L2 norm of all elements.
    pub fn sum_squares(&self) -> Var<'t> {
        self.unary(Op::SumSquares(self.id), |t| Tensor::scalar(t.data().iter().map(|v| v * v).sum()))
    }

    /// Softmax along the last axis.
    pub fn softmax(&self) -> Result<Var<'t>> {
        self.try_unary(Op::Softmax(self.id), |t| t.softmax())
    }

    /// Log-softmax along the last axis (log-sum-exp stabilised).
    pub fn log_softmax(&self) -> Result<Var<'t>> {
        self.try_unary(Op::LogSoftmax(self.id), |t| t.log_softmax())
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("concat of zero variables".into()))?;
        let values: Vec<Arc<Tensor>> = parts
            .iter()
            .map(|p| {
                same_tape(first, p);
                p.value()
            })
            .collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let v = Tensor::concat(&refs, axis)?;
        Ok(first.tape.record(v, Op::Concat { parts: parts.iter().map(|p| p.id).collect(), axis }))
    }

    /// Elements `start..start+len` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        self.try_unary(Op::Slice { a: self.id, axis, start }, |t| t.narrow(axis, start, len))
    }

    pub fn pad(&self, axis: usize, start: usize, full: usize) -> Result<Var<'t>> {
        self.try_unary(Op::Pad { a: self.id, axis, start }, |t| t.pad(axis, start, full))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        self.try_unary(Op::Reshape(self.id), |t| t.reshape(shape))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'t>> {
        self.try_unary(Op::BroadcastTo(self.id), |t| t.broadcast_to(shape))
    }

    pub fn sum_to(&self, shape: &[usize]) -> Result<Var<'t>> {
        self.try_unary(Op::SumTo(self.id), |t| t.sum_to(shape))
    }
}
