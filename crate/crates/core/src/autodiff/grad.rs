use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

use super::tape::{Op, Tape, Var};

fn reduce_to<'t>(g: Var<'t>, shape: &[usize]) -> Result<Var<'t>> {
    if g.shape() == shape {
        Ok(g)
    } else {
        g.sum_to(shape)
    }
}

/// Vector-Jacobian products of node `id`, for the parents selected by `need`.
fn vjp<'t>(
    tape: &'t Tape,
    id: usize,
    op: &Op,
    g: Var<'t>,
    create_graph: bool,
    need: &dyn Fn(usize) -> bool,
) -> Result<Vec<(usize, Var<'t>)>> {
    // With `create_graph` the saved operands stay connected so the returned
    // gradients can be differentiated again; otherwise they are constants.
    let operand = |i: usize| {
        if create_graph {
            Var { tape, id: i }
        } else {
            tape.constant_shared(tape.value_of(i))
        }
    };
    let shape_of = |i: usize| tape.value_of(i).shape().to_vec();
    let mask = |i: usize, f: fn(f64) -> f64| tape.constant(tape.value_of(i).map(f));

    let mut out = Vec::with_capacity(2);
    match *op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if need(a) {
                out.push((a, reduce_to(g, &shape_of(a))?));
            }
            if need(b) {
                out.push((b, reduce_to(g, &shape_of(b))?));
            }
        }
        Op::Sub(a, b) => {
            if need(a) {
                out.push((a, reduce_to(g, &shape_of(a))?));
            }
            if need(b) {
                out.push((b, reduce_to(g.neg(), &shape_of(b))?));
            }
        }
        Op::Mul(a, b) => {
            if need(a) {
                out.push((a, reduce_to(g.mul(&operand(b))?, &shape_of(a))?));
            }
            if need(b) {
                out.push((b, reduce_to(g.mul(&operand(a))?, &shape_of(b))?));
            }
        }
        Op::Div(a, b) => {
            let vb = operand(b);
            if need(a) {
                out.push((a, reduce_to(g.div(&vb)?, &shape_of(a))?));
            }
            if need(b) {
                let gb = g.mul(&operand(id))?.div(&vb)?.neg();
                out.push((b, reduce_to(gb, &shape_of(b))?));
            }
        }
        Op::Neg(a) => out.push((a, g.neg())),
        Op::Scale(a, c) => out.push((a, g.scale(c))),
        Op::AddScalar(a) => out.push((a, g)),
        Op::MatMul { a, b, ta, tb } => {
            if need(a) {
                let va = operand(b);
                let ga = if ta { va.matmul_t(&g, tb, true)? } else { g.matmul_t(&va, false, !tb)? };
                out.push((a, ga));
            }
            if need(b) {
                let va = operand(a);
                let gb = if tb { g.matmul_t(&va, true, ta)? } else { va.matmul_t(&g, !ta, false)? };
                out.push((b, gb));
            }
        }
        Op::Transpose(a) => out.push((a, g.transpose()?)),
        Op::Relu(a) => {
            let m = mask(a, |v| if v > 0.0 { 1.0 } else { 0.0 });
            out.push((a, g.mul(&m)?));
        }
        Op::Tanh(a) => {
            let y = operand(id);
            out.push((a, g.mul(&y.square().neg().add_scalar(1.0))?));
        }
        Op::Sigmoid(a) => {
            let y = operand(id);
            out.push((a, g.mul(&y)?.mul(&y.neg().add_scalar(1.0))?));
        }
        Op::Exp(a) => out.push((a, g.mul(&operand(id))?)),
        Op::Log(a) => out.push((a, g.div(&operand(a))?)),
        Op::Sqrt(a) => out.push((a, g.div(&operand(id).scale(2.0))?)),
        Op::Abs(a) => {
            let s = mask(a, |v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            });
            out.push((a, g.mul(&s)?));
        }
        Op::SumAll(a) => out.push((a, g.broadcast_to(&shape_of(a))?)),
        Op::SumAxis { a, axis, keepdim } => {
            let sa = shape_of(a);
            let gk = if keepdim {
                g
            } else {
                let mut kept = sa.clone();
                kept[axis] = 1;
                g.reshape(&kept)?
            };
            out.push((a, gk.broadcast_to(&sa)?));
        }
        Op::SumSquares(a) => out.push((a, operand(a).scale(2.0).mul(&g)?)),
        Op::Softmax(a) => {
            let y = operand(id);
            let last = y.shape().len() - 1;
            let dot = g.mul(&y)?.sum_axis(last, true)?;
            out.push((a, y.mul(&g.sub(&dot)?)?));
        }
        Op::LogSoftmax(a) => {
            let y = operand(id);
            let last = y.shape().len() - 1;
            let total = g.sum_axis(last, true)?;
            out.push((a, g.sub(&y.exp().mul(&total)?)?));
        }
        Op::Concat { ref parts, axis } => {
            let mut offset = 0;
            for &p in parts {
                let len = shape_of(p)[axis];
                if need(p) {
                    out.push((p, g.slice(axis, offset, len)?));
                }
                offset += len;
            }
        }
        Op::Slice { a, axis, start, .. } => {
            let full = shape_of(a)[axis];
            out.push((a, g.pad(axis, start, full)?));
        }
        Op::Pad { a, axis, start, .. } => {
            let len = shape_of(a)[axis];
            out.push((a, g.slice(axis, start, len)?));
        }
        Op::Reshape(a) => out.push((a, g.reshape(&shape_of(a))?)),
        Op::BroadcastTo(a) => out.push((a, g.sum_to(&shape_of(a))?)),
        Op::SumTo(a) => out.push((a, g.broadcast_to(&shape_of(a))?)),
    }
    Ok(out)
}

/// Gradients of the scalar `output` with respect to each of `wrt`.
///
/// Targets that `output` does not depend on get a zero gradient of matching
/// shape. With `create_graph` the returned variables are themselves recorded
/// on the tape and can be differentiated again.
pub fn grad<'t>(output: &Var<'t>, wrt: &[Var<'t>], create_graph: bool) -> Result<Vec<Var<'t>>> {
    let tape = output.tape;
    let out_shape = output.shape();
    if numel(&out_shape) != 1 {
        return Err(Error::NonScalarOutput(out_shape));
    }
    let n = output.id + 1;

    // Only nodes lying between a target and the output carry useful gradient.
    let mut depends = vec![false; n];
    for w in wrt {
        assert!(std::ptr::eq(w.tape, tape), "gradient target belongs to a different tape");
        if w.id < n {
            depends[w.id] = true;
        }
    }
    {
        let nodes = tape.nodes.borrow();
        for i in 0..n {
            if !depends[i] && nodes[i].requires_grad {
                depends[i] = nodes[i].op.parents().iter().any(|&p| depends[p]);
            }
        }
    }

    let mut grads: Vec<Option<Var<'t>>> = vec![None; n];
    let mut results: Vec<Option<Var<'t>>> = vec![None; wrt.len()];
    if depends[output.id] {
        grads[output.id] = Some(tape.constant(Tensor::ones(&out_shape)));
    }
    let need = |p: usize| depends[p] && tape.requires_grad_of(p);
    for i in (0..n).rev() {
        let Some(g) = grads[i].take() else { continue };
        for (k, w) in wrt.iter().enumerate() {
            if w.id == i {
                results[k] = Some(g);
            }
        }
        if !tape.requires_grad_of(i) {
            continue;
        }
        let op = tape.op_of(i);
        for (p, gp) in vjp(tape, i, &op, g, create_graph, &need)? {
            if !need(p) {
                continue;
            }
            grads[p] = Some(match grads[p] {
                None => gp,
                Some(acc) => acc.add(&gp)?,
            });
        }
    }
    Ok(results.into_iter().zip(wrt).map(|(r, w)| r.unwrap_or_else(|| tape.constant(Tensor::zeros(&w.shape())))).collect())
}

/// Like [`grad`] but returns plain tensors.
pub fn grad_values(output: &Var<'_>, wrt: &[Var<'_>]) -> Result<Vec<Tensor>> {
    Ok(grad(output, wrt, false)?.iter().map(|g| g.value().as_ref().clone()).collect())
}

/// Jacobian of a vector-valued `output` with respect to `x`, one backward pass
/// per output component. Row `i` holds the flattened gradient of component `i`.
pub fn jacobian<'t>(output: &Var<'t>, x: &Var<'t>, create_graph: bool) -> Result<Var<'t>> {
    let m = numel(&output.shape());
    let n = numel(&x.shape());
    let flat = output.reshape(&[m])?;
    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        let component = flat.slice(0, i, 1)?.sum();
        let g = grad(&component, &[*x], create_graph)?.remove(0);
        rows.push(g.reshape(&[1, n])?);
    }
    if rows.is_empty() {
        return Ok(x.tape.constant(Tensor::zeros(&[0, n])));
    }
    Var::concat(&rows, 0)
}

/// Per-example Jacobians of a batched map `B x m -> B x n` whose rows do not
/// interact: entry `c` of the result is the `B x n` matrix whose row `b` is the
/// gradient of `output[b, c]` with respect to `x[b, :]`.
pub fn batch_jacobian<'t>(output: &Var<'t>, x: &Var<'t>, create_graph: bool) -> Result<Vec<Var<'t>>> {
    let shape = output.shape();
    if shape.len() != 2 {
        return Err(Error::InvalidArgument(format!("batch_jacobian expects a matrix output, got {shape:?}")));
    }
    (0..shape[1])
        .map(|c| {
            let s = output.slice(1, c, 1)?.sum();
            Ok(grad(&s, &[*x], create_graph)?.remove(0))
        })
        .collect()
}
