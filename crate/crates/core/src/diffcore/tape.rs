//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive as it is evaluated. Nodes are appended in
//! evaluation order, so the node list is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep. Only nodes that depend on a
//! parameter leaf carry gradients.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    BiasAdd(Var, Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    InnerProduct(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.value(a).shape().to_vec(),
            right: self.value(b).shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::tensor::matmul(self.value(a), self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::MatMul(a, b), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.same_shape(tb, "add")?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Add(a, b), tracked))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.same_shape(tb, "mul")?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Mul(a, b), tracked))
    }

    /// Adds a bias vector of length `n` to every row of an `m x n` matrix.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.rank() != 2 || tb.len() != tx.cols() || tb.rows() != 1 {
            return Err(self.mismatch("bias_add", x, bias));
        }
        let n = tx.cols();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let tracked = self.tracked(x) || self.tracked(bias);
        Ok(self.push(out, Op::BiasAdd(x, bias), tracked))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let tracked = self.tracked(x);
        self.push(out, Op::LeakyRelu(x, slope), tracked)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        let tracked = self.tracked(x);
        self.push(out, Op::Tanh(x), tracked)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let tracked = self.tracked(x);
        self.push(out, Op::Sigmoid(x), tracked)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        let tracked = self.tracked(x);
        self.push(out, Op::Softplus(x), tracked)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::Empty("concat inputs"));
        };
        let base = self.value(first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(format!(
                "concat axis {axis} out of range for rank {}",
                base.len()
            )));
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(self.mismatch("concat", first, v));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let inner: usize = t.shape()[axis..].iter().product();
                data.extend_from_slice(&t.data()[o * inner..(o + 1) * inner]);
            }
        }
        let out = Tensor::new(out_shape, data)?;
        let tracked = inputs.iter().any(|&v| self.tracked(v));
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            tracked,
        ))
    }

    /// Row-wise inner product over the trailing axis: `[m, n] x [m, n] -> [m, 1]`,
    /// or `[n] x [n] -> [1]`.
    pub fn inner_product(&mut self, u: Var, v: Var) -> Result<Var> {
        let (tu, tv) = (self.value(u), self.value(v));
        if tu.shape() != tv.shape() || tu.rank() > 2 {
            return Err(self.mismatch("inner_product", u, v));
        }
        let n = tu.cols();
        let data: Vec<f64> = tu
            .data()
            .chunks(n)
            .zip(tv.data().chunks(n))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum())
            .collect();
        let shape = if tu.rank() == 1 {
            vec![1]
        } else {
            vec![data.len(), 1]
        };
        let out = Tensor::new(shape, data)?;
        let tracked = self.tracked(u) || self.tracked(v);
        Ok(self.push(out, Op::InnerProduct(u, v), tracked))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let tracked = self.tracked(x);
        self.push(out, Op::Scale(x, c), tracked)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        let tracked = self.tracked(x);
        self.push(out, Op::AddScalar(x), tracked)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let tracked = self.tracked(x);
        self.push(out, Op::Sum(x), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let tracked = self.tracked(x);
        self.push(out, Op::Mean(x), tracked)
    }

    /// Reverse sweep from a scalar `loss`. Every tracked leaf gets a gradient,
    /// zero-filled when the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.tracked(loss) {
            grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    if self.tracked(*a) {
                        let slot = grad_slot(&mut grads, *a, ta.shape());
                        // dA += dC . B^T
                        gemm(m, n, k, g.data(), (n, 1), tb.data(), (1, n), 1.0, slot);
                    }
                    if self.tracked(*b) {
                        let slot = grad_slot(&mut grads, *b, tb.shape());
                        // dB += A^T . dC
                        gemm(k, m, n, ta.data(), (1, k), g.data(), (n, 1), 1.0, slot);
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.tracked(v) {
                            accumulate(&mut grads, v, g.shape(), |i| g.data()[i]);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.tracked(*a) {
                        let tb = self.value(*b).data();
                        accumulate(&mut grads, *a, g.shape(), |i| g.data()[i] * tb[i]);
                    }
                    if self.tracked(*b) {
                        let ta = self.value(*a).data();
                        accumulate(&mut grads, *b, g.shape(), |i| g.data()[i] * ta[i]);
                    }
                }
                Op::BiasAdd(x, bias) => {
                    if self.tracked(*x) {
                        accumulate(&mut grads, *x, g.shape(), |i| g.data()[i]);
                    }
                    if self.tracked(*bias) {
                        let shape = self.value(*bias).shape().to_vec();
                        let slot = grad_slot(&mut grads, *bias, &shape);
                        let n = slot.len();
                        for row in g.data().chunks(n) {
                            for (s, r) in slot.iter_mut().zip(row) {
                                *s += r;
                            }
                        }
                    }
                }
                Op::LeakyRelu(x, slope) => {
                    let tx = self.value(*x).data();
                    let slope = *slope;
                    accumulate(&mut grads, *x, g.shape(), |i| {
                        if tx[i] > 0.0 {
                            g.data()[i]
                        } else {
                            g.data()[i] * slope
                        }
                    });
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    accumulate(&mut grads, *x, g.shape(), |i| {
                        g.data()[i] * (1.0 - y[i] * y[i])
                    });
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    accumulate(&mut grads, *x, g.shape(), |i| {
                        g.data()[i] * y[i] * (1.0 - y[i])
                    });
                }
                Op::Softplus(x) => {
                    let tx = self.value(*x).data();
                    accumulate(&mut grads, *x, g.shape(), |i| g.data()[i] * sigmoid(tx[i]));
                }
                Op::Concat { inputs, axis } => {
                    let out_shape = node.value.shape();
                    let outer: usize = out_shape[..*axis].iter().product();
                    let out_inner: usize = out_shape[*axis..].iter().product();
                    let mut offset = 0;
                    for &v in inputs {
                        let shape = self.value(v).shape().to_vec();
                        let inner: usize = shape[*axis..].iter().product();
                        if self.tracked(v) {
                            let slot = grad_slot(&mut grads, v, &shape);
                            for o in 0..outer {
                                let src = &g.data()[o * out_inner + offset..][..inner];
                                for (s, x) in slot[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                                    *s += x;
                                }
                            }
                        }
                        offset += inner;
                    }
                }
                Op::InnerProduct(u, v) => {
                    let n = self.value(*u).cols();
                    if self.tracked(*u) {
                        let tv = self.value(*v).data();
                        let shape = self.value(*u).shape();
                        accumulate(&mut grads, *u, shape, |i| g.data()[i / n] * tv[i]);
                    }
                    if self.tracked(*v) {
                        let tu = self.value(*u).data();
                        let shape = self.value(*v).shape();
                        accumulate(&mut grads, *v, shape, |i| g.data()[i / n] * tu[i]);
                    }
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    accumulate(&mut grads, *x, g.shape(), |i| g.data()[i] * c);
                }
                Op::AddScalar(x) => {
                    accumulate(&mut grads, *x, g.shape(), |i| g.data()[i]);
                }
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    let shape = self.value(*x).shape().to_vec();
                    let slot = grad_slot(&mut grads, *x, &shape);
                    slot.iter_mut().for_each(|s| *s += gv);
                }
                Op::Mean(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    let gv = g.data()[0] / shape.iter().product::<usize>() as f64;
                    let slot = grad_slot(&mut grads, *x, &shape);
                    slot.iter_mut().for_each(|s| *s += gv);
                }
            }
            // Leaves keep their gradient; intermediates are dropped once consumed.
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }

        for (id, node) in self.nodes.iter().enumerate() {
            if node.tracked && matches!(node.op, Op::Leaf) && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }
}

fn grad_slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut [f64] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
}

/// `grad[v][i] += f(i)` for every element of `v`.
fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], f: impl Fn(usize) -> f64) {
    let slot = grad_slot(grads, v, shape);
    for (i, s) in slot.iter_mut().enumerate() {
        *s += f(i);
    }
}
