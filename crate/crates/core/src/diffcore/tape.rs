//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every operation appends a node whose inputs have strictly smaller
//! indices, so the tape is acyclic by construction and reverse index
//! order is a valid reverse topological order. Values are checked for
//! finiteness as they are produced; the first NaN or infinity aborts
//! with the name of the producing operation.

use std::rc::Rc;

use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities available on the tape.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    /// Leaky rectifier with the given negative-side slope.
    LeakyRelu(f64),
}

impl Activation {
    /// Leaky rectifier with slope 0.2, the one used by the relation-strength functions.
    pub const LEAKY: Activation = Activation::LeakyRelu(0.2);

    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::LeakyRelu(slope) => {
                if x > T::zero() {
                    x
                } else {
                    x * T::lit(slope)
                }
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::LeakyRelu(_) => "leaky_relu",
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Sparse pattern of multi-hot type sets over a `rows × cols` grid.
///
/// Entry `(r, c, types)` contributes `Σ_{k ∈ types} w_k` at `(r, c)` in
/// [`Tape::multi_hot_mix`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MultiHotPattern {
    pub rows: usize,
    pub cols: usize,
    pub n_types: usize,
    pub entries: Vec<(usize, usize, Vec<usize>)>,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    ConstMatMul(Rc<Tensor<T>>, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ConstMul(Var, Rc<Tensor<T>>),
    AddRow(Var, Var),
    AddScalar(Var, Var),
    OuterSum(Var, Var),
    Scale(Var, T),
    Activate(Var, Activation),
    Sum(Var),
    Reshape(Var),
    Slice(Var, usize),
    ConcatCols(Var, Var),
    MaskedSoftmax(Var, Rc<Vec<bool>>),
    PairwiseHinge(Var, Rc<Vec<T>>),
    MultiHotMix(Var, Rc<MultiHotPattern>),
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`; zeros when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

#[derive(Default)]
pub struct Tape<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            other => inputs(other).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf: gradients are accumulated into it.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        let v = self.push(Op::Leaf, value, "param")?;
        self.nodes[v.0].requires_grad = true;
        Ok(v)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(Op::Leaf, value, "constant")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), value, "matmul")
    }

    /// `k · b` for a fixed matrix `k` shared without copying onto the tape.
    pub fn const_matmul(&mut self, k: Rc<Tensor<T>>, b: Var) -> Result<Var> {
        let value = k.matmul(self.value(b))?;
        self.push(Op::ConstMatMul(k, b), value, "const_matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        self.push(Op::Transpose(a), value, "transpose")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), value, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), value, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), value, "mul")
    }

    /// Elementwise product with a fixed tensor.
    pub fn const_mul(&mut self, a: Var, k: Rc<Tensor<T>>) -> Result<Var> {
        if self.shape(a) != k.shape() {
            return Err(Error::shape("const_mul", self.shape(a), k.shape()));
        }
        let value = self.value(a).zip_map(&k, |x, y| x * y);
        self.push(Op::ConstMul(a, k), value, "const_mul")
    }

    /// Adds a length-`n` vector to every row of an `m × n` matrix.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (ms, rs) = (self.shape(m), self.shape(row));
        if ms.len() != 2 || rs.len() != 1 || ms[1] != rs[0] {
            return Err(Error::shape("add_row", ms, rs));
        }
        let cols = ms[1];
        let mut value = self.value(m).clone();
        let r = self.value(row).data().to_vec();
        for (idx, x) in value.data_mut().iter_mut().enumerate() {
            *x = *x + r[idx % cols];
        }
        self.push(Op::AddRow(m, row), value, "add_row")
    }

    /// Adds a one-element tensor to every entry.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::shape("add_scalar", self.shape(a), self.shape(s)));
        }
        let c = self.value(s).data()[0];
        let value = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a, s), value, "add_scalar")
    }

    /// `out[i][j] = s[i] + t[j]` for vectors `s` (length m) and `t` (length n).
    pub fn outer_sum(&mut self, s: Var, t: Var) -> Result<Var> {
        let (ss, ts) = (self.shape(s), self.shape(t));
        if ss.len() != 1 || ts.len() != 1 {
            return Err(Error::shape("outer_sum", ss, ts));
        }
        let (sv, tv) = (self.value(s).data(), self.value(t).data());
        let mut data = Vec::with_capacity(sv.len() * tv.len());
        for &a in sv {
            data.extend(tv.iter().map(|&b| a + b));
        }
        let value = Tensor::matrix(sv.len(), tv.len(), data)?;
        self.push(Op::OuterSum(s, t), value, "outer_sum")
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let value = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), value, "scale")
    }

    pub fn activation(&mut self, kind: Activation, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| kind.apply(x));
        self.push(Op::Activate(a, kind), value, kind.name())
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(Activation::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(Activation::Tanh, a)
    }

    pub fn leaky_relu(&mut self, a: Var) -> Result<Var> {
        self.activation(Activation::LEAKY, a)
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value, "sum")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        self.push(Op::Reshape(a), value, "reshape")
    }

    /// Contiguous range `[start, start + len)` of a 1-D tensor.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a);
        if shape.len() != 1 || start + len > shape[0] {
            return Err(Error::shape("slice", shape, &[start, len]));
        }
        let value = Tensor::vector(self.value(a).data()[start..start + len].to_vec());
        self.push(Op::Slice(a, start), value, "slice")
    }

    /// Joins two matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::shape("concat_cols", sa, sb));
        }
        let (rows, ca, cb) = (sa[0], sa[1], sb[1]);
        let (va, vb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for i in 0..rows {
            data.extend_from_slice(va.row(i));
            data.extend_from_slice(vb.row(i));
        }
        let value = Tensor::matrix(rows, ca + cb, data)?;
        self.push(Op::ConcatCols(a, b), value, "concat_cols")
    }

    /// Row-wise softmax restricted to `mask`; masked-out slots are zero.
    ///
    /// A 1-D input is treated as a single row. Rows whose mask is all
    /// false produce a zero row.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: Rc<Vec<bool>>) -> Result<Var> {
        let x = self.value(a);
        if mask.len() != x.numel() {
            return Err(Error::shape("masked_softmax", x.shape(), &[mask.len()]));
        }
        let cols = *x.shape().last().unwrap_or(&0);
        let mut out = Tensor::zeros(x.shape());
        if cols > 0 {
            for (r, (row, out_row)) in x
                .data()
                .chunks(cols)
                .zip(out.data_mut().chunks_mut(cols))
                .enumerate()
            {
                let m = &mask[r * cols..(r + 1) * cols];
                softmax_row(row, m, out_row);
            }
        }
        self.push(Op::MaskedSoftmax(a, mask), out, "masked_softmax")
    }

    /// `Σ_{i,j} max(0, −(p_i − p_j)(r_i − r_j))` for a prediction vector
    /// `p` and a fixed target vector `r`.
    pub fn pairwise_hinge(&mut self, pred: Var, truth: Rc<Vec<T>>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape().len() != 1 || p.numel() != truth.len() {
            return Err(Error::shape("pairwise_hinge", p.shape(), &[truth.len()]));
        }
        let p = p.data();
        let n = p.len();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let v = -(p[i] - p[j]) * (truth[i] - truth[j]);
                if v > T::zero() {
                    total = total + v;
                }
            }
        }
        self.push(
            Op::PairwiseHinge(pred, truth),
            Tensor::scalar(total),
            "pairwise_hinge",
        )
    }

    /// Dense `rows × cols` matrix whose entry `(r, c)` is the sum of `w`
    /// over the type set stored at `(r, c)` in `pattern` (zero elsewhere).
    pub fn multi_hot_mix(&mut self, w: Var, pattern: Rc<MultiHotPattern>) -> Result<Var> {
        let ws = self.shape(w);
        if ws.len() != 1 || ws[0] != pattern.n_types {
            return Err(Error::shape("multi_hot_mix", ws, &[pattern.n_types]));
        }
        let wv = self.value(w).data();
        let mut out = Tensor::zeros(&[pattern.rows, pattern.cols]);
        for (r, c, types) in &pattern.entries {
            let s = types.iter().map(|&k| wv[k]).sum();
            out.set2(*r, *c, s);
        }
        self.push(Op::MultiHotMix(w, pattern), out, "multi_hot_mix")
    }

    /// Reverse accumulation from a one-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, g.matmul(&bv.transpose()?)?);
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, av.transpose()?.matmul(g)?);
                }
            }
            Op::ConstMatMul(k, b) => {
                self.accumulate(grads, *b, k.transpose()?.matmul(g)?);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()?),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, g.zip_map(bv, |x, y| x * y));
                self.accumulate(grads, *b, g.zip_map(av, |x, y| x * y));
            }
            Op::ConstMul(a, k) => self.accumulate(grads, *a, g.zip_map(k, |x, y| x * y)),
            Op::AddRow(m, row) => {
                self.accumulate(grads, *m, g.clone());
                let cols = g.cols();
                let mut gr = vec![T::zero(); cols];
                for (idx, &x) in g.data().iter().enumerate() {
                    gr[idx % cols] = gr[idx % cols] + x;
                }
                self.accumulate(grads, *row, Tensor::vector(gr));
            }
            Op::AddScalar(a, s) => {
                self.accumulate(grads, *a, g.clone());
                let shape = self.shape(*s).to_vec();
                self.accumulate(grads, *s, Tensor::new(shape, vec![g.sum()])?);
            }
            Op::OuterSum(s, t) => {
                let (m, n) = (g.rows(), g.cols());
                let mut gs = vec![T::zero(); m];
                let mut gt = vec![T::zero(); n];
                for (i, gs_i) in gs.iter_mut().enumerate() {
                    for (j, gt_j) in gt.iter_mut().enumerate() {
                        let x = g.get2(i, j);
                        *gs_i = *gs_i + x;
                        *gt_j = *gt_j + x;
                    }
                }
                self.accumulate(grads, *s, Tensor::vector(gs));
                self.accumulate(grads, *t, Tensor::vector(gt));
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::Activate(a, kind) => {
                let local = match kind {
                    Activation::Sigmoid => y.map(|s| s * (T::one() - s)),
                    Activation::Tanh => y.map(|t| T::one() - t * t),
                    Activation::LeakyRelu(slope) => {
                        let slope = T::lit(*slope);
                        self.value(*a)
                            .map(|x| if x > T::zero() { T::one() } else { slope })
                    }
                };
                self.accumulate(grads, *a, g.zip_map(&local, |x, d| x * d));
            }
            Op::Sum(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, g.data()[0]));
            }
            Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, g.reshape(&shape)?);
            }
            Op::Slice(a, start) => {
                let mut ga = Tensor::zeros(self.shape(*a));
                ga.data_mut()[*start..*start + g.numel()].copy_from_slice(g.data());
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let rows = g.rows();
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for i in 0..rows {
                    let r = g.row(i);
                    ga.extend_from_slice(&r[..ca]);
                    gb.extend_from_slice(&r[ca..]);
                }
                self.accumulate(grads, *a, Tensor::matrix(rows, ca, ga)?);
                self.accumulate(grads, *b, Tensor::matrix(rows, cb, gb)?);
            }
            Op::MaskedSoftmax(a, mask) => {
                let cols = *y.shape().last().unwrap_or(&0);
                let mut ga = Tensor::zeros(y.shape());
                if cols > 0 {
                    for (r, ((yr, gr), out)) in y
                        .data()
                        .chunks(cols)
                        .zip(g.data().chunks(cols))
                        .zip(ga.data_mut().chunks_mut(cols))
                        .enumerate()
                    {
                        let m = &mask[r * cols..(r + 1) * cols];
                        let dot: T = (0..cols).filter(|&j| m[j]).map(|j| yr[j] * gr[j]).sum();
                        for j in 0..cols {
                            if m[j] {
                                out[j] = yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::PairwiseHinge(pred, truth) => {
                let p = self.value(*pred).data();
                let n = p.len();
                let scale = g.data()[0];
                let mut gp = vec![T::zero(); n];
                for i in 0..n {
                    for j in 0..n {
                        let dr = truth[i] - truth[j];
                        if -(p[i] - p[j]) * dr > T::zero() {
                            gp[i] = gp[i] - dr * scale;
                            gp[j] = gp[j] + dr * scale;
                        }
                    }
                }
                self.accumulate(grads, *pred, Tensor::vector(gp));
            }
            Op::MultiHotMix(w, pattern) => {
                let mut gw = vec![T::zero(); pattern.n_types];
                for (r, c, types) in &pattern.entries {
                    let x = g.get2(*r, *c);
                    for &k in types {
                        gw[k] = gw[k] + x;
                    }
                }
                self.accumulate(grads, *w, Tensor::vector(gw));
            }
        }
        Ok(())
    }
}

fn inputs<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::AddRow(a, b)
        | Op::AddScalar(a, b)
        | Op::OuterSum(a, b)
        | Op::ConcatCols(a, b) => vec![*a, *b],
        Op::ConstMatMul(_, a)
        | Op::Transpose(a)
        | Op::ConstMul(a, _)
        | Op::Scale(a, _)
        | Op::Activate(a, _)
        | Op::Sum(a)
        | Op::Reshape(a)
        | Op::Slice(a, _)
        | Op::MaskedSoftmax(a, _)
        | Op::PairwiseHinge(a, _)
        | Op::MultiHotMix(a, _) => vec![*a],
    }
}

fn softmax_row<T: Scalar>(x: &[T], mask: &[bool], out: &mut [T]) {
    let Some(max) = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .reduce(T::max)
    else {
        return;
    };
    let mut total = T::zero();
    for ((o, &v), &m) in out.iter_mut().zip(x).zip(mask) {
        if m {
            *o = (v - max).exp();
            total = total + *o;
        }
    }
    for (o, &m) in out.iter_mut().zip(mask) {
        if m {
            *o = *o / total;
        }
    }
}

/// Softmax of `x` over the slots where `mask` is true; zero elsewhere.
pub fn masked_softmax<T: Scalar>(x: &[T], mask: &[bool]) -> Result<Vec<T>> {
    if x.len() != mask.len() {
        return Err(Error::shape("masked_softmax", &[x.len()], &[mask.len()]));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument(
            "masked_softmax needs at least one unmasked entry".into(),
        ));
    }
    let mut out = vec![T::zero(); x.len()];
    softmax_row(x, mask, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "masked_softmax",
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_matrix_has_unit_gradient() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap()).unwrap();
        let loss = tape.sum(w).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).data(), &[1.0; 4]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let unused = tape.param(Tensor::vector(vec![3.0, 4.0, 5.0])).unwrap();
        let loss = tape.sum(w).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused).data(), &[0.0; 3]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(w), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn activations_at_reference_points() {
        assert_eq!(Activation::Sigmoid.apply(0.0f64), 0.5);
        assert_eq!(Activation::LEAKY.apply(-1.0f64), -0.2);
        assert_eq!(Activation::LEAKY.apply(2.5f64), 2.5);
        assert_eq!(Activation::Tanh.apply(0.0f64), 0.0);
    }

    #[test]
    fn non_finite_values_name_the_op() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::vector(vec![f64::MAX])).unwrap();
        let err = tape.scale(a, 10.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "scale" }));
        assert!(tape.constant(Tensor::vector(vec![f64::NAN])).is_err());
    }

    #[test]
    fn masked_softmax_examples() {
        assert_eq!(masked_softmax(&[0.0f64, 0.0], &[true, true]).unwrap(), vec![0.5, 0.5]);

        let out = masked_softmax(&[1.0f64, 2.0, 3.0], &[true, false, true]).unwrap();
        let (e1, e3) = (1.0f64.exp(), 3.0f64.exp());
        assert!((out[0] - e1 / (e1 + e3)).abs() < 1e-15);
        assert_eq!(out[1], 0.0);
        assert!((out[2] - e3 / (e1 + e3)).abs() < 1e-15);

        assert!(masked_softmax(&[1.0f64, 2.0], &[false, false]).is_err());
    }

    #[test]
    fn masked_softmax_shift_invariant() {
        let x = [0.3f64, -1.2, 2.0, 0.7];
        let mask = [true, true, false, true];
        let shifted: Vec<f64> = x.iter().map(|v| v + 17.5).collect();
        let a = masked_softmax(&x, &mask).unwrap();
        let b = masked_softmax(&shifted, &mask).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let out = masked_softmax(&[1000.0f64, 999.0], &[true, true]).unwrap();
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shared_input_accumulates() {
        // loss = sum(w ⊙ w) → 2w
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::vector(vec![1.5, -2.0])).unwrap();
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).data(), &[3.0, -4.0]);
    }
}
