//! Tape-based reverse-mode differentiation over batched matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Each node holds
//! its computed value; [`Graph::backward`] walks the tape in reverse and
//! writes parameter gradients into the [`ParamStore`] the parameters came
//! from. Rows of every node index the minibatch.

use std::collections::HashMap;

use super::{axpy, dot, sigmoid, ParamId, ParamStore, Real, RngState, Tensor};
use crate::error::{contract, invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Tensor<F>),
    MulCol(NodeId, NodeId),
    Scale(NodeId, F),
    OneMinus(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize, usize),
    SoftmaxRows(NodeId),
    SumAll(NodeId),
    Huber {
        pred: NodeId,
        target: Tensor<F>,
        row_weights: Vec<F>,
        delta: F,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        row_weights: Vec<F>,
    },
    GatherRows(NodeId, Vec<usize>),
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMulNt(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulConst(..) => "mul_const",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::OneMinus(_) => "one_minus",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Concat(_) => "concat",
            Op::Slice(..) => "slice",
            Op::SoftmaxRows(_) => "softmax",
            Op::SumAll(_) => "sum",
            Op::Huber { .. } => "huber",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::GatherRows(..) => "gather_rows",
        }
    }
}

#[derive(Debug)]
struct Node<F> {
    op: Op<F>,
    value: Tensor<F>,
    needs_grad: bool,
}

/// Forward tape for one loss evaluation.
#[derive(Debug)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    params: HashMap<ParamId, NodeId>,
    nonfinite: Option<(usize, &'static str)>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            nonfinite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> F {
        self.value(id).data()[0]
    }

    /// First node whose value contained NaN or infinity, if any.
    pub fn nonfinite(&self) -> Option<Error> {
        self.nonfinite
            .map(|(node, op)| Error::NonFinite { node, op })
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>, needs_grad: bool) -> NodeId {
        let id = self.nodes.len();
        if self.nonfinite.is_none() && !value.is_finite() {
            self.nonfinite = Some((id, op.name()));
        }
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(id)
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Node holding the current value of a parameter. Repeated calls for the
    /// same parameter return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> NodeId {
        if let Some(&node) = self.params.get(&id) {
            return node;
        }
        let node = self.push(Op::Param(id), store.value(id).clone(), true);
        self.params.insert(id, node);
        node
    }

    /// `a (m x k) * w^T` for `w` of shape `n x k`.
    pub fn matmul_nt(&mut self, a: NodeId, w: NodeId) -> NodeId {
        let value = self.value(a).matmul_nt(self.value(w));
        let ng = self.ng(a) || self.ng(w);
        self.push(Op::MatMulNt(a, w), value, ng)
    }

    /// `x W^T + b` with `b` a `1 x n` row broadcast over the batch.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let y = self.matmul_nt(x, w);
        match b {
            Some(b) => self.add_row(y, b),
            None => y,
        }
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise operands differ in shape");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Add(a, b), v, ng)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Sub(a, b), v, ng)
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Mul(a, b), v, ng)
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let b = self.value(bias);
        assert_eq!(b.len(), v.cols(), "bias width differs from input width");
        for r in 0..v.rows() {
            for (x, &bb) in v.row_slice_mut(r).iter_mut().zip(b.data()) {
                *x += bb;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(Op::AddRow(a, bias), v, ng)
    }

    /// Elementwise product with a constant tensor (masks, dropout).
    pub fn mul_const(&mut self, a: NodeId, c: Tensor<F>) -> NodeId {
        let va = self.value(a);
        assert_eq!(va.shape(), c.shape(), "mask shape differs");
        let data = va.data().iter().zip(c.data()).map(|(&x, &m)| x * m).collect();
        let v = Tensor::new(va.shape().to_vec(), data).expect("shape preserved");
        let ng = self.ng(a);
        self.push(Op::MulConst(a, c), v, ng)
    }

    /// Scales row `i` of `a` by the single entry in row `i` of `col`.
    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let c = self.value(col);
        assert_eq!(c.cols(), 1, "mul_col expects a single column");
        assert_eq!(c.rows(), v.rows(), "mul_col row count differs");
        for r in 0..v.rows() {
            let s = c.data()[r];
            v.row_slice_mut(r).iter_mut().for_each(|x| *x *= s);
        }
        let ng = self.ng(a) || self.ng(col);
        self.push(Op::MulCol(a, col), v, ng)
    }

    pub fn scale(&mut self, a: NodeId, s: F) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(Op::Scale(a, s), v, ng)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| F::one() - x);
        let ng = self.ng(a);
        self.push(Op::OneMinus(a), v, ng)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.tanh());
        let ng = self.ng(a);
        self.push(Op::Tanh(a), v, ng)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(Op::Sigmoid(a), v, ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(F::zero()));
        let ng = self.ng(a);
        self.push(Op::Relu(a), v, ng)
    }

    /// Concatenates along columns.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        if parts.len() == 1 {
            return parts[0];
        }
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                assert_eq!(v.rows(), rows, "concat row count differs");
                data.extend_from_slice(v.row_slice(r));
            }
        }
        let v = Tensor::new(vec![rows, cols], data).expect("consistent");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Op::Concat(parts.to_vec()), v, ng)
    }

    /// Columns `start..end`.
    pub fn slice(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let va = self.value(a);
        assert!(start < end && end <= va.cols(), "slice out of range");
        if start == 0 && end == va.cols() {
            return a;
        }
        let v = va.col_range(start, end);
        let ng = self.ng(a);
        self.push(Op::Slice(a, start, end), v, ng)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_slice_mut(r));
        }
        let ng = self.ng(a);
        self.push(Op::SoftmaxRows(a), v, ng)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(Op::SumAll(a), v, ng)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = F::lit(self.value(a).len() as f64);
        let s = self.sum_all(a);
        self.scale(s, F::one() / n)
    }

    /// `sum_r w_r * sum_c huber(pred[r,c] - target[r,c])`, a `1 x 1` node.
    pub fn huber(
        &mut self,
        pred: NodeId,
        target: Tensor<F>,
        row_weights: Vec<F>,
        delta: F,
    ) -> NodeId {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "huber target shape differs");
        assert_eq!(row_weights.len(), p.rows(), "one weight per row");
        let mut total = F::zero();
        for r in 0..p.rows() {
            if row_weights[r] == F::zero() {
                continue;
            }
            let s: F = p
                .row_slice(r)
                .iter()
                .zip(target.row_slice(r))
                .map(|(&a, &b)| huber_value(a - b, delta))
                .sum();
            total += row_weights[r] * s;
        }
        let ng = self.ng(pred);
        self.push(
            Op::Huber {
                pred,
                target,
                row_weights,
                delta,
            },
            Tensor::scalar(total),
            ng,
        )
    }

    /// `sum_r w_r * -log softmax(logits[r])[targets[r]]`, a `1 x 1` node.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: Vec<usize>,
        row_weights: Vec<F>,
    ) -> NodeId {
        let l = self.value(logits);
        assert_eq!(targets.len(), l.rows(), "one target per row");
        assert_eq!(row_weights.len(), l.rows(), "one weight per row");
        let mut total = F::zero();
        for r in 0..l.rows() {
            if row_weights[r] == F::zero() {
                continue;
            }
            let row = l.row_slice(r);
            assert!(targets[r] < row.len(), "target index out of range");
            total += row_weights[r] * (log_sum_exp(row) - row[targets[r]]);
        }
        let ng = self.ng(logits);
        self.push(
            Op::CrossEntropy {
                logits,
                targets,
                row_weights,
            },
            Tensor::scalar(total),
            ng,
        )
    }

    /// Rows of `table` selected by `indices` (embedding lookup).
    pub fn gather_rows(&mut self, table: NodeId, indices: Vec<usize>) -> NodeId {
        let t = self.value(table);
        let cols = t.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in &indices {
            data.extend_from_slice(t.row_slice(i));
        }
        let v = Tensor::new(vec![indices.len(), cols], data).expect("consistent");
        let ng = self.ng(table);
        self.push(Op::GatherRows(table, indices), v, ng)
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`.
    pub fn dropout(
        &mut self,
        x: NodeId,
        p: f64,
        training: bool,
        rng: &mut RngState,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return invalid(format!("dropout probability {p} outside [0, 1)"));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(self.value(x).shape(), p, rng);
        Ok(self.mul_const(x, mask))
    }

    /// Reverse pass from a scalar loss. Overwrites every gradient slot in
    /// `store`; parameters the loss does not depend on end up with zeros.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore<F>) -> Result<()> {
        if let Some(e) = self.nonfinite() {
            return Err(e);
        }
        if self.value(loss).len() != 1 {
            return contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        store.zero_grads();
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(F::one()));

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if !gy.is_finite() {
                return Err(Error::NonFinite {
                    node: idx,
                    op: node.op.name(),
                });
            }
            self.propagate(node, &gy, &mut grads);
            if let Op::Param(pid) = node.op {
                let dst = store.grad_mut(pid);
                for (d, &g) in dst.data_mut().iter_mut().zip(gy.data()) {
                    *d += g;
                }
            }
        }
        store.grads_ready = true;
        Ok(())
    }

    fn propagate(&self, node: &Node<F>, gy: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMulNt(a, w) => {
                let va = self.value(*a);
                let vw = self.value(*w);
                let n = vw.rows();
                if self.ng(*a) {
                    let ga = slot(grads, *a, va.shape());
                    for i in 0..va.rows() {
                        let gi = ga.row_slice_mut(i);
                        for j in 0..n {
                            let g = gy.data()[i * n + j];
                            if g != F::zero() {
                                axpy(g, vw.row_slice(j), gi);
                            }
                        }
                    }
                }
                if self.ng(*w) {
                    let gw = slot(grads, *w, vw.shape());
                    for i in 0..va.rows() {
                        let ai = va.row_slice(i);
                        for j in 0..n {
                            let g = gy.data()[i * n + j];
                            if g != F::zero() {
                                axpy(g, ai, gw.row_slice_mut(j));
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, gy, |g| g);
                self.acc(grads, *b, gy, |g| g);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, gy, |g| g);
                self.acc(grads, *b, gy, |g| -g);
            }
            Op::AddRow(a, bias) => {
                self.acc(grads, *a, gy, |g| g);
                if self.ng(*bias) {
                    let gb = slot(grads, *bias, self.value(*bias).shape());
                    for r in 0..gy.rows() {
                        for (d, &g) in gb.data_mut().iter_mut().zip(gy.row_slice(r)) {
                            *d += g;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let vb = self.value(*b);
                    let ga = slot(grads, *a, vb.shape());
                    for ((d, &g), &x) in ga.data_mut().iter_mut().zip(gy.data()).zip(vb.data()) {
                        *d += g * x;
                    }
                }
                if self.ng(*b) {
                    let va = self.value(*a);
                    let gb = slot(grads, *b, va.shape());
                    for ((d, &g), &x) in gb.data_mut().iter_mut().zip(gy.data()).zip(va.data()) {
                        *d += g * x;
                    }
                }
            }
            Op::MulConst(a, c) => {
                if self.ng(*a) {
                    let ga = slot(grads, *a, c.shape());
                    for ((d, &g), &m) in ga.data_mut().iter_mut().zip(gy.data()).zip(c.data()) {
                        *d += g * m;
                    }
                }
            }
            Op::MulCol(a, col) => {
                let va = self.value(*a);
                let vc = self.value(*col);
                if self.ng(*a) {
                    let ga = slot(grads, *a, va.shape());
                    for r in 0..va.rows() {
                        let s = vc.data()[r];
                        axpy(s, gy.row_slice(r), ga.row_slice_mut(r));
                    }
                }
                if self.ng(*col) {
                    let gc = slot(grads, *col, vc.shape());
                    for r in 0..va.rows() {
                        gc.data_mut()[r] += dot(gy.row_slice(r), va.row_slice(r));
                    }
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.acc(grads, *a, gy, |g| g * s);
            }
            Op::OneMinus(a) => self.acc(grads, *a, gy, |g| -g),
            Op::Tanh(a) => self.acc_with_y(grads, *a, gy, y, |g, t| g * (F::one() - t * t)),
            Op::Sigmoid(a) => self.acc_with_y(grads, *a, gy, y, |g, s| g * s * (F::one() - s)),
            Op::Relu(a) => self.acc_with_y(grads, *a, gy, y, |g, v| {
                if v > F::zero() {
                    g
                } else {
                    F::zero()
                }
            }),
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let vp = self.value(p);
                    let w = vp.cols();
                    if self.ng(p) {
                        let gp = slot(grads, p, vp.shape());
                        for r in 0..gy.rows() {
                            let src = &gy.row_slice(r)[offset..offset + w];
                            for (d, &g) in gp.row_slice_mut(r).iter_mut().zip(src) {
                                *d += g;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice(a, start, _end) => {
                if self.ng(*a) {
                    let va = self.value(*a);
                    let ga = slot(grads, *a, va.shape());
                    let w = gy.cols();
                    for r in 0..gy.rows() {
                        let dst = &mut ga.row_slice_mut(r)[*start..*start + w];
                        for (d, &g) in dst.iter_mut().zip(gy.row_slice(r)) {
                            *d += g;
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if self.ng(*a) {
                    let ga = slot(grads, *a, y.shape());
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = gy.row_slice(r);
                        let inner = dot(gr, yr);
                        for ((d, &g), &p) in ga.row_slice_mut(r).iter_mut().zip(gr).zip(yr) {
                            *d += p * (g - inner);
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                let g = gy.data()[0];
                if self.ng(*a) {
                    let ga = slot(grads, *a, self.value(*a).shape());
                    ga.data_mut().iter_mut().for_each(|d| *d += g);
                }
            }
            Op::Huber {
                pred,
                target,
                row_weights,
                delta,
            } => {
                if self.ng(*pred) {
                    let g = gy.data()[0];
                    let vp = self.value(*pred);
                    let gp = slot(grads, *pred, vp.shape());
                    for r in 0..vp.rows() {
                        let w = row_weights[r];
                        if w == F::zero() {
                            continue;
                        }
                        let dst = gp.row_slice_mut(r);
                        for ((d, &p), &t) in dst.iter_mut().zip(vp.row_slice(r)).zip(target.row_slice(r)) {
                            *d += g * w * huber_grad(p - t, *delta);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                row_weights,
            } => {
                if self.ng(*logits) {
                    let g = gy.data()[0];
                    let vl = self.value(*logits);
                    let gl = slot(grads, *logits, vl.shape());
                    let mut probs = vec![F::zero(); vl.cols()];
                    for r in 0..vl.rows() {
                        let w = row_weights[r];
                        if w == F::zero() {
                            continue;
                        }
                        probs.copy_from_slice(vl.row_slice(r));
                        softmax_in_place(&mut probs);
                        probs[targets[r]] -= F::one();
                        axpy(g * w, &probs, gl.row_slice_mut(r));
                    }
                }
            }
            Op::GatherRows(table, indices) => {
                if self.ng(*table) {
                    let gt = slot(grads, *table, self.value(*table).shape());
                    for (r, &i) in indices.iter().enumerate() {
                        let src = gy.row_slice(r);
                        for (d, &g) in gt.row_slice_mut(i).iter_mut().zip(src) {
                            *d += g;
                        }
                    }
                }
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor<F>>], a: NodeId, gy: &Tensor<F>, f: impl Fn(F) -> F) {
        if !self.ng(a) {
            return;
        }
        let ga = slot(grads, a, gy.shape());
        for (d, &g) in ga.data_mut().iter_mut().zip(gy.data()) {
            *d += f(g);
        }
    }

    fn acc_with_y(
        &self,
        grads: &mut [Option<Tensor<F>>],
        a: NodeId,
        gy: &Tensor<F>,
        y: &Tensor<F>,
        f: impl Fn(F, F) -> F,
    ) {
        if !self.ng(a) {
            return;
        }
        let ga = slot(grads, a, gy.shape());
        for ((d, &g), &v) in ga.data_mut().iter_mut().zip(gy.data()).zip(y.data()) {
            *d += f(g, v);
        }
    }
}

fn slot<'a, F: Real>(
    grads: &'a mut [Option<Tensor<F>>],
    id: NodeId,
    shape: &[usize],
) -> &'a mut Tensor<F> {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(shape))
}

pub(crate) fn softmax_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn log_sum_exp<F: Real>(row: &[F]) -> F {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let s: F = row.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// Huber penalty of a residual `d`.
pub fn huber_value<F: Real>(d: F, delta: F) -> F {
    let a = d.abs();
    let half = F::lit(0.5);
    if a <= delta {
        half * d * d
    } else {
        delta * a - half * delta * delta
    }
}

/// Derivative of [`huber_value`] with respect to the residual.
pub fn huber_grad<F: Real>(d: F, delta: F) -> F {
    d.max(-delta).min(delta)
}

pub(crate) fn dropout_mask<F: Real>(shape: &[usize], p: f64, rng: &mut RngState) -> Tensor<F> {
    let keep = F::lit(1.0 / (1.0 - p));
    let mut mask = Tensor::zeros(shape);
    for m in mask.data_mut() {
        if !rng.bernoulli(p) {
            *m = keep;
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor<f64>) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add(name, t).unwrap();
        (s, id)
    }

    #[test]
    fn quadratic_gradient() {
        let (mut store, w) = store_with("w", Tensor::row(&[1.0, 2.0]));
        let mut g = Graph::new();
        let wn = g.param(&store, w);
        let sq = g.mul(wn, wn);
        let loss = g.sum_all(sq);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(w).data(), &[2.0, 4.0]);
    }

    #[test]
    fn sigmoid_times_constant() {
        let (mut store, c) = store_with("c", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let zero = g.constant(Tensor::scalar(0.0));
        let s = g.sigmoid(zero);
        let cn = g.param(&store, c);
        let prod = g.mul(s, cn);
        let loss = g.sum_all(prod);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(c).data(), &[0.5]);
    }

    #[test]
    fn untouched_params_get_zero() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(2.0f64)).unwrap();
        let b = store.add("b", Tensor::scalar(5.0)).unwrap();
        store.grad_mut(b).data_mut()[0] = 9.0;
        let mut g = Graph::new();
        let an = g.param(&store, a);
        let loss = g.sum_all(an);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(a).data(), &[1.0]);
        assert_eq!(store.grad(b).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let (mut store, w) = store_with("w", Tensor::row(&[1.0, 2.0]));
        let mut g = Graph::new();
        let wn = g.param(&store, w);
        assert!(matches!(g.backward(wn, &mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn nan_is_reported_with_node() {
        let (mut store, w) = store_with("w", Tensor::row(&[-1.0]));
        let mut g = Graph::new();
        let wn = g.param(&store, w);
        let inf = g.constant(Tensor::row(&[f64::INFINITY]));
        let prod = g.mul(wn, inf);
        let loss = g.sum_all(prod);
        match g.backward(loss, &mut store) {
            Err(Error::NonFinite { node, op }) => {
                assert_eq!(node, 1);
                assert_eq!(op, "leaf");
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn huber_branches_meet_at_knee() {
        let inner = 0.5 * 0.5f64 * 0.5;
        let outer = 0.5 * 0.5f64 - 0.5 * 0.5 * 0.5;
        assert!((inner - outer).abs() < 1e-12);
        assert_eq!(huber_value(0.5f64, 0.5), 0.125);
        assert_eq!(huber_value(1.0f64, 0.5), 0.375);
        assert_eq!(huber_value(0.0f64, 0.5), 0.0);
    }
}
