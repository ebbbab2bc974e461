//! Define-by-run reverse-mode differentiation.
//!
//! Every operation on a [`Tape`] evaluates eagerly, appends a node holding its
//! value and the indices of its inputs, and hands back a [`Var`]. Because
//! nodes are only ever appended, the node list is already in topological
//! order and [`Tape::backward`] is a single reverse sweep.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::{axpy, dot, log_softmax, softmax, Tensor};

/// Handle to a node recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, T),
    ScaleBy(Var, Var),
    AddRow(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    Row(Var, usize),
    StackRows(Vec<Var>),
    Softmax(Var),
    LogSoftmax(Var),
    Pick(Var, usize),
    Maxout2(Var, Vec<bool>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// A single-threaded recording of one forward computation.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<Vec<Var>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every node on its tape.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Var>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the differentiated scalar with respect to `v`; zeros when
    /// `v` did not influence it.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    pub(crate) fn raw(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Parameter leaves in the order they were registered.
    pub fn param_vars(&self) -> &[Var] {
        &self.params
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(256)),
            params: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    /// Value of a recorded node (cheap: storage is shared).
    pub fn value(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.item()
    }

    /// Constant input; receives no gradient outside the tape.
    pub fn constant(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Differentiable leaf tagged with a caller-chosen slot number.
    pub fn param(&self, slot: usize, t: Tensor<T>) -> Var {
        let v = self.push(t, Op::Param(slot));
        self.params.borrow_mut().push(v);
        v
    }

    pub fn param_slot(&self, v: Var) -> Option<usize> {
        match self.nodes.borrow()[v.0].op {
            Op::Param(s) => Some(s),
            _ => None,
        }
    }

    fn with2<R>(&self, a: Var, b: Var, f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[a.0].value, &nodes[b.0].value)
    }

    fn with1<R>(&self, a: Var, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[a.0].value)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.with2(a, b, |x, y| x.matmul(y))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn matvec(&self, m: Var, x: Var) -> Result<Var> {
        let v = self.with2(m, x, |a, b| a.matvec(b))?;
        Ok(self.push(v, Op::MatVec(m, x)))
    }

    pub fn vecmat(&self, x: Var, m: Var) -> Result<Var> {
        let v = self.with2(x, m, |a, b| a.vecmat(b))?;
        Ok(self.push(v, Op::VecMat(x, m)))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.with2(a, b, |x, y| x.add(y))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.with2(a, b, |x, y| x.sub(y))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.with2(a, b, |x, y| x.mul(y))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// `k·a + c` with constant `k`, `c`.
    pub fn affine(&self, a: Var, k: T, c: T) -> Var {
        let v = self.with1(a, |x| x.map(|e| k * e + c));
        self.push(v, Op::Affine(a, k))
    }

    pub fn scale(&self, a: Var, k: T) -> Var {
        self.affine(a, k, T::zero())
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&self, a: Var) -> Var {
        self.affine(a, -T::one(), T::one())
    }

    /// Tensor times a scalar node of shape `[1]`.
    pub fn scale_by(&self, a: Var, s: Var) -> Result<Var> {
        let v = self.with2(a, s, |x, k| {
            if k.len() != 1 {
                return Err(Error::dim("scale_by", x.shape(), k.shape()));
            }
            Ok(x.scale(k.item()))
        })?;
        Ok(self.push(v, Op::ScaleBy(a, s)))
    }

    /// Adds vector `r` to every row of matrix `m`.
    pub fn add_row(&self, m: Var, r: Var) -> Result<Var> {
        let v = self.with2(m, r, |x, y| {
            if x.rank() != 2 || !y.is_vector() || x.cols() != y.len() {
                return Err(Error::dim("add_row", x.shape(), y.shape()));
            }
            let c = x.cols();
            let mut out = x.data().to_vec();
            for row in out.chunks_exact_mut(c) {
                for (o, &b) in row.iter_mut().zip(y.data()) {
                    *o += b;
                }
            }
            Ok(Tensor::from_parts(x.shape().to_vec(), out))
        })?;
        Ok(self.push(v, Op::AddRow(m, r)))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let v = self.with1(a, |x| x.map(|e| e.tanh()));
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let v = self.with1(a, |x| x.map(sigmoid));
        self.push(v, Op::Sigmoid(a))
    }

    /// Concatenation of vectors (axis 0) or matrices (axis 0 stacks rows,
    /// axis 1 joins columns).
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Domain("concat of nothing".into()));
        }
        let v = {
            let nodes = self.nodes.borrow();
            let first = nodes[parts[0].0].value.shape().to_vec();
            let rank = first.len();
            if axis >= rank || rank > 2 {
                return Err(Error::dim("concat", &first, &[axis]));
            }
            for p in &parts[1..] {
                let s = nodes[p.0].value.shape();
                let ok = s.len() == rank && (rank == 1 || s[1 - axis] == first[1 - axis]);
                if !ok {
                    return Err(Error::dim("concat", &first, s));
                }
            }
            if rank == 1 || axis == 0 {
                let mut data = Vec::new();
                let mut lead = 0;
                for p in parts {
                    let t = &nodes[p.0].value;
                    data.extend_from_slice(t.data());
                    lead += t.shape()[0];
                }
                let mut shape = first.clone();
                shape[0] = lead;
                Tensor::from_parts(shape, data)
            } else {
                let rows = first[0];
                let cols: usize = parts.iter().map(|p| nodes[p.0].value.cols()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for p in parts {
                        data.extend_from_slice(nodes[p.0].value.row(r));
                    }
                }
                Tensor::from_parts(vec![rows, cols], data)
            }
        };
        Ok(self.push(v, Op::Concat(parts.to_vec(), axis)))
    }

    /// `len` leading-axis entries starting at `start`.
    pub fn slice(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.with1(a, |x| {
            let lead = x.shape()[0];
            if len == 0 || start + len > lead {
                return Err(Error::dim("slice", x.shape(), &[start, len]));
            }
            let inner: usize = x.shape()[1..].iter().product();
            let mut shape = x.shape().to_vec();
            shape[0] = len;
            Ok(Tensor::from_parts(
                shape,
                x.data()[start * inner..(start + len) * inner].to_vec(),
            ))
        })?;
        Ok(self.push(v, Op::Slice(a, start)))
    }

    pub fn sum(&self, a: Var) -> Var {
        let v = self.with1(a, |x| Tensor::scalar(x.sum()));
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let v = self.with1(a, |x| Tensor::scalar(x.sum() / T::of(x.len() as f64)));
        self.push(v, Op::Mean(a))
    }

    pub fn dot(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.with2(a, b, |x, y| {
            if x.shape() != y.shape() {
                return Err(Error::dim("dot", x.shape(), y.shape()));
            }
            Ok(Tensor::scalar(dot(x.data(), y.data())))
        })?;
        Ok(self.push(v, Op::Dot(a, b)))
    }

    /// Row `i` of a matrix as a vector (embedding lookup).
    pub fn row(&self, m: Var, i: usize) -> Result<Var> {
        let v = self.with1(m, |x| {
            if x.rank() != 2 {
                return Err(Error::dim("row", x.shape(), &[i]));
            }
            if i >= x.rows() {
                return Err(Error::Vocab {
                    id: i,
                    size: x.rows(),
                });
            }
            Ok(Tensor::vector(x.row(i).to_vec()))
        })?;
        Ok(self.push(v, Op::Row(m, i)))
    }

    /// Stacks equally sized vectors as the rows of a matrix.
    pub fn stack_rows(&self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Domain("stack of no rows".into()));
        }
        let v = {
            let nodes = self.nodes.borrow();
            let w = nodes[rows[0].0].value.len();
            let mut data = Vec::with_capacity(w * rows.len());
            for r in rows {
                let t = &nodes[r.0].value;
                if !t.is_vector() || t.len() != w {
                    return Err(Error::dim("stack_rows", &[w], t.shape()));
                }
                data.extend_from_slice(t.data());
            }
            Tensor::from_parts(vec![rows.len(), w], data)
        };
        Ok(self.push(v, Op::StackRows(rows.to_vec())))
    }

    pub fn softmax(&self, a: Var) -> Result<Var> {
        let v = self.with1(a, |x| {
            if !x.is_vector() {
                return Err(Error::dim("softmax", x.shape(), &[]));
            }
            softmax(x.data()).map(Tensor::vector)
        })?;
        Ok(self.push(v, Op::Softmax(a)))
    }

    pub fn log_softmax(&self, a: Var) -> Result<Var> {
        let v = self.with1(a, |x| {
            if !x.is_vector() {
                return Err(Error::dim("log_softmax", x.shape(), &[]));
            }
            log_softmax(x.data()).map(Tensor::vector)
        })?;
        Ok(self.push(v, Op::LogSoftmax(a)))
    }

    /// Element `i` of a vector as a scalar node.
    pub fn pick(&self, a: Var, i: usize) -> Result<Var> {
        let v = self.with1(a, |x| {
            if i >= x.len() {
                return Err(Error::Vocab {
                    id: i,
                    size: x.len(),
                });
            }
            Ok(Tensor::scalar(x.data()[i]))
        })?;
        Ok(self.push(v, Op::Pick(a, i)))
    }

    /// `-log softmax(logits)[target]`, the fused cross-entropy.
    pub fn cross_entropy(&self, logits: Var, target: usize) -> Result<Var> {
        let lp = self.log_softmax(logits)?;
        let p = self.pick(lp, target)?;
        Ok(self.scale(p, -T::one()))
    }

    /// Two-way maxout: output `i` is `max(a[2i], a[2i+1])`. On a tie the
    /// gradient flows to the first element of the pair.
    pub fn maxout2(&self, a: Var) -> Result<Var> {
        let (v, second) = self.with1(a, |x| {
            if !x.is_vector() || x.len() % 2 != 0 {
                return Err(Error::dim("maxout2", x.shape(), &[2]));
            }
            let mut out = Vec::with_capacity(x.len() / 2);
            let mut second = Vec::with_capacity(x.len() / 2);
            for pair in x.data().chunks_exact(2) {
                let pick_second = pair[1] > pair[0];
                second.push(pick_second);
                out.push(if pick_second { pair[1] } else { pair[0] });
            }
            Ok((Tensor::vector(out), second))
        })?;
        Ok(self.push(v, Op::Maxout2(a, second)))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes.is_empty() || loss.0 >= nodes.len() {
            return Err(Error::State(
                "backward called without a recorded forward pass".into(),
            ));
        }
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss.0] = Some(vec![T::one()]);

        fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
            grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
        }

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let (m, k, nn) = (ta.rows(), ta.cols(), tb.cols());
                    {
                        let ga = acc(&mut grads, *a, m * k);
                        for r in 0..m {
                            let grow = &g[r * nn..(r + 1) * nn];
                            for p in 0..k {
                                ga[r * k + p] += dot(grow, tb.row(p));
                            }
                        }
                    }
                    let gb = acc(&mut grads, *b, k * nn);
                    for r in 0..m {
                        let grow = &g[r * nn..(r + 1) * nn];
                        for (p, &av) in ta.row(r).iter().enumerate() {
                            axpy(av, grow, &mut gb[p * nn..(p + 1) * nn]);
                        }
                    }
                }
                Op::MatVec(m, x) => {
                    let (tm, tx) = (val(*m), val(*x));
                    let k = tm.cols();
                    {
                        let gm = acc(&mut grads, *m, tm.len());
                        for (r, &gr) in g.iter().enumerate() {
                            axpy(gr, tx.data(), &mut gm[r * k..(r + 1) * k]);
                        }
                    }
                    let gx = acc(&mut grads, *x, k);
                    for (r, &gr) in g.iter().enumerate() {
                        axpy(gr, tm.row(r), gx);
                    }
                }
                Op::VecMat(x, m) => {
                    let (tx, tm) = (val(*x), val(*m));
                    let nn = tm.cols();
                    {
                        let gx = acc(&mut grads, *x, tx.len());
                        for (r, o) in gx.iter_mut().enumerate() {
                            *o += dot(tm.row(r), &g);
                        }
                    }
                    let gm = acc(&mut grads, *m, tm.len());
                    for (r, &xv) in tx.data().iter().enumerate() {
                        axpy(xv, &g, &mut gm[r * nn..(r + 1) * nn]);
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    add_into(acc(&mut grads, *b, g.len()), &g);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    axpy(-T::one(), &g, acc(&mut grads, *b, g.len()));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    {
                        let ga = acc(&mut grads, *a, g.len());
                        for ((o, &gv), &bv) in ga.iter_mut().zip(&g).zip(tb.data()) {
                            *o += gv * bv;
                        }
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for ((o, &gv), &av) in gb.iter_mut().zip(&g).zip(ta.data()) {
                        *o += gv * av;
                    }
                }
                Op::Affine(a, k) => axpy(*k, &g, acc(&mut grads, *a, g.len())),
                Op::ScaleBy(a, s) => {
                    let (ta, ts) = (val(*a), val(*s));
                    axpy(ts.item(), &g, acc(&mut grads, *a, g.len()));
                    acc(&mut grads, *s, 1)[0] += dot(&g, ta.data());
                }
                Op::AddRow(m, r) => {
                    add_into(acc(&mut grads, *m, g.len()), &g);
                    let c = val(*r).len();
                    let gr = acc(&mut grads, *r, c);
                    for row in g.chunks_exact(c) {
                        add_into(gr, row);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((o, &gv), &yv) in ga.iter_mut().zip(&g).zip(y) {
                        *o += gv * (T::one() - yv * yv);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((o, &gv), &yv) in ga.iter_mut().zip(&g).zip(y) {
                        *o += gv * yv * (T::one() - yv);
                    }
                }
                Op::Concat(parts, axis) => {
                    if node.value.rank() == 1 || *axis == 0 {
                        let mut off = 0;
                        for p in parts {
                            let len = val(*p).len();
                            add_into(acc(&mut grads, *p, len), &g[off..off + len]);
                            off += len;
                        }
                    } else {
                        let total = node.value.cols();
                        let mut col = 0;
                        for p in parts {
                            let tp = val(*p);
                            let (rows, c) = (tp.rows(), tp.cols());
                            let gp = acc(&mut grads, *p, rows * c);
                            for r in 0..rows {
                                add_into(
                                    &mut gp[r * c..(r + 1) * c],
                                    &g[r * total + col..r * total + col + c],
                                );
                            }
                            col += c;
                        }
                    }
                }
                Op::Slice(a, start) => {
                    let ta = val(*a);
                    let inner: usize = ta.shape()[1..].iter().product();
                    let ga = acc(&mut grads, *a, ta.len());
                    add_into(&mut ga[start * inner..start * inner + g.len()], &g);
                }
                Op::Sum(a) => {
                    let len = val(*a).len();
                    for o in acc(&mut grads, *a, len).iter_mut() {
                        *o += g[0];
                    }
                }
                Op::Mean(a) => {
                    let len = val(*a).len();
                    let share = g[0] / T::of(len as f64);
                    for o in acc(&mut grads, *a, len).iter_mut() {
                        *o += share;
                    }
                }
                Op::Dot(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    axpy(g[0], tb.data(), acc(&mut grads, *a, ta.len()));
                    axpy(g[0], ta.data(), acc(&mut grads, *b, tb.len()));
                }
                Op::Row(m, r) => {
                    let tm = val(*m);
                    let c = tm.cols();
                    let gm = acc(&mut grads, *m, tm.len());
                    add_into(&mut gm[r * c..(r + 1) * c], &g);
                }
                Op::StackRows(rows) => {
                    let w = node.value.cols();
                    for (k, r) in rows.iter().enumerate() {
                        add_into(acc(&mut grads, *r, w), &g[k * w..(k + 1) * w]);
                    }
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let s = dot(&g, y);
                    let ga = acc(&mut grads, *a, g.len());
                    for ((o, &gv), &yv) in ga.iter_mut().zip(&g).zip(y) {
                        *o += yv * (gv - s);
                    }
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.data();
                    let s: T = g.iter().fold(T::zero(), |x, &v| x + v);
                    let ga = acc(&mut grads, *a, g.len());
                    for ((o, &gv), &yv) in ga.iter_mut().zip(&g).zip(y) {
                        *o += gv - yv.exp() * s;
                    }
                }
                Op::Pick(a, idx) => {
                    let len = val(*a).len();
                    acc(&mut grads, *a, len)[*idx] += g[0];
                }
                Op::Maxout2(a, second) => {
                    let len = val(*a).len();
                    let ga = acc(&mut grads, *a, len);
                    for (k, (&gv, &s)) in g.iter().zip(second).enumerate() {
                        ga[2 * k + usize::from(s)] += gv;
                    }
                }
            }
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                grads[i] = Some(g);
            }
        }

        Ok(Gradients {
            grads,
            shapes: nodes[..n]
                .iter()
                .map(|nd| nd.value.shape().to_vec())
                .collect(),
            params: self
                .params
                .borrow()
                .iter()
                .copied()
                .filter(|p| p.0 < n)
                .collect(),
        })
    }
}

#[inline]
fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
