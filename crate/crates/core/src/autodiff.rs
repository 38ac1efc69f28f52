//! Reverse-mode automatic differentiation over vectors and matrices.
//!
//! A [`Tape`] records every operation in creation order, which is already a
//! topological order, so the backward pass is a single reverse sweep.
//! Parameters are bound by reference: forward passes over large embedding or
//! output matrices never copy them.

use std::borrow::Cow;

use crate::scalar::{self, Scalar};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatVec { w: usize, x: usize },
    Affine { w: usize, x: usize, b: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    LogSigmoid(usize),
    Concat(Vec<usize>),
    Slice { a: usize, start: usize },
    Row { table: usize, row: usize },
    Lstm { gates: usize, cell: usize },
    CrossEntropy { logits: usize, target: usize },
    Dot(usize, usize),
    Sum(usize),
    AddN(Vec<usize>),
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, [T]>,
    rows: usize,
    cols: usize,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::with_capacity(1024),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, [T]>, rows: usize, cols: usize, op: Op<T>) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatVec { w, x } => self.ng(*w) || self.ng(*x),
            Op::Affine { w, x, b } => self.ng(*w) || self.ng(*x) || self.ng(*b),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Dot(a, b) => {
                self.ng(*a) || self.ng(*b)
            }
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::LogSigmoid(a)
            | Op::Sum(a)
            | Op::Slice { a, .. } => self.ng(*a),
            Op::Concat(xs) | Op::AddN(xs) => xs.iter().any(|&i| self.ng(i)),
            Op::Row { table, .. } => self.ng(*table),
            Op::Lstm { gates, cell } => self.ng(*gates) || self.ng(*cell),
            Op::CrossEntropy { logits, .. } => self.ng(*logits),
        };
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    fn ng(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Trainable leaf bound to `t` without copying.
    pub fn param(&mut self, t: &'a Tensor<T>) -> Var {
        let v = self.push(Cow::Borrowed(&t.data), t.rows, t.cols, Op::Leaf);
        self.nodes[v.0].needs_grad = true;
        v
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, values: Vec<T>) -> Var {
        let n = values.len();
        self.push(Cow::Owned(values), n, 1, Op::Leaf)
    }

    pub fn constant_ref(&mut self, values: &'a [T]) -> Var {
        self.push(Cow::Borrowed(values), values.len(), 1, Op::Leaf)
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.constant(vec![v])
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (rows, cols) = self.shape(w);
        assert_eq!(cols, self.nodes[x.0].value.len(), "matvec dimension mismatch");
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        let out: Vec<T> = (0..rows)
            .map(|r| scalar::dot(&wv[r * cols..(r + 1) * cols], xv))
            .collect();
        self.push(Cow::Owned(out), rows, 1, Op::MatVec { w: w.0, x: x.0 })
    }

    /// `w · x + b`
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Var {
        let (rows, cols) = self.shape(w);
        assert_eq!(cols, self.nodes[x.0].value.len(), "affine dimension mismatch");
        assert_eq!(rows, self.nodes[b.0].value.len(), "affine bias mismatch");
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        let bv = &self.nodes[b.0].value;
        let out: Vec<T> = (0..rows)
            .map(|r| scalar::dot(&wv[r * cols..(r + 1) * cols], xv) + bv[r])
            .collect();
        self.push(
            Cow::Owned(out),
            rows,
            1,
            Op::Affine {
                w: w.0,
                x: x.0,
                b: b.0,
            },
        )
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.len(), bv.len(), "elementwise length mismatch");
        let out: Vec<T> = av.iter().zip(bv.iter()).map(|(&x, &y)| f(x, y)).collect();
        let (r, c) = self.shape(a);
        self.push(Cow::Owned(out), r, c, op)
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out: Vec<T> = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        let (r, c) = self.shape(a);
        self.push(Cow::Owned(out), r, c, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.map(a, |x| x * s, Op::Scale(a.0, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, scalar::sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, |x| x.exp(), Op::Exp(a.0))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.map(a, scalar::log_sigmoid, Op::LogSigmoid(a.0))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.len()).sum();
        let mut out = Vec::with_capacity(total);
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(
            Cow::Owned(out),
            total,
            1,
            Op::Concat(parts.iter().map(|p| p.0).collect()),
        )
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.nodes[a.0].value[start..start + len].to_vec();
        self.push(Cow::Owned(out), len, 1, Op::Slice { a: a.0, start })
    }

    /// Row `row` of matrix `table` as a column vector (embedding lookup).
    pub fn row(&mut self, table: Var, row: usize) -> Var {
        let (rows, cols) = self.shape(table);
        assert!(row < rows, "row {row} out of range for {rows}-row table");
        let value = match &self.nodes[table.0].value {
            Cow::Borrowed(s) => Cow::Borrowed(&s[row * cols..(row + 1) * cols]),
            Cow::Owned(v) => Cow::Owned(v[row * cols..(row + 1) * cols].to_vec()),
        };
        self.push(value, cols, 1, Op::Row { table: table.0, row })
    }

    /// LSTM cell nonlinearity. `gates` holds the input, forget, candidate and
    /// output pre-activations stacked in that order; returns `[h; c]`.
    pub fn lstm(&mut self, gates: Var, cell: Var) -> Var {
        let z = &self.nodes[gates.0].value;
        let c_prev = &self.nodes[cell.0].value;
        let h = c_prev.len();
        assert_eq!(z.len(), 4 * h, "lstm gate size mismatch");
        let mut out = vec![T::zero(); 2 * h];
        for k in 0..h {
            let i = scalar::sigmoid(z[k]);
            let f = scalar::sigmoid(z[h + k]);
            let g = z[2 * h + k].tanh();
            let o = scalar::sigmoid(z[3 * h + k]);
            let c = f * c_prev[k] + i * g;
            out[h + k] = c;
            out[k] = o * c.tanh();
        }
        self.push(
            Cow::Owned(out),
            2 * h,
            1,
            Op::Lstm {
                gates: gates.0,
                cell: cell.0,
            },
        )
    }

    /// Negative log-likelihood of `target` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let l = &self.nodes[logits.0].value;
        assert!(target < l.len(), "target {target} outside logits");
        let nll = scalar::log_sum_exp(l) - l[target];
        self.push(
            Cow::Owned(vec![nll]),
            1,
            1,
            Op::CrossEntropy {
                logits: logits.0,
                target,
            },
        )
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let v = {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            assert_eq!(av.len(), bv.len(), "dot length mismatch");
            scalar::dot(av, bv)
        };
        self.push(Cow::Owned(vec![v]), 1, 1, Op::Dot(a.0, b.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.nodes[a.0].value.iter().copied().sum();
        self.push(Cow::Owned(vec![s]), 1, 1, Op::Sum(a.0))
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn add_n(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "add_n of nothing");
        let (r, c) = self.shape(xs[0]);
        let mut out = self.nodes[xs[0].0].value.to_vec();
        for x in &xs[1..] {
            for (o, v) in out.iter_mut().zip(self.nodes[x.0].value.iter()) {
                *o += *v;
            }
        }
        self.push(
            Cow::Owned(out),
            r,
            c,
            Op::AddN(xs.iter().map(|x| x.0).collect()),
        )
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatVec { w, x } => self.back_matvec(*w, *x, g, grads),
            Op::Affine { w, x, b } => {
                self.back_matvec(*w, *x, g, grads);
                if let Some(gb) = self.slot(*b, grads) {
                    scalar::axpy(T::one(), g, gb);
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(*a, grads) {
                    scalar::axpy(T::one(), g, ga);
                }
                if let Some(gb) = self.slot(*b, grads) {
                    scalar::axpy(T::one(), g, gb);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(*a, grads) {
                    scalar::axpy(T::one(), g, ga);
                }
                if let Some(gb) = self.slot(*b, grads) {
                    scalar::axpy(-T::one(), g, gb);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if a == b {
                    if let Some(ga) = self.slot(*a, grads) {
                        for k in 0..g.len() {
                            ga[k] += (T::one() + T::one()) * g[k] * av[k];
                        }
                    }
                    return;
                }
                if let Some(ga) = self.slot(*a, grads) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * bv[k];
                    }
                }
                if let Some(gb) = self.slot(*b, grads) {
                    for k in 0..g.len() {
                        gb[k] += g[k] * av[k];
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.slot(*a, grads) {
                    scalar::axpy(*s, g, ga);
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                if let Some(ga) = self.slot(*a, grads) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k] * (T::one() - y[k]);
                    }
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                if let Some(ga) = self.slot(*a, grads) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * (T::one() - y[k] * y[k]);
                    }
                }
            }
            Op::Exp(a) => {
                let y = &node.value;
                if let Some(ga) = self.slot(*a, grads) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k];
                    }
                }
            }
            Op::LogSigmoid(a) => {
                let x = &self.nodes[*a].value;
                if let Some(ga) = self.slot(*a, grads) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * (T::one() - scalar::sigmoid(x[k]));
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p].value.len();
                    if let Some(gp) = self.slot(p, grads) {
                        scalar::axpy(T::one(), &g[offset..offset + n], gp);
                    }
                    offset += n;
                }
            }
            Op::Slice { a, start } => {
                let start = *start;
                if let Some(ga) = self.slot(*a, grads) {
                    scalar::axpy(T::one(), g, &mut ga[start..start + g.len()]);
                }
            }
            Op::Row { table, row } => {
                let cols = self.nodes[*table].cols;
                let row = *row;
                if let Some(gt) = self.slot(*table, grads) {
                    scalar::axpy(T::one(), g, &mut gt[row * cols..(row + 1) * cols]);
                }
            }
            Op::Lstm { gates, cell } => self.back_lstm(idx, *gates, *cell, g, grads),
            Op::CrossEntropy { logits, target } => {
                let l = &self.nodes[*logits].value;
                let lse = scalar::log_sum_exp(l);
                if let Some(gl) = self.slot(*logits, grads) {
                    for k in 0..l.len() {
                        gl[k] += g[0] * (l[k] - lse).exp();
                    }
                    gl[*target] -= g[0];
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if a == b {
                    if let Some(ga) = self.slot(*a, grads) {
                        scalar::axpy(g[0] + g[0], av, ga);
                    }
                    return;
                }
                if let Some(ga) = self.slot(*a, grads) {
                    scalar::axpy(g[0], bv, ga);
                }
                if let Some(gb) = self.slot(*b, grads) {
                    scalar::axpy(g[0], av, gb);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(*a, grads) {
                    for v in ga.iter_mut() {
                        *v += g[0];
                    }
                }
            }
            Op::AddN(xs) => {
                for &x in xs {
                    if let Some(gx) = self.slot(x, grads) {
                        scalar::axpy(T::one(), g, gx);
                    }
                }
            }
        }
    }

    /// Gradient accumulator for node `i`, allocated on first use; `None` when
    /// the node does not lead to any trainable leaf.
    fn slot<'g>(&self, i: usize, grads: &'g mut [Option<Vec<T>>]) -> Option<&'g mut [T]> {
        if !self.nodes[i].needs_grad {
            return None;
        }
        let n = self.nodes[i].value.len();
        Some(grads[i].get_or_insert_with(|| vec![T::zero(); n]).as_mut_slice())
    }

    fn back_matvec(&self, w: usize, x: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let cols = self.nodes[w].cols;
        if self.nodes[w].needs_grad {
            let xv = &self.nodes[x].value;
            let gw = self.slot(w, grads).expect("needs grad");
            for (r, &gr) in g.iter().enumerate() {
                if gr != T::zero() {
                    scalar::axpy(gr, xv, &mut gw[r * cols..(r + 1) * cols]);
                }
            }
        }
        if self.nodes[x].needs_grad {
            let wv = &self.nodes[w].value;
            let gx = self.slot(x, grads).expect("needs grad");
            for (r, &gr) in g.iter().enumerate() {
                if gr != T::zero() {
                    scalar::axpy(gr, &wv[r * cols..(r + 1) * cols], gx);
                }
            }
        }
    }

    fn back_lstm(&self, idx: usize, gates: usize, cell: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let z = &self.nodes[gates].value;
        let c_prev = &self.nodes[cell].value;
        let out = &self.nodes[idx].value;
        let h = c_prev.len();
        let one = T::one();
        let mut dz = vec![T::zero(); 4 * h];
        let mut dc_prev = vec![T::zero(); h];
        for k in 0..h {
            let i = scalar::sigmoid(z[k]);
            let f = scalar::sigmoid(z[h + k]);
            let gg = z[2 * h + k].tanh();
            let o = scalar::sigmoid(z[3 * h + k]);
            let c = out[h + k];
            let tc = c.tanh();
            let dh = g[k];
            let dc = g[h + k] + dh * o * (one - tc * tc);
            dz[k] = dc * gg * i * (one - i);
            dz[h + k] = dc * c_prev[k] * f * (one - f);
            dz[2 * h + k] = dc * i * (one - gg * gg);
            dz[3 * h + k] = dh * tc * o * (one - o);
            dc_prev[k] = dc * f;
        }
        if let Some(gz) = self.slot(gates, grads) {
            scalar::axpy(one, &dz, gz);
        }
        if let Some(gc) = self.slot(cell, grads) {
            scalar::axpy(one, &dc_prev, gc);
        }
    }
}

/// Gradients from one backward pass, indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn(&Tensor<f64>) -> f64, analytic: &[f64], at: &Tensor<f64>) {
        let eps = 1e-6;
        for k in 0..at.len() {
            let mut plus = at.clone();
            plus.data[k] += eps;
            let mut minus = at.clone();
            minus.data[k] -= eps;
            let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
            assert!(
                (fd - analytic[k]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "coordinate {k}: fd {fd} vs analytic {}",
                analytic[k]
            );
        }
    }

    #[test]
    fn lstm_cell_gradient_matches_finite_differences() {
        let w = Tensor::from_vec(
            8,
            3,
            (0..24).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1).collect(),
        );
        let forward = |w: &Tensor<f64>| {
            let mut t = Tape::new();
            let wv = t.param(w);
            let x = t.constant(vec![0.3, -0.2, 0.9]);
            let gates = t.matvec(wv, x);
            let c0 = t.constant(vec![0.1, -0.4]);
            let hc = t.lstm(gates, c0);
            let hc2 = t.mul(hc, hc);
            let s = t.sum(hc2);
            (t.scalar_value(s), {
                let g = t.backward(s);
                g.get(wv).unwrap().to_vec()
            })
        };
        let (_, analytic) = forward(&w);
        fd_check(|w| forward(w).0, &analytic, &w);
    }

    #[test]
    fn cross_entropy_of_zero_logits_is_log_vocab() {
        let mut t: Tape<f64> = Tape::new();
        let l = t.constant(vec![0.0; 6]);
        let ce = t.cross_entropy(l, 2);
        assert!((t.scalar_value(ce) - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mixed_ops_gradient_matches_finite_differences() {
        let p = Tensor::vector(vec![0.5, -1.2, 0.7, 0.05]);
        let forward = |p: &Tensor<f64>| {
            let mut t = Tape::new();
            let v = t.param(p);
            let a = t.slice(v, 0, 2);
            let b = t.slice(v, 2, 2);
            let e = t.exp(a);
            let s = t.sigmoid(b);
            let th = t.tanh(v);
            let c = t.concat(&[e, s]);
            let m = t.mul(c, th);
            let ls = t.log_sigmoid(m);
            let sc = t.scale(ls, -3.0);
            let d = t.dot(sc, v);
            let tot = t.add_n(&[d, d]);
            let ce = t.cross_entropy(v, 1);
            let out = t.add(tot, ce);
            (t.scalar_value(out), t.backward(out).get(v).unwrap().to_vec())
        };
        let (_, analytic) = forward(&p);
        fd_check(|p| forward(p).0, &analytic, &p);
    }

    #[test]
    fn embedding_row_gradient_lands_in_the_selected_row_only() {
        let table = Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut t = Tape::new();
        let tv = t.param(&table);
        let r = t.row(tv, 1);
        assert_eq!(t.value(r), &[3.0, 4.0]);
        let s = t.sum(r);
        let g = t.backward(s);
        assert_eq!(g.get(tv).unwrap(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t: Tape<f64> = Tape::new();
        let c = t.constant(vec![1.0, 2.0]);
        let s = t.sum(c);
        let g = t.backward(s);
        assert!(g.get(c).is_none());
    }
}
