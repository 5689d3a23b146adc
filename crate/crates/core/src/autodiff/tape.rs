//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every primitive evaluates eagerly, appends a node holding its value and
//! whatever it needs for the backward pass, and returns a [`Var`] handle.
//! [`Tape::backward`] walks the nodes in reverse recording order and
//! accumulates gradients additively wherever a value fans out.

use rand::Rng;

use super::array::{Array, Scalar};
use crate::error::{Error, Result};

/// Layer-norm variance epsilon.
pub const LAYERNORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRowBroadcast(Var, Var),
    Scale(Var, T),
    Transpose(Var),
    Concat(Vec<Var>, Axis),
    Slice(Var, Axis, usize),
    GatherRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(Var),
    Dropout(Var, Vec<T>),
    Mse {
        pred: Var,
        diff: Vec<T>,
        mask: Option<Vec<bool>>,
        denom: T,
    },
}

struct Node<T> {
    value: Array<T>,
    requires_grad: bool,
    op: Op<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, left: [usize; 2], right: [usize; 2]) -> Error {
    Error::Shape { op, left, right }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Array<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Array<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut out = Array::zeros(sa[0], sb[1]);
        T::gemm(
            sa[0],
            sa[1],
            sb[1],
            T::one(),
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            T::zero(),
            out.data_mut(),
        );
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Elementwise sum. `b` may also be a `1 x cols` row broadcast over
    /// every row of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            let mut out = self.value(a).clone();
            for (o, &y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
                *o += y;
            }
            Ok(self.push(out, Op::Add(a, b), &[a, b]))
        } else if sb[0] == 1 && sb[1] == sa[1] {
            let mut out = self.value(a).clone();
            let row = self.value(b).data();
            for r in 0..sa[0] {
                for (o, &y) in out.row_mut(r).iter_mut().zip(row) {
                    *o += y;
                }
            }
            Ok(self.push(out, Op::AddRowBroadcast(a, b), &[a, b]))
        } else {
            Err(shape_err("add", sa, sb))
        }
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transposed();
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Data("concat of zero arrays".into()))?;
        let s0 = self.shape(first);
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let (fixed, along) = match axis {
                Axis::Rows => (s[1] == s0[1], s[0]),
                Axis::Cols => (s[0] == s0[0], s[1]),
            };
            if !fixed {
                return Err(shape_err("concat", s0, s));
            }
            total += along;
        }
        let out = match axis {
            Axis::Rows => {
                let mut data = Vec::with_capacity(total * s0[1]);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Array::from_vec(total, s0[1], data)?
            }
            Axis::Cols => {
                let mut data = Vec::with_capacity(total * s0[0]);
                for r in 0..s0[0] {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                Array::from_vec(s0[0], total, data)?
            }
        };
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), parts))
    }

    /// Rows or columns `start..end`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        let extent = match axis {
            Axis::Rows => s[0],
            Axis::Cols => s[1],
        };
        if start >= end || end > extent {
            return Err(Error::Shape {
                op: "slice",
                left: s,
                right: [start, end],
            });
        }
        let v = self.value(a);
        let out = match axis {
            Axis::Rows => Array::from_vec(
                end - start,
                s[1],
                v.data()[start * s[1]..end * s[1]].to_vec(),
            )?,
            Axis::Cols => {
                let mut data = Vec::with_capacity(s[0] * (end - start));
                for r in 0..s[0] {
                    data.extend_from_slice(&v.row(r)[start..end]);
                }
                Array::from_vec(s[0], end - start, data)?
            }
        };
        Ok(self.push(out, Op::Slice(a, axis, start), &[a]))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(Error::Shape {
                op: "gather_rows",
                left: s,
                right: [bad, 0],
            });
        }
        let v = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * s[1]);
        for &i in indices {
            data.extend_from_slice(v.row(i));
        }
        let out = Array::from_vec(indices.len(), s[1], data)?;
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec()), &[a]))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            let inv = sum.recip();
            row.iter_mut().for_each(|x| *x *= inv);
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    /// Per-row standardization followed by the affine map
    /// `gamma * xhat + beta` (`gamma`, `beta` are `1 x cols`).
    pub fn layernorm_rows(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let s = self.shape(x);
        for p in [gamma, beta] {
            if self.shape(p) != [1, s[1]] {
                return Err(shape_err("layernorm_rows", s, self.shape(p)));
            }
        }
        let eps = T::of(LAYERNORM_EPS);
        let n = T::of(s[1] as f64);
        let xv = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(s[0]);
        let mut out = Array::zeros(s[0], s[1]);
        for r in 0..s[0] {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = (var + eps).sqrt().recip();
            inv_std.push(inv);
            for (c, (&v, o)) in row.iter().zip(out.row_mut(r)).enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                *o = g[c] * h + b[c];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let k = T::of(std::f64::consts::FRAC_1_SQRT_2);
        let half = T::of(0.5);
        let out = self
            .value(a)
            .map(|x| half * x * (T::one() + (x * k).erf()));
        self.push(out, Op::Gelu(a), &[a])
    }

    /// Inverted dropout: surviving entries are scaled by `1 / (1 - p)`.
    /// Outside training, or with `p == 0`, this is the identity and returns
    /// `a` itself.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Bounds {
                what: "dropout probability",
                detail: format!("{p} not in [0, 1)"),
            });
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let mut out = self.value(a).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        Ok(self.push(out, Op::Dropout(a, mask), &[a]))
    }

    /// Mean squared error against a constant target. With a row mask, only
    /// rows marked `true` contribute and the mean runs over those rows only.
    pub fn mse(&mut self, pred: Var, target: &Array<T>, mask: Option<&[bool]>) -> Result<Var> {
        let s = self.shape(pred);
        if target.shape() != s {
            return Err(shape_err("mse", s, target.shape()));
        }
        if let Some(m) = mask {
            if m.len() != s[0] {
                return Err(shape_err("mse mask", s, [m.len(), 1]));
            }
        }
        let rows_used = mask.map_or(s[0], |m| m.iter().filter(|&&b| b).count());
        if rows_used == 0 {
            return Err(Error::Data("mse mask selects no rows".into()));
        }
        let p = self.value(pred);
        let mut diff = vec![T::zero(); p.len()];
        let mut total = T::zero();
        for r in 0..s[0] {
            if mask.is_some_and(|m| !m[r]) {
                continue;
            }
            for c in 0..s[1] {
                let d = p.get(r, c) - target.get(r, c);
                diff[r * s[1] + c] = d;
                total += d * d;
            }
        }
        let denom = T::of((rows_used * s[1]) as f64);
        let out = Array::scalar(total / denom);
        Ok(self.push(
            out,
            Op::Mse {
                pred,
                diff,
                mask: mask.map(<[bool]>::to_vec),
                denom,
            },
            &[pred],
        ))
    }

    /// Reverse pass from a `1 x 1` output. Returns the gradients of every
    /// differentiable leaf.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let s = self.shape(output);
        if s != [1, 1] {
            return Err(shape_err("backward", s, [1, 1]));
        }
        let mut grads: Vec<Option<Array<T>>> = Vec::new();
        grads.resize_with(output.0 + 1, || None);
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(Array::scalar(T::one()));
        }
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: Array<T>, grads: &mut [Option<Array<T>>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if wants(*a) {
                    let mut da = Array::zeros(m, k);
                    T::gemm(m, n, k, T::one(), g.data(), false, bv.data(), true, T::zero(), da.data_mut());
                    accumulate(grads, *a, da);
                }
                if wants(*b) {
                    let mut db = Array::zeros(k, n);
                    T::gemm(k, m, n, T::one(), av.data(), true, g.data(), false, T::zero(), db.data_mut());
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
                if wants(*a) {
                    accumulate(grads, *a, g);
                }
            }
            Op::AddRowBroadcast(a, b) => {
                if wants(*b) {
                    let mut db = Array::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, &x) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    accumulate(grads, *b, db);
                }
                if wants(*a) {
                    accumulate(grads, *a, g);
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    accumulate(grads, *a, g.map(|x| x * *s));
                }
            }
            Op::Transpose(a) => {
                if wants(*a) {
                    accumulate(grads, *a, g.transposed());
                }
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let [pr, pc] = self.shape(p);
                    if wants(p) {
                        let part = match axis {
                            Axis::Rows => Array::from_vec(
                                pr,
                                pc,
                                g.data()[offset * pc..(offset + pr) * pc].to_vec(),
                            ),
                            Axis::Cols => Array::from_vec(
                                pr,
                                pc,
                                (0..pr)
                                    .flat_map(|r| g.row(r)[offset..offset + pc].iter().copied())
                                    .collect(),
                            ),
                        }
                        .expect("concat part shape");
                        accumulate(grads, p, part);
                    }
                    offset += match axis {
                        Axis::Rows => pr,
                        Axis::Cols => pc,
                    };
                }
            }
            Op::Slice(a, axis, start) => {
                if wants(*a) {
                    let [ar, ac] = self.shape(*a);
                    let mut da = Array::zeros(ar, ac);
                    match axis {
                        Axis::Rows => {
                            da.data_mut()[start * ac..start * ac + g.len()].copy_from_slice(g.data())
                        }
                        Axis::Cols => {
                            for r in 0..ar {
                                da.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                            }
                        }
                    }
                    accumulate(grads, *a, da);
                }
            }
            Op::GatherRows(a, indices) => {
                if wants(*a) {
                    let [ar, ac] = self.shape(*a);
                    let mut da = Array::zeros(ar, ac);
                    for (r, &i) in indices.iter().enumerate() {
                        for (d, &x) in da.row_mut(i).iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    accumulate(grads, *a, da);
                }
            }
            Op::SoftmaxRows(a) => {
                if wants(*a) {
                    let y = &node.value;
                    let mut da = g;
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dot: T = da.row(r).iter().zip(yr).map(|(&d, &p)| d * p).sum();
                        for (d, &p) in da.row_mut(r).iter_mut().zip(yr) {
                            *d = p * (*d - dot);
                        }
                    }
                    accumulate(grads, *a, da);
                }
            }
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let [rows, cols] = g.shape();
                if wants(*beta) {
                    let mut db = Array::zeros(1, cols);
                    for r in 0..rows {
                        for (d, &x) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    accumulate(grads, *beta, db);
                }
                if wants(*gamma) {
                    let mut dg = Array::zeros(1, cols);
                    for r in 0..rows {
                        let h = &xhat[r * cols..(r + 1) * cols];
                        for ((d, &x), &h) in dg.data_mut().iter_mut().zip(g.row(r)).zip(h) {
                            *d += x * h;
                        }
                    }
                    accumulate(grads, *gamma, dg);
                }
                if wants(*x) {
                    let gv = self.value(*gamma).data();
                    let n = T::of(cols as f64);
                    let mut dx = Array::zeros(rows, cols);
                    let mut dh = vec![T::zero(); cols];
                    for r in 0..rows {
                        let h = &xhat[r * cols..(r + 1) * cols];
                        for ((d, &x), &gc) in dh.iter_mut().zip(g.row(r)).zip(gv) {
                            *d = x * gc;
                        }
                        let sum_dh: T = dh.iter().copied().sum();
                        let sum_dh_h: T = dh.iter().zip(h).map(|(&d, &h)| d * h).sum();
                        let scale = inv_std[r] / n;
                        for ((o, &d), &h) in dx.row_mut(r).iter_mut().zip(&dh).zip(h) {
                            *o = scale * (n * d - sum_dh - h * sum_dh_h);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Gelu(a) => {
                if wants(*a) {
                    let k = T::of(std::f64::consts::FRAC_1_SQRT_2);
                    let half = T::of(0.5);
                    let norm = T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
                    let xv = self.value(*a);
                    let mut da = g;
                    for (d, &x) in da.data_mut().iter_mut().zip(xv.data()) {
                        let cdf = half * (T::one() + (x * k).erf());
                        let pdf = norm * (-half * x * x).exp();
                        *d *= cdf + x * pdf;
                    }
                    accumulate(grads, *a, da);
                }
            }
            Op::Dropout(a, mask) => {
                if wants(*a) {
                    let mut da = g;
                    for (d, &m) in da.data_mut().iter_mut().zip(mask) {
                        *d *= m;
                    }
                    accumulate(grads, *a, da);
                }
            }
            Op::Mse {
                pred,
                diff,
                mask,
                denom,
            } => {
                if wants(*pred) {
                    let [rows, cols] = self.shape(*pred);
                    let scale = g.data()[0] * T::of(2.0) / *denom;
                    let mut dp = Array::zeros(rows, cols);
                    for r in 0..rows {
                        if mask.as_ref().is_some_and(|m| !m[r]) {
                            continue;
                        }
                        for (o, &d) in dp.row_mut(r).iter_mut().zip(&diff[r * cols..(r + 1) * cols]) {
                            *o = scale * d;
                        }
                    }
                    accumulate(grads, *pred, dp);
                }
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Array<T>>], v: Var, g: Array<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Array<T>>>,
}

impl<T> Gradients<T> {
    /// Gradient of `v`, or `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Array<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Array<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
