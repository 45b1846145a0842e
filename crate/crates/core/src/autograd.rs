//! A small reverse-mode tape over dense `f64` matrices.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over the
//! node list is a valid topological order for backpropagation.

use std::sync::Arc;

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

type M = Matrix<f64>;

/// Clip range for probabilities entering binary cross-entropy.
pub const BCE_CLIP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<CsrMatrix<f64>>, Var),
    Add(Var, Var),
    AddRowBroadcast(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    GatherRows(Var, Vec<usize>),
    ReplaceRows(Var, Vec<usize>, Var),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    Transpose(Var),
    SoftmaxCol(Var),
    ConcatRows(Vec<Var>),
    PairDots(Var, Vec<(usize, usize)>),
    SumSquares(Var),
    MeanRowSqError(Var, M),
    SoftBce(Var, Vec<f64>),
    /// Scalar node with precomputed local gradients for each input.
    Custom(Vec<(Var, M)>),
}

struct Node {
    value: M,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: M, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &M {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    pub fn leaf(&mut self, value: M) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.leaf(M::filled(1, 1, v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// Constant sparse matrix times a tracked dense matrix.
    pub fn spmm(&mut self, s: Arc<CsrMatrix<f64>>, b: Var) -> Result<Var> {
        let v = s.mul_dense(self.value(b))?;
        Ok(self.push(v, Op::SpMM(s, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// `a + 1·b` where `b` is a single row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::Shape(format!(
                "cannot broadcast {:?} over {:?}",
                bv.shape(),
                av.shape()
            )));
        }
        let mut v = av.clone();
        for i in 0..v.rows() {
            for (o, &b) in v.row_mut(i).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        Ok(self.push(v, Op::AddRowBroadcast(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if let Some(&i) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(Error::Shape(format!(
                "row {i} out of range for {} rows",
                av.rows()
            )));
        }
        let v = av.select_rows(idx);
        Ok(self.push(v, Op::GatherRows(a, idx.to_vec())))
    }

    /// Copy of `a` with rows `idx` replaced by the single-row `token`.
    pub fn replace_rows(&mut self, a: Var, idx: &[usize], token: Var) -> Result<Var> {
        let (av, tv) = (self.value(a), self.value(token));
        if tv.rows() != 1 || tv.cols() != av.cols() {
            return Err(Error::Shape(format!(
                "token {:?} for rows of width {}",
                tv.shape(),
                av.cols()
            )));
        }
        let mut v = av.clone();
        for &i in idx {
            if i >= v.rows() {
                return Err(Error::Shape(format!("row {i} out of range")));
            }
            v.row_mut(i).copy_from_slice(tv.row(0));
        }
        Ok(self.push(v, Op::ReplaceRows(a, idx.to_vec(), token)))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rows() == 0 {
            return Err(Error::Shape("mean over zero rows".into()));
        }
        let n = av.rows() as f64;
        let mut v = M::zeros(1, av.cols());
        for i in 0..av.rows() {
            for (o, &x) in v.row_mut(0).iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        let v = v.scale(1.0 / n);
        Ok(self.push(v, Op::MeanRows(a)))
    }

    /// Column-wise maximum; ties route the gradient to the first maximal row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rows() == 0 {
            return Err(Error::Shape("max over zero rows".into()));
        }
        let mut arg = vec![0usize; av.cols()];
        let mut v = M::row_vector(av.row(0).to_vec());
        for i in 1..av.rows() {
            for (c, &x) in av.row(i).iter().enumerate() {
                if x > v[(0, c)] {
                    v[(0, c)] = x;
                    arg[c] = i;
                }
            }
        }
        Ok(self.push(v, Op::MaxRows(a, arg)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Softmax down a single column.
    pub fn softmax_col(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.cols() != 1 || av.rows() == 0 {
            return Err(Error::Shape(format!(
                "softmax expects a nonempty column, got {:?}",
                av.shape()
            )));
        }
        let max = av
            .as_slice()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = av.as_slice().iter().map(|&x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let v = M::from_vec(exps.len(), 1, exps.into_iter().map(|e| e / z).collect())?;
        Ok(self.push(v, Op::SoftmaxCol(a)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(Error::Shape("concat of mismatched widths".into()));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.as_slice());
        }
        let v = M::from_vec(rows, cols, data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    /// Column of row dot products `z_iᵀ z_j` for each pair.
    pub fn pair_dots(&mut self, z: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let zv = self.value(z);
        let mut out = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs {
            if i >= zv.rows() || j >= zv.rows() {
                return Err(Error::Shape(format!("pair ({i}, {j}) out of range")));
            }
            out.push(zv.row(i).iter().zip(zv.row(j)).map(|(a, b)| a * b).sum());
        }
        let v = M::from_vec(pairs.len(), 1, out)?;
        Ok(self.push(v, Op::PairDots(z, pairs.to_vec())))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = M::filled(1, 1, self.value(a).frobenius_sq());
        self.push(v, Op::SumSquares(a))
    }

    /// `(1/R) Σ_r ‖pred_r − target_r‖²`, defined as 0 for zero rows.
    pub fn mean_row_sq_error(&mut self, pred: Var, target: M) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "prediction {:?} vs target {:?}",
                pv.shape(),
                target.shape()
            )));
        }
        let loss = if pv.rows() == 0 {
            0.0
        } else {
            pv.sub(&target)?.frobenius_sq() / pv.rows() as f64
        };
        Ok(self.push(M::filled(1, 1, loss), Op::MeanRowSqError(pred, target)))
    }

    /// Mean soft-target binary cross-entropy of a probability column,
    /// probabilities clipped to `[BCE_CLIP, 1 − BCE_CLIP]`; 0 when empty.
    pub fn soft_bce(&mut self, probs: Var, targets: &[f64]) -> Result<Var> {
        let pv = self.value(probs);
        if pv.cols() != 1 && pv.rows() > 0 || pv.rows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} targets for probabilities of shape {:?}",
                targets.len(),
                pv.shape()
            )));
        }
        if let Some(y) = targets.iter().find(|y| !(0.0..=1.0).contains(*y)) {
            return Err(Error::Data(format!("soft target {y} outside [0, 1]")));
        }
        let loss = soft_bce(pv.as_slice(), targets);
        Ok(self.push(M::filled(1, 1, loss), Op::SoftBce(probs, targets.to_vec())))
    }

    /// Scalar node with a value and gradients computed outside the tape.
    pub fn custom_scalar(&mut self, value: f64, local_grads: Vec<(Var, M)>) -> Result<Var> {
        for (v, g) in &local_grads {
            if self.value(*v).shape() != g.shape() {
                return Err(Error::Shape("custom gradient shape mismatch".into()));
            }
        }
        Ok(self.push(M::filled(1, 1, value), Op::Custom(local_grads)))
    }

    /// Reverse sweep from a 1×1 node. Fails before propagating anything if any
    /// forward value is non-finite.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        if let Some(pos) = self.nodes[..=loss.0]
            .iter()
            .position(|n| !n.value.is_finite())
        {
            return Err(Error::NonFinite(format!(
                "forward value at tape node {pos}"
            )));
        }
        let mut grads: Vec<Option<M>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(M::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    let gb = self.value(*a).transpose().matmul(&g)?;
                    accum(&mut grads, *a, ga);
                    accum(&mut grads, *b, gb);
                }
                Op::SpMM(s, b) => accum(&mut grads, *b, s.transpose_mul_dense(&g)?),
                Op::Add(a, b) => {
                    accum(&mut grads, *a, g.clone());
                    accum(&mut grads, *b, g.clone());
                }
                Op::AddRowBroadcast(a, b) => {
                    let mut gb = M::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &x) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    accum(&mut grads, *b, gb);
                    accum(&mut grads, *a, g.clone());
                }
                Op::Scale(a, c) => accum(&mut grads, *a, g.scale(*c)),
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let ga = zip(&g, av, |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accum(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip(&g, &node.value, |gv, y| gv * y * (1.0 - y));
                    accum(&mut grads, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let av = self.value(*a);
                    let mut ga = M::zeros(av.rows(), av.cols());
                    for (k, &i) in idx.iter().enumerate() {
                        for (o, &x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    accum(&mut grads, *a, ga);
                }
                Op::ReplaceRows(a, idx, token) => {
                    let mut ga = g.clone();
                    let mut gt = M::zeros(1, g.cols());
                    for &i in idx {
                        for (o, &x) in gt.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                        ga.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
                    }
                    accum(&mut grads, *a, ga);
                    accum(&mut grads, *token, gt);
                }
                Op::MeanRows(a) => {
                    let av = self.value(*a);
                    let inv = 1.0 / av.rows() as f64;
                    let mut ga = M::zeros(av.rows(), av.cols());
                    for i in 0..av.rows() {
                        for (o, &x) in ga.row_mut(i).iter_mut().zip(g.row(0)) {
                            *o = x * inv;
                        }
                    }
                    accum(&mut grads, *a, ga);
                }
                Op::MaxRows(a, arg) => {
                    let av = self.value(*a);
                    let mut ga = M::zeros(av.rows(), av.cols());
                    for (c, &i) in arg.iter().enumerate() {
                        ga[(i, c)] = g[(0, c)];
                    }
                    accum(&mut grads, *a, ga);
                }
                Op::Transpose(a) => accum(&mut grads, *a, g.transpose()),
                Op::SoftmaxCol(a) => {
                    let y = &node.value;
                    let dot: f64 = y
                        .as_slice()
                        .iter()
                        .zip(g.as_slice())
                        .map(|(a, b)| a * b)
                        .sum();
                    let ga = zip(&g, y, |gv, yv| yv * (gv - dot));
                    accum(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let r = self.value(p).rows();
                        let idx: Vec<usize> = (offset..offset + r).collect();
                        accum(&mut grads, p, g.select_rows(&idx));
                        offset += r;
                    }
                }
                Op::PairDots(z, pairs) => {
                    let zv = self.value(*z);
                    let mut gz = M::zeros(zv.rows(), zv.cols());
                    for (k, &(i, j)) in pairs.iter().enumerate() {
                        let gk = g[(k, 0)];
                        for c in 0..zv.cols() {
                            gz[(i, c)] += gk * zv[(j, c)];
                            gz[(j, c)] += gk * zv[(i, c)];
                        }
                    }
                    accum(&mut grads, *z, gz);
                }
                Op::SumSquares(a) => {
                    let s = 2.0 * g[(0, 0)];
                    accum(&mut grads, *a, self.value(*a).scale(s));
                }
                Op::MeanRowSqError(pred, target) => {
                    let pv = self.value(*pred);
                    if pv.rows() > 0 {
                        let s = 2.0 * g[(0, 0)] / pv.rows() as f64;
                        accum(&mut grads, *pred, pv.sub(target)?.scale(s));
                    }
                }
                Op::SoftBce(p, y) => {
                    let pv = self.value(*p);
                    if !y.is_empty() {
                        let s = g[(0, 0)] / y.len() as f64;
                        let gp: Vec<f64> = pv
                            .as_slice()
                            .iter()
                            .zip(y)
                            .map(|(&pr, &t)| {
                                if !(BCE_CLIP..=1.0 - BCE_CLIP).contains(&pr) {
                                    0.0
                                } else {
                                    s * (-t / pr + (1.0 - t) / (1.0 - pr))
                                }
                            })
                            .collect();
                        accum(&mut grads, *p, M::from_vec(pv.rows(), pv.cols(), gp)?);
                    }
                }
                Op::Custom(locals) => {
                    let s = g[(0, 0)];
                    for (v, lg) in locals {
                        accum(&mut grads, *v, lg.scale(s));
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn zip(a: &M, b: &M, f: impl Fn(f64, f64) -> f64) -> M {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    M::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn accum(grads: &mut [Option<M>], v: Var, g: M) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of one scalar with respect to every tape node up to it.
pub struct Gradients {
    grads: Vec<Option<M>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&M> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean soft-target BCE with clipping; 0 on empty input.
pub fn soft_bce(probs: &[f64], targets: &[f64]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let total: f64 = probs
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / probs.len() as f64
}
