//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a `[1, 1]` output walks the recorded nodes in
//! reverse and returns [`Gradients`] for every variable. A fresh tape is
//! built per optimization step, so memory never outlives one pass.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{gemm, Tensor};
use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::math;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Sin(usize),
    Cos(usize),
    Square(usize),
    Abs(usize),
    Powf(usize, f64),
    MulScalar(usize, usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Column(usize, usize),
    ConcatCols(Box<[usize]>),
    Kernel {
        a: usize,
        b: usize,
        bandwidths: Box<[f64]>,
    },
    KernelDot {
        a: usize,
        b: usize,
        bandwidths: Box<[f64]>,
        weights: KernelWeights,
    },
    Inverse(usize),
    ScalarFn {
        input: usize,
        grad: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar output with respect to every recorded variable.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    shapes: Vec<(usize, usize)>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`; all zeros when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape || v.idx >= self.grads.len() {
            return Err(Error::MissingTape(v.idx));
        }
        let (r, c) = self.shapes[v.idx];
        Ok(match &self.grads[v.idx] {
            Some(g) => Tensor::matrix(r, c, g.clone())?,
            None => Tensor::zeros(r, c),
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::MissingTape(v.idx));
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut value = value;
        value.grad = None;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        let i = self.idx(v)?;
        Ok(&self.nodes[i].value)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// Same value, cut from the graph.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let t = self.value(v)?.clone();
        Ok(self.constant(t))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = self.val(ia).matmul(self.val(ib))?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::MatMul(ia, ib), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).transpose();
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Transpose(ia), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(usize, usize, Tensor)> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (self.val(ia), self.val(ib));
        if va.dims() != vb.dims() {
            return Err(dim_err(name, va.dims(), vb.dims()));
        }
        let out = va.zip_map(vb, f)?;
        Ok((ia, ib, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::Add(ia, ib), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::Sub(ia, ib), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::Mul(ia, ib), rg))
    }

    fn row_broadcast(&mut self, a: Var, row: Var, name: &str, mul: bool) -> Result<Var> {
        let (ia, ir) = (self.idx(a)?, self.idx(row)?);
        let (m, n) = self.val(ia).dims();
        if self.val(ir).dims() != (1, n) {
            return Err(dim_err(name, (1, n), self.val(ir).dims()));
        }
        let r = self.val(ir).values();
        let src = self.val(ia).values();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                let x = src[i * n + j];
                out.push(if mul { x * r[j] } else { x + r[j] });
            }
        }
        let out = Tensor::matrix(m, n, out)?;
        let rg = self.rg(ia) || self.rg(ir);
        let op = if mul {
            Op::MulRow(ia, ir)
        } else {
            Op::AddRow(ia, ir)
        };
        Ok(self.push(out, op, rg))
    }

    /// `a + row` with a `[1, n]` row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row, "add_row", false)
    }

    /// `a ∘ row` with a `[1, n]` row broadcast over the rows of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row, "mul_row", true)
    }

    fn unary(
        &mut self,
        a: Var,
        op: impl FnOnce(usize) -> Op,
        f: impl Fn(f64) -> f64,
    ) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(f);
        let rg = self.rg(ia);
        Ok(self.push(out, op(ia), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |i| Op::Scale(i, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::AddScalar, |x| x + c)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh, math::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp, math::exp)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sin, math::sin)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Cos, math::cos)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square, |x| x * x)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs, f64::abs)
    }

    /// Elementwise `a^p`.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        self.unary(a, |i| Op::Powf(i, p), |x| math::powf(x, p))
    }

    /// `a · s` for a `[1, 1]` variable `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ia, is) = (self.idx(a)?, self.idx(s)?);
        if self.val(is).dims() != (1, 1) {
            return Err(dim_err("mul_scalar", (1, 1), self.val(is).dims()));
        }
        let c = self.val(is).item();
        let out = self.val(ia).map(|x| x * c);
        let rg = self.rg(ia) || self.rg(is);
        Ok(self.push(out, Op::MulScalar(ia, is), rg))
    }

    /// Sum of all entries, as `[1, 1]`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = Tensor::scalar(self.val(ia).sum());
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Sum(ia), rg))
    }

    /// Mean of all entries, as `[1, 1]`.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = Tensor::scalar(self.val(ia).mean());
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Mean(ia), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).reshape(rows, cols)?;
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Reshape(ia), rg))
    }

    /// Column `j` of `a` as `[rows, 1]`.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let cols = self.val(ia).cols();
        if j >= cols {
            return Err(Error::IndexOutOfRange {
                index: j,
                size: cols,
            });
        }
        let out = Tensor::column(self.val(ia).col(j));
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Column(ia, j), rg))
    }

    /// Horizontal concatenation of tensors sharing a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&v| self.idx(v)).collect::<Result<_>>()?;
        let rows = idx.first().map_or(0, |&i| self.val(i).rows());
        let mut total = 0;
        for &i in &idx {
            if self.val(i).rows() != rows {
                return Err(dim_err("concat_cols", rows, self.val(i).rows()));
            }
            total += self.val(i).cols();
        }
        let mut out = Tensor::zeros(rows, total);
        let mut off = 0;
        for &i in &idx {
            let v = self.val(i);
            let c = v.cols();
            for r in 0..rows {
                out.row_mut(r)[off..off + c].copy_from_slice(v.row(r));
            }
            off += c;
        }
        let rg = idx.iter().any(|&i| self.rg(i));
        Ok(self.push(out, Op::ConcatCols(idx.into_boxed_slice()), rg))
    }

    /// RBF-mixture kernel matrix between the rows of `a` and `b`:
    /// `K[i][j] = Σ_bw exp(−‖a_i − b_j‖² / (2 bw²))`.
    pub fn kernel(&mut self, a: Var, b: Var, bandwidths: &[f64]) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = rbf_kernel(self.val(ia), self.val(ib), bandwidths)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(
            out,
            Op::Kernel {
                a: ia,
                b: ib,
                bandwidths: bandwidths.into(),
            },
            rg,
        ))
    }

    /// Weighted kernel sum `Σ_ij w_ij Σ_bw exp(−‖a_i − b_j‖² / (2 bw²))` as a
    /// `1×1` value, without materializing the kernel matrix.
    pub fn kernel_dot(
        &mut self,
        a: Var,
        b: Var,
        bandwidths: &[f64],
        weights: KernelWeights,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (self.val(ia), self.val(ib));
        let ((n, d), (m, d2)) = (va.dims(), vb.dims());
        if d != d2 {
            return Err(dim_err("kernel_dot", va.dims(), vb.dims()));
        }
        match &weights {
            KernelWeights::Matrix(t) if t.dims() != (n, m) => {
                return Err(dim_err("kernel_dot weights", (n, m), t.dims()));
            }
            KernelWeights::Diagonal(w) if n != m || w.len() != n => {
                return Err(dim_err("kernel_dot diagonal weights", (n, m), w.len()));
            }
            _ => {}
        }
        let symmetric = ia == ib && weights.is_symmetric(n);
        let mix = RbfMixture::new(bandwidths);
        let mut total = 0.0;
        for i in 0..n {
            let ai = va.row(i);
            let cols = weights.cols(i, m);
            let from = if symmetric {
                i.max(cols.start)
            } else {
                cols.start
            };
            for j in from..cols.end {
                let w = weights.at(i, j, m);
                if w != 0.0 {
                    let k = w * mix.value(sq_dist(ai, vb.row(j)));
                    total += if symmetric && j != i { 2.0 * k } else { k };
                }
            }
        }
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(
            Tensor::scalar(total),
            Op::KernelDot {
                a: ia,
                b: ib,
                bandwidths: bandwidths.into(),
                weights,
            },
            rg,
        ))
    }

    /// Matrix inverse of a square input.
    pub fn inverse(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = linalg::inverse(self.val(ia))?;
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Inverse(ia), rg))
    }

    /// Records a scalar function of `input` whose value and gradient were
    /// computed outside the tape.
    pub fn scalar_fn(&mut self, input: Var, value: f64, grad: Tensor) -> Result<Var> {
        let ia = self.idx(input)?;
        if grad.dims() != self.val(ia).dims() {
            return Err(dim_err("scalar_fn", self.val(ia).dims(), grad.dims()));
        }
        let rg = self.rg(ia);
        Ok(self.push(Tensor::scalar(value), Op::ScalarFn { input: ia, grad }, rg))
    }

    /// Reverse sweep from a `[1, 1]` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.idx(output)?;
        if self.val(out).dims() != (1, 1) {
            return Err(Error::Contract(alloc::format!(
                "backward needs a scalar output, got shape {:?}",
                self.val(out).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out] = Some(vec![1.0]);
        for i in (0..=out).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.value.dims()).collect(),
            grads,
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let (m, n) = node.value.dims();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let k = va.cols();
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, vb.values(), true, &mut ga, 0.0);
                    accumulate(grads, *a, &ga);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, va.values(), true, g, false, &mut gb, 0.0);
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Transpose(a) => {
                let gt = Tensor::matrix(m, n, g.to_vec()).map(|t| t.transpose());
                if let Ok(gt) = gt {
                    accumulate(grads, *a, gt.values());
                }
            }
            Op::Add(a, b) => {
                self.acc_if(grads, *a, g);
                self.acc_if(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.acc_if(grads, *a, g);
                if self.rg(*b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(grads, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(self.val(*b).values())
                        .map(|(x, y)| x * y)
                        .collect();
                    accumulate(grads, *a, &ga);
                }
                if self.rg(*b) {
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(self.val(*a).values())
                        .map(|(x, y)| x * y)
                        .collect();
                    accumulate(grads, *b, &gb);
                }
            }
            Op::AddRow(a, r) => {
                self.acc_if(grads, *a, g);
                if self.rg(*r) {
                    let mut gr = vec![0.0; n];
                    for row in g.chunks_exact(n) {
                        gr.iter_mut().zip(row).for_each(|(s, x)| *s += x);
                    }
                    accumulate(grads, *r, &gr);
                }
            }
            Op::MulRow(a, r) => {
                let rv = self.val(*r).values();
                if self.rg(*a) {
                    let mut ga = Vec::with_capacity(m * n);
                    for row in g.chunks_exact(n) {
                        ga.extend(row.iter().zip(rv).map(|(x, y)| x * y));
                    }
                    accumulate(grads, *a, &ga);
                }
                if self.rg(*r) {
                    let av = self.val(*a).values();
                    let mut gr = vec![0.0; n];
                    for (grow, arow) in g.chunks_exact(n).zip(av.chunks_exact(n)) {
                        for j in 0..n {
                            gr[j] += grow[j] * arow[j];
                        }
                    }
                    accumulate(grads, *r, &gr);
                }
            }
            Op::Scale(a, c) => {
                let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                accumulate(grads, *a, &ga);
            }
            Op::AddScalar(a) | Op::Reshape(a) => accumulate(grads, *a, g),
            Op::Relu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(self.val(*a).values())
                    .map(|(x, v)| if *v > 0.0 { *x } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Tanh(a) => {
                let y = node.value.values();
                let ga: Vec<f64> = g.iter().zip(y).map(|(x, t)| x * (1.0 - t * t)).collect();
                accumulate(grads, *a, &ga);
            }
            Op::Exp(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(node.value.values())
                    .map(|(x, e)| x * e)
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Sin(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(self.val(*a).values())
                    .map(|(x, v)| x * math::cos(*v))
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Cos(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(self.val(*a).values())
                    .map(|(x, v)| -x * math::sin(*v))
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Square(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(self.val(*a).values())
                    .map(|(x, v)| 2.0 * x * v)
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Abs(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(self.val(*a).values())
                    .map(|(x, v)| {
                        if *v > 0.0 {
                            *x
                        } else if *v < 0.0 {
                            -*x
                        } else {
                            0.0
                        }
                    })
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Powf(a, p) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(self.val(*a).values())
                    .map(|(x, v)| x * p * math::powf(*v, p - 1.0))
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::MulScalar(a, sc) => {
                if self.rg(*a) {
                    let c = self.val(*sc).item();
                    let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                    accumulate(grads, *a, &ga);
                }
                if self.rg(*sc) {
                    let gs: f64 = g
                        .iter()
                        .zip(self.val(*a).values())
                        .map(|(x, v)| x * v)
                        .sum();
                    accumulate(grads, *sc, &[gs]);
                }
            }
            Op::Sum(a) => {
                let ga = vec![g[0]; self.val(*a).len()];
                accumulate(grads, *a, &ga);
            }
            Op::Mean(a) => {
                let len = self.val(*a).len();
                let ga = vec![g[0] / len as f64; len];
                accumulate(grads, *a, &ga);
            }
            Op::Column(a, j) => {
                let (r, c) = self.val(*a).dims();
                let mut ga = vec![0.0; r * c];
                for (row, x) in g.iter().enumerate() {
                    ga[row * c + j] = *x;
                }
                accumulate(grads, *a, &ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts.iter() {
                    let c = self.val(p).cols();
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(m * c);
                        for row in g.chunks_exact(n) {
                            gp.extend_from_slice(&row[off..off + c]);
                        }
                        accumulate(grads, p, &gp);
                    }
                    off += c;
                }
            }
            Op::Kernel { a, b, bandwidths } => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let (ga, gb) = rbf_backward(
                    va,
                    vb,
                    &RbfMixture::new(bandwidths),
                    |_| 0..n,
                    |i, j| g[i * n + j],
                );
                if self.rg(*a) {
                    accumulate(grads, *a, &ga);
                }
                if self.rg(*b) {
                    accumulate(grads, *b, &gb);
                }
            }
            Op::KernelDot {
                a,
                b,
                bandwidths,
                weights,
            } => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let cols = vb.rows();
                let scale = g[0];
                let mix = RbfMixture::new(bandwidths);
                if a == b && weights.is_symmetric(cols) {
                    let ga = rbf_backward_self(va, &mix, |i, j| scale * weights.at(i, j, cols));
                    accumulate(grads, *a, &ga);
                    return;
                }
                let (ga, gb) = rbf_backward(
                    va,
                    vb,
                    &mix,
                    |i| weights.cols(i, cols),
                    |i, j| scale * weights.at(i, j, cols),
                );
                if self.rg(*a) {
                    accumulate(grads, *a, &ga);
                }
                if self.rg(*b) {
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Inverse(a) => {
                // dA = −A⁻ᵀ G A⁻ᵀ
                let inv = &node.value;
                let mut tmp = vec![0.0; m * n];
                gemm(m, m, m, inv.values(), true, g, false, &mut tmp, 0.0);
                let mut ga = vec![0.0; m * n];
                gemm(m, m, m, &tmp, false, inv.values(), true, &mut ga, 0.0);
                ga.iter_mut().for_each(|x| *x = -*x);
                accumulate(grads, *a, &ga);
            }
            Op::ScalarFn { input, grad } => {
                let ga: Vec<f64> = grad.values().iter().map(|x| x * g[0]).collect();
                accumulate(grads, *input, &ga);
            }
        }
    }

    fn acc_if(&self, grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
        if self.rg(i) {
            accumulate(grads, i, g);
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    match &mut grads[i] {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(e, x)| *e += x),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Per-entry weights of a [`Tape::kernel_dot`].
#[derive(Debug, Clone)]
pub enum KernelWeights {
    /// The same weight on every pair.
    Uniform(f64),
    /// An `n×m` weight matrix.
    Matrix(Tensor),
    /// Weights on the pairs `(i, i)` only; needs `n = m`.
    Diagonal(Vec<f64>),
}

impl KernelWeights {
    fn is_symmetric(&self, n: usize) -> bool {
        match self {
            Self::Uniform(_) => true,
            Self::Matrix(t) => {
                let v = t.values();
                t.dims() == (n, n)
                    && (0..n).all(|i| (i + 1..n).all(|j| v[i * n + j] == v[j * n + i]))
            }
            Self::Diagonal(_) => true,
        }
    }

    /// Columns of row `i` that may carry weight.
    #[inline]
    fn cols(&self, i: usize, m: usize) -> core::ops::Range<usize> {
        match self {
            Self::Diagonal(_) => i..i + 1,
            _ => 0..m,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize, m: usize) -> f64 {
        match self {
            Self::Uniform(w) => *w,
            Self::Matrix(t) => t.values()[i * m + j],
            Self::Diagonal(w) => {
                if i == j {
                    w[i]
                } else {
                    0.0
                }
            }
        }
    }
}

/// Evaluates `Σ_k exp(−d²/(2·bw_k²))` and `Σ_k exp(−d²/(2·bw_k²))/bw_k²`.
/// When every `(bw_max/bw_k)²` is a small integer (the usual ×2 ladder),
/// one exponential serves all terms through integer powers.
struct RbfMixture {
    coef: Vec<f64>,
    inv_bw2: Vec<f64>,
    /// Base coefficient of the widest bandwidth, and `(term, power step)`
    /// in ascending power order.
    ladder: Option<(f64, Vec<(usize, i32)>)>,
}

impl RbfMixture {
    fn new(bandwidths: &[f64]) -> Self {
        let coef = bandwidths.iter().map(|bw| -0.5 / (bw * bw)).collect();
        let inv_bw2 = bandwidths.iter().map(|bw| 1.0 / (bw * bw)).collect();
        let widest = bandwidths.iter().copied().fold(0.0, f64::max);
        let powers = (widest > 0.0)
            .then(|| {
                bandwidths
                    .iter()
                    .map(|bw| {
                        let r = (widest / bw) * (widest / bw);
                        let k = libm::round(r);
                        ((r - k).abs() < 1e-9 * k && (1.0..=1024.0).contains(&k))
                            .then_some(k as i32)
                    })
                    .collect::<Option<Vec<i32>>>()
            })
            .flatten();
        let ladder = powers.map(|p| {
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by_key(|&k| p[k]);
            let mut prev = 1;
            let steps = order
                .into_iter()
                .map(|k| {
                    let step = if p[k] % prev == 0 {
                        (k, p[k] / prev)
                    } else {
                        (k, -p[k])
                    };
                    prev = p[k];
                    step
                })
                .collect();
            (-0.5 / (widest * widest), steps)
        });
        Self {
            coef,
            inv_bw2,
            ladder,
        }
    }

    #[inline]
    fn terms(&self, d2: f64, mut f: impl FnMut(usize, f64)) {
        match &self.ladder {
            Some((c, steps)) => {
                let base = math::exp(c * d2);
                let mut cur = base;
                for &(k, step) in steps {
                    cur = if step > 0 {
                        powi(cur, step)
                    } else {
                        powi(base, -step)
                    };
                    f(k, cur);
                }
            }
            None => {
                for (k, c) in self.coef.iter().enumerate() {
                    f(k, math::exp(c * d2));
                }
            }
        }
    }

    #[inline]
    fn value(&self, d2: f64) -> f64 {
        let mut s = 0.0;
        self.terms(d2, |_, e| s += e);
        s
    }

    /// `Σ_k e_k / bw_k²`, the factor in `∂k/∂a = −(a − b)·slope`.
    #[inline]
    fn slope(&self, d2: f64) -> f64 {
        let mut s = 0.0;
        self.terms(d2, |k, e| s += e * self.inv_bw2[k]);
        s
    }
}

/// Gradient of `Σ_ij g_ij k(x_i, x_j)` for symmetric `g`, visiting each
/// unordered pair once.
fn rbf_backward_self(x: &Tensor, mix: &RbfMixture, g: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let (n, d) = x.dims();
    let mut gx = vec![0.0; n * d];
    for i in 0..n {
        let xi = x.row(i);
        for j in i + 1..n {
            let gij = g(i, j);
            if gij == 0.0 {
                continue;
            }
            let xj = x.row(j);
            let s = 2.0 * mix.slope(sq_dist(xi, xj)) * gij;
            for k in 0..d {
                let diff = xi[k] - xj[k];
                gx[i * d + k] -= s * diff;
                gx[j * d + k] += s * diff;
            }
        }
    }
    gx
}

#[inline]
fn powi(mut x: f64, mut p: i32) -> f64 {
    let mut acc = 1.0;
    while p > 0 {
        if p & 1 == 1 {
            acc *= x;
        }
        x *= x;
        p >>= 1;
    }
    acc
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// RBF mixture kernel matrix `Σ_bw exp(−‖a_i − b_j‖²/(2bw²))`.
pub fn rbf_kernel(a: &Tensor, b: &Tensor, bandwidths: &[f64]) -> Result<Tensor> {
    let (n, d) = a.dims();
    let (m, d2) = b.dims();
    if d != d2 {
        return Err(dim_err("kernel", d, d2));
    }
    let mix = RbfMixture::new(bandwidths);
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let ai = a.row(i);
        for j in 0..m {
            out.push(mix.value(sq_dist(ai, b.row(j))));
        }
    }
    Tensor::matrix(n, m, out)
}

/// Gradients of `Σ_ij g_ij k(a_i, b_j)` with respect to `a` and `b`.
/// `cols(i)` bounds the `j` visited for row `i`.
fn rbf_backward(
    a: &Tensor,
    b: &Tensor,
    mix: &RbfMixture,
    cols: impl Fn(usize) -> core::ops::Range<usize>,
    g: impl Fn(usize, usize) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = a.dims();
    let m = b.rows();
    let mut ga = vec![0.0; n * d];
    let mut gb = vec![0.0; m * d];
    for i in 0..n {
        let ai = a.row(i);
        for j in cols(i) {
            let gij = g(i, j);
            if gij == 0.0 {
                continue;
            }
            let bj = b.row(j);
            let s = mix.slope(sq_dist(ai, bj)) * gij;
            for k in 0..d {
                let diff = ai[k] - bj[k];
                ga[i * d + k] -= s * diff;
                gb[j * d + k] += s * diff;
            }
        }
    }
    (ga, gb)
}
