//! Dense decompositions, delegated to `nalgebra`.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{dim_err, Error, Result};
use crate::tensorcore::{gemm, Tensor};

fn to_na(t: &Tensor) -> DMatrix<f64> {
    let (r, c) = t.dims();
    DMatrix::from_row_slice(r, c, t.values())
}

fn from_na(m: &DMatrix<f64>) -> Tensor {
    Tensor::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn square(t: &Tensor, context: &str) -> Result<usize> {
    let (r, c) = t.dims();
    if r != c {
        return Err(dim_err(context, (r, r), (r, c)));
    }
    Ok(r)
}

/// Inverse by LU with partial pivoting.
pub fn inverse(a: &Tensor) -> Result<Tensor> {
    square(a, "inverse")?;
    let lu = to_na(a).lu();
    lu.try_inverse()
        .map(|m| from_na(&m))
        .ok_or_else(|| Error::Singular(format!("{}x{} LU has a zero pivot", a.rows(), a.cols())))
}

/// Solves `a · x = b` for every column of `b`.
pub fn solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = square(a, "solve")?;
    if b.rows() != n {
        return Err(dim_err("solve", n, b.rows()));
    }
    to_na(a)
        .lu()
        .solve(&to_na(b))
        .map(|m| from_na(&m))
        .ok_or_else(|| Error::Singular(format!("{n}x{n} system")))
}

/// `(K + λI)⁻¹ K (K + λI)⁻¹` for symmetric positive semi-definite `K`.
///
/// Computed with two Cholesky solves and symmetrized.
/// Inverse of a symmetric positive-definite row-major `n×n` matrix through
/// its Cholesky factor, or `None` when a pivot is not positive.
pub fn spd_inverse(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = alloc::vec![0.0; n * n];
    for j in 0..n {
        let (row_j, below) = l[j * n..].split_at_mut(n);
        let mut d = a[j * n + j];
        for x in &row_j[..j] {
            d -= x * x;
        }
        if !(d > 0.0) {
            return None;
        }
        let d = crate::math::sqrt(d);
        row_j[j] = d;
        for (r, row_i) in below.chunks_exact_mut(n).enumerate() {
            let i = j + 1 + r;
            let dot: f64 = row_i[..j].iter().zip(&row_j[..j]).map(|(x, y)| x * y).sum();
            row_i[j] = (a[i * n + j] - dot) / d;
        }
    }
    // M = L⁻¹ by forward substitution, row by row.
    let mut m = alloc::vec![0.0; n * n];
    for i in 0..n {
        let (done, rest) = m.split_at_mut(i * n);
        let mi = &mut rest[..n];
        mi[i] = 1.0;
        for k in 0..i {
            let c = l[i * n + k];
            if c != 0.0 {
                let mk = &done[k * n..k * n + k + 1];
                for (x, y) in mi[..=k].iter_mut().zip(mk) {
                    *x -= c * y;
                }
            }
        }
        let inv_d = 1.0 / l[i * n + i];
        mi[..=i].iter_mut().for_each(|x| *x *= inv_d);
    }
    let mut out = alloc::vec![0.0; n * n];
    gemm(n, n, n, &m, true, &m, false, &mut out, 0.0);
    Some(out)
}

/// `(K + λI)⁻¹ K (K + λI)⁻¹`, symmetrized.
pub fn regularized_sandwich(k: &Tensor, lambda: f64) -> Result<Tensor> {
    let n = square(k, "regularized_sandwich")?;
    let mut reg = k.values().to_vec();
    for i in 0..n {
        reg[i * n + i] += lambda;
    }
    let inv = spd_inverse(&reg, n).ok_or_else(|| {
        Error::KernelSolve(format!(
            "Cholesky of {n}x{n} kernel failed at λ={lambda}; increase lambda_reg"
        ))
    })?;
    // K = K̃ − λI, so K̃⁻¹ K K̃⁻¹ = B − λB² with B = K̃⁻¹.
    let b: Vec<f64> = (0..n * n)
        .map(|ij| 0.5 * (inv[ij] + inv[(ij % n) * n + ij / n]))
        .collect();
    let mut out = alloc::vec![0.0; n * n];
    gemm(n, n, n, &b, false, &b, false, &mut out, 0.0);
    for (o, bij) in out.iter_mut().zip(&b) {
        *o = bij - lambda * *o;
    }
    let t = Tensor::matrix(n, n, out)?;
    if !t.is_finite() {
        return Err(Error::KernelSolve(format!(
            "non-finite solve at λ={lambda}; increase lambda_reg"
        )));
    }
    Ok(t)
}
