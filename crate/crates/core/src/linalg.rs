//! Thin glue over `faer` for the dense kernels the solvers need.
//!
//! Everything here runs with `Par::Seq`; faer is built without its rayon
//! feature, so every decomposition is bitwise reproducible for a given input.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatMut, MatRef, Par, Side};

use crate::error::{Error, Result};

pub(crate) fn view(data: &[f64], rows: usize, cols: usize) -> MatRef<'_, f64> {
    MatRef::from_column_major_slice(data, rows, cols)
}

pub(crate) fn view_mut(data: &mut [f64], rows: usize, cols: usize) -> MatMut<'_, f64> {
    MatMut::from_column_major_slice_mut(data, rows, cols)
}

/// `dst = lhs * rhs` (or `dst += lhs * rhs` with `accumulate`).
pub(crate) fn gemm(dst: MatMut<'_, f64>, lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>, accumulate: bool) {
    let beta = if accumulate { Accum::Add } else { Accum::Replace };
    matmul(dst, beta, lhs, rhs, 1.0, Par::Seq);
}

pub(crate) fn to_vec(m: MatRef<'_, f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Thin SVD `a = U diag(s) Vt` with singular values descending.
///
/// Sign convention: the largest-magnitude entry of every left singular vector
/// is nonnegative (ties broken by lowest row index); the matching row of `Vt`
/// is flipped with it.
pub(crate) struct ThinSvd {
    pub u: Mat<f64>,
    pub s: Vec<f64>,
    pub vt: Mat<f64>,
}

pub(crate) fn thin_svd(a: MatRef<'_, f64>) -> Result<ThinSvd> {
    let (m, n) = (a.nrows(), a.ncols());
    let k = m.min(n);
    if k == 0 {
        return Ok(ThinSvd {
            u: Mat::zeros(m, 0),
            s: Vec::new(),
            vt: Mat::zeros(0, n),
        });
    }
    let svd = a
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("svd did not converge: {e:?}")))?;
    let mut u = svd.U().to_owned();
    let v = svd.V();
    let s: Vec<f64> = (0..k).map(|i| svd.S()[i]).collect();
    let mut vt = v.transpose().to_owned();
    for c in 0..k {
        if leading_entry_negative(u.as_ref(), c) {
            for i in 0..m {
                u[(i, c)] = -u[(i, c)];
            }
            for j in 0..n {
                vt[(c, j)] = -vt[(c, j)];
            }
        }
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite singular values".into()));
    }
    Ok(ThinSvd { u, s, vt })
}

/// Full left singular basis (`m x m`), used when more vectors are requested
/// than the thin factorization provides.
pub(crate) fn full_left_singular(a: MatRef<'_, f64>) -> Result<(Mat<f64>, Vec<f64>)> {
    let svd = a
        .svd()
        .map_err(|e| Error::Numerical(format!("svd did not converge: {e:?}")))?;
    let mut u = svd.U().to_owned();
    let k = a.nrows().min(a.ncols());
    let s = (0..k).map(|i| svd.S()[i]).collect();
    for c in 0..u.ncols() {
        if leading_entry_negative(u.as_ref(), c) {
            for i in 0..u.nrows() {
                u[(i, c)] = -u[(i, c)];
            }
        }
    }
    Ok((u, s))
}

fn leading_entry_negative(u: MatRef<'_, f64>, col: usize) -> bool {
    let mut best = 0.0f64;
    let mut sign_neg = false;
    for i in 0..u.nrows() {
        let x = u[(i, col)];
        if x.abs() > best {
            best = x.abs();
            sign_neg = x < 0.0;
        }
    }
    sign_neg
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted
/// descending. Only the lower triangle is read.
pub(crate) fn sym_eig_desc(g: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = g.nrows();
    let evd = g
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let vals: Vec<f64> = (0..n).rev().map(|i| evd.S()[i]).collect();
    let src = evd.U();
    let mut vecs = Mat::zeros(n, n);
    for (dst, srcc) in (0..n).rev().enumerate() {
        for i in 0..n {
            vecs[(i, dst)] = src[(i, srcc)];
        }
    }
    if vals.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalues".into()));
    }
    Ok((vals, vecs))
}
