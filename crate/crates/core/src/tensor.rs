//! Dense N-way tensors stored column-major (first index varies fastest),
//! the two matricization schemes, and tensor products.
//!
//! Mode and split indices are 1-based at the public API. With column-major
//! storage the canonical unfolding `X_[k]` is a pure reshape of the flat
//! buffer, and `X_(n)` is a block transpose.

use faer::MatRef;

use crate::error::{Error, Result};
use crate::linalg;

/// N-way real array, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

/// Real matrix, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::InvalidInput("tensor order must be at least 1".into()));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidInput(format!("zero-length dimension in {dims:?}")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidInput(format!("element count of {dims:?} overflows")))
}

impl DenseTensor {
    /// Builds a tensor from column-major data, rejecting NaN/Inf.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_dims(&dims)?;
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} need {len} elements, got {}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("tensor data"));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = check_dims(&dims)?;
        Ok(Self {
            dims,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every 0-based multi-index.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_dims(&dims)?;
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for (i, d) in idx.iter_mut().zip(&dims) {
                *i += 1;
                if *i < *d {
                    break;
                }
                *i = 0;
            }
        }
        Self::new(dims, data)
    }

    /// Internal constructor for buffers produced by finite arithmetic.
    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Linear offset of a 0-based multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        let mut stride = 1;
        for (&i, &d) in idx.iter().zip(&self.dims) {
            off += i * stride;
            stride *= d;
        }
        off
    }

    /// Element at a 0-based multi-index.
    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self::from_parts(self.dims.clone(), data))
    }

    pub fn scale(&self, c: f64) -> DenseTensor {
        Self::from_parts(self.dims.clone(), self.data.iter().map(|x| x * c).collect())
    }
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!("matrix shape {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix data"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major nested slices (handy in tests).
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        let data = (0..c).flat_map(|j| rows.iter().map(move |row| row[j])).collect();
        Self::new(r, c, data)
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    pub(crate) fn from_faer(m: MatRef<'_, f64>) -> Self {
        Self::from_parts(m.nrows(), m.ncols(), linalg::to_vec(m))
    }

    pub(crate) fn as_faer(&self) -> MatRef<'_, f64> {
        linalg::view(&self.data, self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i + self.rows * j]
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = vec![0.0; self.rows * rhs.cols];
        linalg::gemm(
            linalg::view_mut(&mut out, self.rows, rhs.cols),
            self.as_faer(),
            rhs.as_faer(),
            false,
        );
        Ok(DenseMatrix::from_parts(self.rows, rhs.cols, out))
    }

    pub fn frobenius_norm(&self) -> f64 {
        sum_sq(&self.data).sqrt()
    }
}

fn sum_sq(data: &[f64]) -> f64 {
    data.iter().map(|x| x * x).sum()
}

/// `(left, mid, right)` factorization of a tensor around one mode: the flat
/// index of `(l, i, r)` is `l + left * (i + mid * r)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ModeView {
    pub left: usize,
    pub mid: usize,
    pub right: usize,
}

impl ModeView {
    /// View around 0-based mode `n`.
    pub fn around(dims: &[usize], n: usize) -> Self {
        Self {
            left: dims[..n].iter().product(),
            mid: dims[n],
            right: dims[n + 1..].iter().product(),
        }
    }

    /// The canonical split `X_[k]` (rows = modes `..k`), expressed with the
    /// smaller matrix side as `mid` so Gram matrices stay small.
    pub fn canonical_small_side(dims: &[usize], k: usize) -> Self {
        let rows: usize = dims[..k].iter().product();
        let cols: usize = dims[k..].iter().product();
        if rows <= cols {
            Self { left: 1, mid: rows, right: cols }
        } else {
            Self { left: rows, mid: cols, right: 1 }
        }
    }

    pub fn len(&self) -> usize {
        self.left * self.mid * self.right
    }

    /// Number of columns of the `mid x (left*right)` unfolding.
    pub fn other(&self) -> usize {
        self.left * self.right
    }
}

/// Gram matrix `A A^T` of the `mid x (left*right)` unfolding of `data`.
pub(crate) fn mode_gram(data: &[f64], v: ModeView) -> faer::Mat<f64> {
    let mut g = faer::Mat::<f64>::zeros(v.mid, v.mid);
    if v.left == 1 {
        let a = linalg::view(data, v.mid, v.right);
        linalg::gemm(g.as_mut(), a, a.transpose(), false);
    } else {
        let slab = v.left * v.mid;
        for r in 0..v.right {
            let s = linalg::view(&data[r * slab..(r + 1) * slab], v.left, v.mid);
            linalg::gemm(g.as_mut(), s.transpose(), s, r > 0);
        }
    }
    g
}

/// Applies `b` (`j x mid`) along the `mid` axis: the result has layout
/// `(left, j, right)` and equals `fold(b * unfold(data))`.
pub(crate) fn mode_apply(data: &[f64], v: ModeView, b: MatRef<'_, f64>) -> Vec<f64> {
    let j = b.nrows();
    debug_assert_eq!(b.ncols(), v.mid);
    let mut out = vec![0.0; v.left * j * v.right];
    if v.left == 1 {
        let a = linalg::view(data, v.mid, v.right);
        linalg::gemm(linalg::view_mut(&mut out, j, v.right), b, a, false);
    } else {
        let slab_in = v.left * v.mid;
        let slab_out = v.left * j;
        for r in 0..v.right {
            let s = linalg::view(&data[r * slab_in..(r + 1) * slab_in], v.left, v.mid);
            let o = linalg::view_mut(&mut out[r * slab_out..(r + 1) * slab_out], v.left, j);
            linalg::gemm(o, s, b.transpose(), false);
        }
    }
    out
}

fn check_mode(order: usize, n: usize) -> Result<usize> {
    if n == 0 || n > order {
        return Err(Error::ModeOutOfRange { mode: n, order });
    }
    Ok(n - 1)
}

/// Mode-`n` unfolding `X_(n)` (1-based `n`): an `I_n x prod(I_m, m != n)`
/// matrix whose column index runs over the remaining modes in increasing
/// order, lowest mode fastest.
pub fn unfold_mode_n(t: &DenseTensor, n: usize) -> Result<DenseMatrix> {
    let n0 = check_mode(t.order(), n)?;
    let v = ModeView::around(&t.dims, n0);
    let cols = v.other();
    let mut out = vec![0.0; t.len()];
    for r in 0..v.right {
        for i in 0..v.mid {
            let src = &t.data[v.left * (i + v.mid * r)..v.left * (i + v.mid * r + 1)];
            for (l, &x) in src.iter().enumerate() {
                out[i + v.mid * (l + v.left * r)] = x;
            }
        }
    }
    Ok(DenseMatrix::from_parts(v.mid, cols, out))
}

/// Inverse of [`unfold_mode_n`].
pub fn fold_mode_n(m: &DenseMatrix, dims: &[usize], n: usize) -> Result<DenseTensor> {
    let len = check_dims(dims)?;
    let n0 = check_mode(dims.len(), n)?;
    let v = ModeView::around(dims, n0);
    if m.rows != v.mid || m.cols != v.other() || m.data.len() != len {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} matrix cannot fold to {dims:?} along mode {n}",
            m.rows, m.cols
        )));
    }
    let mut out = vec![0.0; len];
    for r in 0..v.right {
        for i in 0..v.mid {
            let dst = &mut out[v.left * (i + v.mid * r)..v.left * (i + v.mid * r + 1)];
            for (l, y) in dst.iter_mut().enumerate() {
                *y = m.data[i + v.mid * (l + v.left * r)];
            }
        }
    }
    Ok(DenseTensor::from_parts(dims.to_vec(), out))
}

/// Canonical unfolding `X_[k]` (1 <= k <= N-1): shape
/// `(I_1...I_k) x (I_{k+1}...I_N)` over the unchanged flat buffer.
pub fn unfold_canonical(t: &DenseTensor, k: usize) -> Result<DenseMatrix> {
    let order = t.order();
    if k == 0 || k >= order {
        return Err(Error::ModeOutOfRange { mode: k, order });
    }
    let rows: usize = t.dims[..k].iter().product();
    let cols = t.len() / rows;
    Ok(DenseMatrix::from_parts(rows, cols, t.data.clone()))
}

/// Inverse of [`unfold_canonical`].
pub fn fold_canonical(m: &DenseMatrix, dims: &[usize], k: usize) -> Result<DenseTensor> {
    let len = check_dims(dims)?;
    if k == 0 || k >= dims.len() {
        return Err(Error::ModeOutOfRange { mode: k, order: dims.len() });
    }
    let rows: usize = dims[..k].iter().product();
    if m.rows != rows || m.data.len() != len {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} matrix cannot fold to {dims:?} at split {k}",
            m.rows, m.cols
        )));
    }
    Ok(DenseTensor::from_parts(dims.to_vec(), m.data.clone()))
}

/// Mode-`n` product `a x_n b` with `b` of shape `J x I_n`.
pub fn mode_n_product(a: &DenseTensor, b: &DenseMatrix, n: usize) -> Result<DenseTensor> {
    let n0 = check_mode(a.order(), n)?;
    if b.cols != a.dims[n0] {
        return Err(Error::ShapeMismatch(format!(
            "matrix with {} columns applied to mode {n} of size {}",
            b.cols, a.dims[n0]
        )));
    }
    let v = ModeView::around(&a.dims, n0);
    let out = mode_apply(&a.data, v, b.as_faer());
    let mut dims = a.dims.clone();
    dims[n0] = b.rows;
    Ok(DenseTensor::from_parts(dims, out))
}

/// Contracted product over the last mode of `a` and the first mode of `b`.
pub fn contracted_product(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let shared = *a.dims.last().expect("order >= 1");
    if shared != b.dims[0] {
        return Err(Error::ShapeMismatch(format!(
            "cannot contract {:?} with {:?}",
            a.dims, b.dims
        )));
    }
    let rows = a.len() / shared;
    let cols = b.len() / shared;
    let mut out = vec![0.0; rows * cols];
    linalg::gemm(
        linalg::view_mut(&mut out, rows, cols),
        linalg::view(&a.data, rows, shared),
        linalg::view(&b.data, shared, cols),
        false,
    );
    let mut dims: Vec<usize> = a.dims[..a.order() - 1].to_vec();
    dims.extend_from_slice(&b.dims[1..]);
    if dims.is_empty() {
        dims.push(1);
    }
    Ok(DenseTensor::from_parts(dims, out))
}

pub fn frobenius_norm(t: &DenseTensor) -> f64 {
    sum_sq(&t.data).sqrt()
}
