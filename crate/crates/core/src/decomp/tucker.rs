use crate::admm::MlRank;
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{mode_apply, mode_gram, mode_n_product, unfold_mode_n, DenseMatrix, DenseTensor, ModeView};

/// Tucker model: `core ×_1 A_1 ×_2 A_2 … ×_N A_N` with orthonormal factors.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerModel {
    core: DenseTensor,
    factors: Vec<DenseMatrix>,
}

impl TuckerModel {
    /// Checks that factor `n` is `I_n x R_n` with `R_n` the core's `n`-th
    /// dimension and `R_n <= I_n`. Orthonormality is not checked here.
    pub fn new(core: DenseTensor, factors: Vec<DenseMatrix>) -> Result<Self> {
        if factors.len() != core.order() {
            return Err(Error::ShapeMismatch(format!(
                "{} factors for an order-{} core",
                factors.len(),
                core.order()
            )));
        }
        for (n, (f, &r)) in factors.iter().zip(core.dims()).enumerate() {
            if f.cols() != r || f.rows() < r {
                return Err(Error::ShapeMismatch(format!(
                    "factor {} is {}x{}, core rank is {r}",
                    n + 1,
                    f.rows(),
                    f.cols()
                )));
            }
        }
        Ok(Self { core, factors })
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn factors(&self) -> &[DenseMatrix] {
        &self.factors
    }

    pub fn into_parts(self) -> (DenseTensor, Vec<DenseMatrix>) {
        (self.core, self.factors)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.rows()).collect()
    }

    pub fn ranks(&self) -> &[usize] {
        self.core.dims()
    }

    /// `∏ R_n + Σ I_n R_n`.
    pub fn param_count(&self) -> usize {
        self.core.len() + self.factors.iter().map(|f| f.rows() * f.cols()).sum::<usize>()
    }
}

/// Per-sweep record of a HOOI run. Entry 0 is the HOSVD initialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TuckerTrace {
    /// `‖G‖_F / ‖X‖_F`, the captured norm fraction (1 for a zero input).
    pub fit: Vec<f64>,
    /// `max_n max |A_nᵀ A_n − I|`.
    pub orthonormality: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// HOOI with HOSVD initialization.
pub fn tucker_als(x: &DenseTensor, ranks: &MlRank, tol: f64, max_sweeps: usize) -> Result<TuckerModel> {
    tucker_als_with_trace(x, ranks, tol, max_sweeps).map(|(m, _)| m)
}

pub fn tucker_als_with_trace(
    x: &DenseTensor,
    ranks: &MlRank,
    tol: f64,
    max_sweeps: usize,
) -> Result<(TuckerModel, TuckerTrace)> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidConfig(format!("tol must be positive, got {tol}")));
    }
    let r = ranks.ranks();
    if r.len() != x.order() {
        return Err(Error::RankBound(format!("{} ranks for an order-{} tensor", r.len(), x.order())));
    }
    for (n, (&rn, &d)) in r.iter().zip(x.dims()).enumerate() {
        if rn == 0 || rn > d {
            return Err(Error::RankBound(format!("multilinear rank R_{} = {rn} outside [1, {d}]", n + 1)));
        }
    }
    let order = x.order();
    let x_norm = x.frobenius_norm();
    let fit_of = |g: &DenseTensor| if x_norm > 0.0 { g.frobenius_norm() / x_norm } else { 1.0 };

    let mut factors: Vec<DenseMatrix> = (0..order)
        .map(|n| hosvd_factor(x, n, r[n]))
        .collect::<Result<_>>()?;
    let mut core = project_all(x, &factors, None)?;
    let mut trace = TuckerTrace::default();
    trace.fit.push(fit_of(&core));
    trace.orthonormality.push(orthonormality(&factors));

    while trace.sweeps < max_sweeps {
        for n in 0..order {
            let y = project_all(x, &factors, Some(n))?;
            factors[n] = leading_left(&unfold_mode_n(&y, n + 1)?, r[n])?;
            if n == order - 1 {
                core = mode_n_product(&y, &factors[n].transpose(), n + 1)?;
            }
        }
        trace.sweeps += 1;
        let fit = fit_of(&core);
        let prev = *trace.fit.last().unwrap();
        trace.fit.push(fit);
        trace.orthonormality.push(orthonormality(&factors));
        log::debug!("hooi sweep {} fit {fit:.12}", trace.sweeps);
        if (fit - prev).abs() < tol * prev.max(f64::MIN_POSITIVE) {
            trace.converged = true;
            break;
        }
    }
    Ok((TuckerModel::new(core, factors)?, trace))
}

/// `x ×_m A_mᵀ` over every mode `m` except `skip`, contracting the modes
/// with the largest size reduction first.
fn project_all(x: &DenseTensor, factors: &[DenseMatrix], skip: Option<usize>) -> Result<DenseTensor> {
    let mut modes: Vec<usize> = (0..x.order()).filter(|&m| Some(m) != skip).collect();
    modes.sort_by(|&a, &b| {
        let ra = factors[a].cols() as f64 / factors[a].rows() as f64;
        let rb = factors[b].cols() as f64 / factors[b].rows() as f64;
        ra.total_cmp(&rb).then(a.cmp(&b))
    });
    let mut y = x.clone();
    for m in modes {
        let v = ModeView::around(y.dims(), m);
        let data = mode_apply(y.data(), v, factors[m].as_faer().transpose());
        let mut dims = y.dims().to_vec();
        dims[m] = factors[m].cols();
        y = DenseTensor::from_parts(dims, data);
    }
    Ok(y)
}

/// Leading `r` left singular vectors of the mode-`n` unfolding, from the
/// Gram eigendecomposition (HOOI refines them with full-accuracy SVDs).
fn hosvd_factor(x: &DenseTensor, n: usize, r: usize) -> Result<DenseMatrix> {
    let v = ModeView::around(x.dims(), n);
    if v.other() <= 4 * v.mid || v.len() <= 1 << 16 {
        return leading_left(&unfold_mode_n(x, n + 1)?, r);
    }
    let gram = mode_gram(x.data(), v);
    let (_, vecs) = linalg::sym_eig_desc(gram.as_ref())?;
    let mut out = DenseMatrix::from_faer(vecs.as_ref().subcols(0, r));
    fix_signs(&mut out);
    Ok(out)
}

fn fix_signs(a: &mut DenseMatrix) {
    let (rows, cols) = a.shape();
    let mut data = std::mem::replace(a, DenseMatrix::zeros(0, 0)).into_data();
    for c in 0..cols {
        let col = &mut data[c * rows..(c + 1) * rows];
        let lead = col.iter().copied().fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
        if lead < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
    }
    *a = DenseMatrix::from_parts(rows, cols, data);
}

fn leading_left(m: &DenseMatrix, r: usize) -> Result<DenseMatrix> {
    let u = if r <= m.rows().min(m.cols()) {
        linalg::thin_svd(m.as_faer())?.u
    } else {
        linalg::full_left_singular(m.as_faer())?.0
    };
    Ok(DenseMatrix::from_faer(u.as_ref().subcols(0, r)))
}

fn orthonormality(factors: &[DenseMatrix]) -> f64 {
    let mut worst = 0.0f64;
    for f in factors {
        let g = f.transpose().matmul(f).expect("conformant");
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - target).abs());
            }
        }
    }
    worst
}

/// `core ×_1 A_1 … ×_N A_N`.
pub fn tucker_reconstruct(m: &TuckerModel) -> DenseTensor {
    let mut y = m.core.clone();
    for (n, f) in m.factors.iter().enumerate() {
        y = mode_n_product(&y, f, n + 1).expect("validated model");
    }
    y
}
