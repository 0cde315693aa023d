use crate::admm::{tt_rank_bound, TtRank};
use crate::error::{Error, Result};
use crate::linalg;
use crate::prox::RANK_TOL;
use crate::tensor::DenseTensor;

/// Tensor train: core `n` has dims `(R_{n-1}, I_n, R_n)` with `R_0 = R_N = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TTModel {
    dims: Vec<usize>,
    cores: Vec<DenseTensor>,
}

impl TTModel {
    /// Checks core shapes against `dims` and adjacent rank agreement.
    pub fn new(dims: Vec<usize>, cores: Vec<DenseTensor>) -> Result<Self> {
        if dims.len() < 2 || cores.len() != dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} cores for an order-{} tensor",
                cores.len(),
                dims.len()
            )));
        }
        let mut prev = 1;
        for (n, (core, &d)) in cores.iter().zip(&dims).enumerate() {
            let cd = core.dims();
            if cd.len() != 3 || cd[0] != prev || cd[1] != d || cd[2] == 0 {
                return Err(Error::ShapeMismatch(format!(
                    "core {} has dims {cd:?}, expected ({prev}, {d}, R)",
                    n + 1
                )));
            }
            prev = cd[2];
        }
        if prev != 1 {
            return Err(Error::ShapeMismatch(format!("last core has trailing rank {prev}")));
        }
        Ok(Self { dims, cores })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn into_cores(self) -> Vec<DenseTensor> {
        self.cores
    }

    /// `(R_1, …, R_{N-1})`.
    pub fn ranks(&self) -> Vec<usize> {
        self.cores[..self.cores.len() - 1].iter().map(|c| c.dims()[2]).collect()
    }

    /// `Σ R_{n-1} I_n R_n`.
    pub fn param_count(&self) -> usize {
        self.cores.iter().map(|c| c.len()).sum()
    }
}

enum Truncation<'a> {
    Tolerance(f64),
    Ranks(&'a [usize]),
}

/// TT-SVD with relative error budget `eps`: every step drops the longest
/// singular value tail whose energy stays within `(eps ‖x‖ / √(N−1))²`.
pub fn tt_svd_eps(x: &DenseTensor, eps: f64) -> Result<TTModel> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidInput(format!("eps must lie in (0, 1), got {eps}")));
    }
    if x.order() < 2 {
        return Err(Error::InvalidInput("TT-SVD needs order >= 2".into()));
    }
    let delta = eps * x.frobenius_norm() / ((x.order() - 1) as f64).sqrt();
    sweep(x, Truncation::Tolerance(delta))
}

/// TT-SVD truncated to `min(requested, available, numerical rank)` at every step.
pub fn tt_svd_ranks(x: &DenseTensor, ranks: &TtRank) -> Result<TTModel> {
    if ranks.ranks().len() + 1 != x.order() {
        return Err(Error::RankBound(format!(
            "{} TT ranks for an order-{} tensor",
            ranks.ranks().len(),
            x.order()
        )));
    }
    for (k, &r) in ranks.ranks().iter().enumerate() {
        let bound = tt_rank_bound(x.dims(), k + 1);
        if r == 0 || r > bound {
            return Err(Error::RankBound(format!("TT rank R_{} = {r} outside [1, {bound}]", k + 1)));
        }
    }
    sweep(x, Truncation::Ranks(ranks.ranks()))
}

fn sweep(x: &DenseTensor, trunc: Truncation<'_>) -> Result<TTModel> {
    let dims = x.dims();
    let order = dims.len();
    let mut carry = x.data().to_vec();
    let mut r_prev = 1;
    let mut cores = Vec::with_capacity(order);
    for k in 0..order - 1 {
        let rows = r_prev * dims[k];
        let cols = carry.len() / rows;
        let svd = linalg::thin_svd(linalg::view(&carry, rows, cols))?;
        let s = &svd.s;
        let numerical = s.iter().filter(|&&v| v > RANK_TOL * s[0]).count().max(1);
        let r = match trunc {
            Truncation::Tolerance(delta) => {
                // smallest r whose discarded tail energy is within delta²
                let mut tail = 0.0;
                let mut r = s.len();
                while r > 1 {
                    let next = tail + s[r - 1] * s[r - 1];
                    if next > delta * delta {
                        break;
                    }
                    tail = next;
                    r -= 1;
                }
                r
            }
            Truncation::Ranks(req) => req[k].min(s.len()).min(numerical),
        };
        let mut core = Vec::with_capacity(rows * r);
        for c in 0..r {
            core.extend((0..rows).map(|i| svd.u[(i, c)]));
        }
        cores.push(DenseTensor::from_parts(vec![r_prev, dims[k], r], core));
        let mut next = vec![0.0; r * cols];
        for j in 0..cols {
            for c in 0..r {
                next[c + r * j] = s[c] * svd.vt[(c, j)];
            }
        }
        carry = next;
        r_prev = r;
    }
    cores.push(DenseTensor::from_parts(vec![r_prev, dims[order - 1], 1], carry));
    TTModel::new(dims.to_vec(), cores)
}

/// Contracts the core chain left to right.
pub fn tt_reconstruct(m: &TTModel) -> DenseTensor {
    let mut acc = m.cores[0].data().to_vec();
    let mut rows = m.dims[0];
    for core in &m.cores[1..] {
        let cd = core.dims();
        let (r_in, width) = (cd[0], cd[1] * cd[2]);
        let mut next = vec![0.0; rows * width];
        linalg::gemm(
            linalg::view_mut(&mut next, rows, width),
            linalg::view(&acc, rows, r_in),
            linalg::view(core.data(), r_in, width),
            false,
        );
        acc = next;
        rows *= cd[1];
    }
    DenseTensor::from_parts(m.dims.clone(), acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{contracted_product, unfold_canonical};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> DenseTensor {
        DenseTensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    fn rel_err(a: &DenseTensor, b: &DenseTensor) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
    }

    fn synthetic_tt(rng: &mut ChaCha8Rng) -> DenseTensor {
        let g1 = random(vec![7, 2], rng);
        let g2 = random(vec![2, 8, 3], rng);
        let g3 = random(vec![3, 9], rng);
        contracted_product(&contracted_product(&g1, &g2).unwrap(), &g3).unwrap()
    }

    fn numerical_rank(t: &DenseTensor, k: usize) -> usize {
        let m = unfold_canonical(t, k).unwrap();
        let s = linalg::thin_svd(m.as_faer()).unwrap().s;
        s.iter().filter(|&&v| v > 1e-10 * s[0]).count()
    }

    #[test]
    fn exact_tt_rank_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = synthetic_tt(&mut rng);
        let m = tt_svd_eps(&x, 1e-8).unwrap();
        assert_eq!(m.ranks(), vec![2, 3]);
        assert!(rel_err(&tt_reconstruct(&m), &x) <= 1e-8);
        let m = tt_svd_ranks(&x, &TtRank::new(vec![2, 3], x.dims()).unwrap()).unwrap();
        assert!(rel_err(&tt_reconstruct(&m), &x) <= 1e-10);
    }

    #[test]
    fn lossless_limit_keeps_full_ranks() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random(vec![4, 5, 6], &mut rng);
        let m = tt_svd_eps(&x, 1e-14).unwrap();
        assert_eq!(m.ranks(), vec![numerical_rank(&x, 1), numerical_rank(&x, 2)]);
        assert!(rel_err(&tt_reconstruct(&m), &x) <= 1e-10);
    }

    #[test]
    fn eps_bound_on_random_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random(vec![10, 10, 10], &mut rng);
        let m = tt_svd_eps(&x, 0.1).unwrap();
        assert!(rel_err(&tt_reconstruct(&m), &x) <= 0.1);
        assert!(tt_svd_eps(&x, 0.0).is_err());
        assert!(tt_svd_eps(&x, 1.0).is_err());
    }

    #[test]
    fn full_rank_request_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random(vec![3, 4, 5, 2], &mut rng);
        let ranks = (1..4).map(|k| tt_rank_bound(x.dims(), k)).collect();
        let m = tt_svd_ranks(&x, &TtRank::new(ranks, x.dims()).unwrap()).unwrap();
        assert!(rel_err(&tt_reconstruct(&m), &x) <= 1e-10);
    }

    #[test]
    fn rank_one_matches_eps_mode_at_same_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let noise = random(vec![5, 6, 7], &mut rng);
        let x = DenseTensor::from_fn(vec![5, 6, 7], |i| {
            (1.0 + i[0] as f64) * (2.0 - i[1] as f64 * 0.3) * (0.5 + i[2] as f64) + 0.01 * noise.get(i)
        })
        .unwrap();
        let by_rank = tt_svd_ranks(&x, &TtRank::new(vec![1, 1], x.dims()).unwrap()).unwrap();
        // budget that truncates both steps to rank 1
        let by_eps = tt_svd_eps(&x, 0.5).unwrap();
        assert_eq!(by_eps.ranks(), vec![1, 1]);
        let a = tt_reconstruct(&by_rank);
        let b = tt_reconstruct(&by_eps);
        assert!(rel_err(&a, &b) <= 1e-12);
    }

    #[test]
    fn matrix_case_is_matrix_product() {
        let a = DenseTensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = DenseTensor::new(vec![2, 3, 1], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let m = TTModel::new(vec![2, 3], vec![a, b]).unwrap();
        // [[1,3],[2,4]] * [[1,0,1],[0,1,1]]
        assert_eq!(tt_reconstruct(&m).data(), &[1.0, 2.0, 3.0, 4.0, 4.0, 6.0]);
        assert_eq!(m.param_count(), 10);
    }

    #[test]
    fn all_ones_rank_one_chain() {
        let cores = vec![
            DenseTensor::new(vec![1, 2, 1], vec![1.0; 2]).unwrap(),
            DenseTensor::new(vec![1, 3, 1], vec![1.0; 3]).unwrap(),
            DenseTensor::new(vec![1, 4, 1], vec![1.0; 4]).unwrap(),
        ];
        let m = TTModel::new(vec![2, 3, 4], cores).unwrap();
        assert!(tt_reconstruct(&m).data().iter().all(|&v| v == 1.0));
        assert_eq!(m.ranks(), vec![1, 1]);
    }

    #[test]
    fn model_validation() {
        let c = |d: Vec<usize>| DenseTensor::zeros(d).unwrap();
        assert!(TTModel::new(vec![2, 3], vec![c(vec![1, 2, 2]), c(vec![3, 3, 1])]).is_err());
        assert!(TTModel::new(vec![2, 3], vec![c(vec![1, 2, 2]), c(vec![2, 3, 2])]).is_err());
        assert!(TTModel::new(vec![2, 3], vec![c(vec![2, 2, 2]), c(vec![2, 3, 1])]).is_err());
    }

    #[test]
    fn requested_rank_clamps_to_numerical_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = synthetic_tt(&mut rng);
        let m = tt_svd_ranks(&x, &TtRank::new(vec![5, 6], x.dims()).unwrap()).unwrap();
        assert_eq!(m.ranks(), vec![2, 3]);
        let z = DenseTensor::zeros(vec![3, 3, 3]).unwrap();
        let m = tt_svd_ranks(&z, &TtRank::new(vec![2, 2], z.dims()).unwrap()).unwrap();
        assert_eq!(m.ranks(), vec![1, 1]);
        assert!(tt_reconstruct(&m).data().iter().all(|&v| v == 0.0));
    }
}
