//! ADMM solvers for low TT rank and low multilinear rank tensor denoising.
//!
//! Both solvers split the tensor into one copy per unfolding (`M_k`),
//! threshold the singular values of each copy with a Schatten-p rule, update
//! the scaled multipliers, and average the folded copies back into the
//! running estimate `Z`. They differ only in the matricization scheme and
//! the weights.
//!
//! The penalty grows as `μ ← min(ρμ, μ_max)`. The iteration stops when
//! `‖Z^{l+1} − Z^l‖_F / ‖X‖_F ≤ ε_r` or after `itmax` iterations.

use crate::error::{Error, Result};
use crate::prox::{svt_unfolding, SpNorm};
use crate::tensor::{DenseTensor, ModeView};

/// Solver parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmConfig {
    /// Initial penalty `μ⁰`.
    pub mu0: f64,
    /// Penalty cap.
    pub mu_max: f64,
    /// Penalty growth factor, `> 1`.
    pub rho: f64,
    /// Relative-change stopping threshold.
    pub eps_r: f64,
    pub itmax: usize,
    pub norm: SpNorm,
}

impl AdmmConfig {
    pub const DEFAULT_RHO: f64 = 1.1;
    pub const DEFAULT_EPS_TT: f64 = 0.001;
    pub const DEFAULT_EPS_ML: f64 = 0.003;
    pub const DEFAULT_ITMAX: usize = 100;

    /// Defaults of the TT solver: `ρ = 1.1`, `ε_r = 0.001`, `itmax = 100`.
    pub fn tt(norm: SpNorm, mu0: f64, mu_max: f64) -> Self {
        Self {
            mu0,
            mu_max,
            rho: Self::DEFAULT_RHO,
            eps_r: Self::DEFAULT_EPS_TT,
            itmax: Self::DEFAULT_ITMAX,
            norm,
        }
    }

    /// Defaults of the ML solver: as [`AdmmConfig::tt`] but `ε_r = 0.003`.
    pub fn ml(norm: SpNorm, mu0: f64, mu_max: f64) -> Self {
        Self {
            eps_r: Self::DEFAULT_EPS_ML,
            ..Self::tt(norm, mu0, mu_max)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.mu0) || !positive(self.mu_max) {
            return Err(Error::InvalidConfig(format!(
                "penalties must be positive and finite (mu0 = {}, mu_max = {})",
                self.mu0, self.mu_max
            )));
        }
        if self.mu0 > self.mu_max {
            return Err(Error::InvalidConfig(format!(
                "mu0 = {} exceeds mu_max = {}",
                self.mu0, self.mu_max
            )));
        }
        if !(self.rho > 1.0 && self.rho.is_finite()) {
            return Err(Error::InvalidConfig(format!("rho must exceed 1, got {}", self.rho)));
        }
        if !positive(self.eps_r) {
            return Err(Error::InvalidConfig(format!("eps_r must be positive, got {}", self.eps_r)));
        }
        if self.itmax == 0 {
            return Err(Error::InvalidConfig("itmax must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-run record of the iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdmmTrace {
    pub iterations: usize,
    /// `‖Z^{l+1} − Z^l‖_F / ‖X‖_F` for every iteration.
    pub rel_change: Vec<f64>,
    pub converged: bool,
    /// Penalty in force when the loop ended.
    pub mu_final: f64,
    /// Penalty used by each iteration.
    pub mu: Vec<f64>,
    /// `‖Z^{l+1}‖_F` for every iteration.
    pub z_norm: Vec<f64>,
    /// Per subproblem, `‖unfold_k(Z) − M_k‖_F / ‖X‖_F` after the last iteration.
    pub primal_residual: Vec<f64>,
}

/// Multilinear rank `(R_1, …, R_N)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MlRank(Vec<usize>);

impl MlRank {
    /// Validates `1 <= R_n <= min(I_n, prod_{m != n} I_m)`.
    pub fn new(ranks: Vec<usize>, dims: &[usize]) -> Result<Self> {
        if ranks.len() != dims.len() {
            return Err(Error::RankBound(format!(
                "{} ranks for an order-{} tensor",
                ranks.len(),
                dims.len()
            )));
        }
        let total: usize = dims.iter().product();
        for (n, (&r, &d)) in ranks.iter().zip(dims).enumerate() {
            let bound = d.min(total / d);
            if r == 0 || r > bound {
                return Err(Error::RankBound(format!(
                    "multilinear rank R_{} = {r} outside [1, {bound}]",
                    n + 1
                )));
            }
        }
        Ok(Self(ranks))
    }

    pub fn ranks(&self) -> &[usize] {
        &self.0
    }
}

/// Tensor-train rank `(R_1, …, R_{N-1})`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TtRank(Vec<usize>);

impl TtRank {
    /// Validates `1 <= R_k <= min(prod_{l<=k} I_l, prod_{l>k} I_l)`.
    pub fn new(ranks: Vec<usize>, dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || ranks.len() != dims.len() - 1 {
            return Err(Error::RankBound(format!(
                "{} TT ranks for an order-{} tensor",
                ranks.len(),
                dims.len()
            )));
        }
        for (k, &r) in ranks.iter().enumerate() {
            let bound = tt_rank_bound(dims, k + 1);
            if r == 0 || r > bound {
                return Err(Error::RankBound(format!("TT rank R_{} = {r} outside [1, {bound}]", k + 1)));
            }
        }
        Ok(Self(ranks))
    }

    pub fn ranks(&self) -> &[usize] {
        &self.0
    }
}

/// Largest admissible TT rank at split `k` (1-based).
pub fn tt_rank_bound(dims: &[usize], k: usize) -> usize {
    let left: usize = dims[..k].iter().product();
    let right: usize = dims[k..].iter().product();
    left.min(right)
}

/// Ranks of the final `M_k` of the ML solver. A zero output gives all-zero
/// ranks, flagged by `all_zero`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlRankEstimate {
    pub ranks: Vec<usize>,
    pub all_zero: bool,
}

impl MlRankEstimate {
    /// Converts to a valid [`MlRank`], lifting zero entries to 1.
    pub fn to_ml_rank(&self, dims: &[usize]) -> Result<MlRank> {
        MlRank::new(self.ranks.iter().map(|&r| r.max(1)).collect(), dims)
    }
}

fn normalize(beta: Vec<f64>) -> Vec<f64> {
    let total: f64 = beta.iter().sum();
    beta.into_iter().map(|b| b / total).collect()
}

/// TT weights `α_k = β_k / Σβ`, `β_k = min(prod_{l<=k} I_l, prod_{l>k} I_l)`.
pub fn tt_weights(dims: &[usize]) -> Result<Vec<f64>> {
    if dims.len() < 2 {
        return Err(Error::InvalidInput("TT weights need order >= 2".into()));
    }
    Ok(normalize((1..dims.len()).map(|k| tt_rank_bound(dims, k) as f64).collect()))
}

/// ML weights `δ_k = γ_k / Σγ`, `γ_k = min(I_k, prod_{l != k} I_l)`.
pub fn ml_weights(dims: &[usize]) -> Result<Vec<f64>> {
    if dims.len() < 2 {
        return Err(Error::InvalidInput("ML weights need order >= 2".into()));
    }
    let total: usize = dims.iter().product();
    Ok(normalize(dims.iter().map(|&d| d.min(total / d) as f64).collect()))
}

/// Low TT rank denoising over the canonical unfoldings `X_[1] … X_[N-1]`.
pub fn denoise_tt(x: &DenseTensor, cfg: &AdmmConfig) -> Result<(DenseTensor, AdmmTrace)> {
    let weights = tt_weights(x.dims())?;
    let views = (1..x.order())
        .map(|k| ModeView::canonical_small_side(x.dims(), k))
        .collect::<Vec<_>>();
    let (z, trace, _) = run(x, cfg, &views, &weights)?;
    Ok((z, trace))
}

/// Low ML rank denoising over the mode-n unfoldings `X_(1) … X_(N)`.
/// Also returns the rank of every final `M_k`.
pub fn denoise_ml(x: &DenseTensor, cfg: &AdmmConfig) -> Result<(DenseTensor, AdmmTrace, MlRankEstimate)> {
    let weights = ml_weights(x.dims())?;
    let views = (0..x.order())
        .map(|n| ModeView::around(x.dims(), n))
        .collect::<Vec<_>>();
    let (z, trace, ranks) = run(x, cfg, &views, &weights)?;
    let all_zero = ranks.iter().all(|&r| r == 0);
    Ok((z, trace, MlRankEstimate { ranks, all_zero }))
}

fn run(
    x: &DenseTensor,
    cfg: &AdmmConfig,
    views: &[ModeView],
    weights: &[f64],
) -> Result<(DenseTensor, AdmmTrace, Vec<usize>)> {
    cfg.validate()?;
    let len = x.len();
    let x_norm = x.frobenius_norm();
    let scale = if x_norm > 0.0 { 1.0 / x_norm } else { 1.0 };

    let mut z: Vec<f64> = x.data().to_vec();
    let mut lambdas: Vec<Vec<f64>> = vec![vec![0.0; len]; views.len()];
    let mut z_next = vec![0.0; len];
    let mut operand = vec![0.0; len];
    let mut ranks = vec![0usize; views.len()];
    let mut last_m: Vec<Option<Vec<f64>>> = vec![None; views.len()];
    let mut mu = cfg.mu0;
    let mut trace = AdmmTrace::default();

    while trace.iterations < cfg.itmax {
        z_next.iter_mut().for_each(|v| *v = 0.0);
        let inv_mu = 1.0 / mu;
        for (k, (&view, &w)) in views.iter().zip(weights).enumerate() {
            let lambda = &mut lambdas[k];
            for ((o, &zi), &li) in operand.iter_mut().zip(&z).zip(lambda.iter()) {
                *o = zi + li * inv_mu;
            }
            let m = svt_unfolding(&operand, view, w * inv_mu, cfg.norm)?;
            for ((li, &zi), &mi) in lambda.iter_mut().zip(&z).zip(&m.data) {
                *li += mu * (zi - mi);
            }
            for (acc, &mi) in z_next.iter_mut().zip(&m.data) {
                *acc += w * mi;
            }
            ranks[k] = m.rank;
            last_m[k] = Some(m.data);
        }
        trace.mu.push(mu);
        mu = (cfg.rho * mu).min(cfg.mu_max);

        let diff: f64 = z_next.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let rel = diff * scale;
        std::mem::swap(&mut z, &mut z_next);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("ADMM iterate became non-finite".into()));
        }
        trace.z_norm.push(z.iter().map(|v| v * v).sum::<f64>().sqrt());
        trace.rel_change.push(rel);
        trace.iterations += 1;
        log::debug!("admm iteration {} rel_change {rel:.3e} ranks {ranks:?}", trace.iterations);
        if rel <= cfg.eps_r {
            trace.converged = true;
            break;
        }
    }
    trace.mu_final = *trace.mu.last().unwrap_or(&cfg.mu0);
    trace.primal_residual = last_m
        .iter()
        .map(|m| {
            m.as_ref().map_or(0.0, |m| {
                m.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() * scale
            })
        })
        .collect();
    Ok((DenseTensor::from_parts(x.dims().to_vec(), z), trace, ranks))
}
