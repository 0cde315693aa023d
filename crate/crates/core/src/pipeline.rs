//! Compression-ratio accounting, rank correction, penalty calibration and
//! the end-to-end de-speckling/compression pipelines.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::admm::{denoise_ml, denoise_tt, tt_rank_bound, AdmmConfig, AdmmTrace, MlRank, TtRank};
use crate::decomp::{tt_svd_eps, tt_svd_ranks, tucker_als, TTModel, TuckerModel, TUCKER_MAX_SWEEPS, TUCKER_TOL};
use crate::error::{Error, Result};
use crate::prox::SpNorm;
use crate::tensor::DenseTensor;

/// Which low-rank structure a pipeline targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    /// Tensor train.
    Tt,
    /// Multilinear (Tucker).
    Ml,
}

impl Scheme {
    pub const ALL: [Scheme; 2] = [Scheme::Tt, Scheme::Ml];

    pub fn code(self) -> &'static str {
        match self {
            Scheme::Tt => "tt",
            Scheme::Ml => "ml",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tt" => Ok(Scheme::Tt),
            "ml" => Ok(Scheme::Ml),
            _ => Err(Error::InvalidInput(format!("unknown scheme {s:?} (expected tt or ml)"))),
        }
    }
}

fn check_cr_args(dims: &[usize], ranks: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.contains(&0) || ranks.contains(&0) {
        return Err(Error::InvalidInput(format!("dims {dims:?} and ranks {ranks:?} must be positive")));
    }
    Ok(())
}

/// Raw element count over TT parameter count `Σ R_{n-1} I_n R_n`.
pub fn cr_tt(dims: &[usize], ranks: &[usize]) -> Result<f64> {
    check_cr_args(dims, ranks)?;
    if ranks.len() + 1 != dims.len() {
        return Err(Error::RankBound(format!("{} TT ranks for {} dims", ranks.len(), dims.len())));
    }
    let mut params = 0usize;
    for (n, &d) in dims.iter().enumerate() {
        let left = if n == 0 { 1 } else { ranks[n - 1] };
        let right = ranks.get(n).copied().unwrap_or(1);
        params += left * d * right;
    }
    Ok(dims.iter().product::<usize>() as f64 / params as f64)
}

/// Raw element count over Tucker parameter count `∏ R_n + Σ I_n R_n`.
pub fn cr_ml(dims: &[usize], ranks: &[usize]) -> Result<f64> {
    check_cr_args(dims, ranks)?;
    if ranks.len() != dims.len() {
        return Err(Error::RankBound(format!("{} ML ranks for {} dims", ranks.len(), dims.len())));
    }
    let params = ranks.iter().product::<usize>() + dims.iter().zip(ranks).map(|(d, r)| d * r).sum::<usize>();
    Ok(dims.iter().product::<usize>() as f64 / params as f64)
}

/// How a rank correction went.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectionStatus {
    /// Input already met the target exactly.
    Unchanged,
    /// One rank was re-solved and the CR moved toward the target.
    Corrected,
    /// The re-solved rank hit a bound; the CR moved toward the target but
    /// the target itself is out of reach for this rank.
    Clamped,
    /// The re-solved ranks do not reduce the CR gap (rounding or clamping).
    NotImproved,
}

/// Output of [`correct_tt_rank`] / [`correct_ml_rank`].
#[derive(Debug, Clone, PartialEq)]
pub struct RankCorrection {
    pub ranks: Vec<usize>,
    /// 0-based index of the rank that was re-solved.
    pub corrected: Option<usize>,
    pub cr_before: f64,
    pub cr_after: f64,
    pub status: CorrectionStatus,
}

fn pick(ranks: &[usize], largest: bool) -> usize {
    // lowest index wins ties
    let mut best = 0;
    for (i, &r) in ranks.iter().enumerate() {
        if (largest && r > ranks[best]) || (!largest && r < ranks[best]) {
            best = i;
        }
    }
    best
}

fn finish(
    ranks: Vec<usize>,
    index: usize,
    solved: f64,
    upper: usize,
    target: f64,
    cr_before: f64,
    cr: impl Fn(&[usize]) -> Result<f64>,
) -> Result<RankCorrection> {
    let rounded = solved.round();
    let clamped = rounded < 1.0 || rounded > upper as f64 || !rounded.is_finite();
    let value = if rounded.is_nan() { 1.0 } else { rounded.clamp(1.0, upper as f64) } as usize;
    let mut out = ranks;
    out[index] = value;
    let cr_after = cr(&out)?;
    let improved = (cr_after - target).abs() < (cr_before - target).abs();
    let status = match (improved, clamped) {
        (false, _) => CorrectionStatus::NotImproved,
        (true, true) => CorrectionStatus::Clamped,
        (true, false) => CorrectionStatus::Corrected,
    };
    Ok(RankCorrection { ranks: out, corrected: Some(index), cr_before, cr_after, status })
}

fn check_target(target: f64) -> Result<()> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidInput(format!("target CR must be positive, got {target}")));
    }
    Ok(())
}

/// Single-pass TT rank correction for a 3-way tensor. If the CR is below
/// target the larger rank is re-solved, otherwise the smaller one, from
/// `P / CR = I1 R1 + R1 I2 R2 + R2 I3`.
pub fn correct_tt_rank(dims: &[usize], ranks: &[usize], target: f64) -> Result<RankCorrection> {
    check_target(target)?;
    if dims.len() != 3 || ranks.len() != 2 {
        return Err(Error::InvalidInput("TT rank correction needs 3 dims and 2 ranks".into()));
    }
    let cr_before = cr_tt(dims, ranks)?;
    if cr_before == target {
        return Ok(RankCorrection {
            ranks: ranks.to_vec(),
            corrected: None,
            cr_before,
            cr_after: cr_before,
            status: CorrectionStatus::Unchanged,
        });
    }
    let index = pick(ranks, cr_before < target);
    let p = dims.iter().product::<usize>() as f64;
    let [i1, i2, i3] = [dims[0] as f64, dims[1] as f64, dims[2] as f64];
    let (r1, r2) = (ranks[0] as f64, ranks[1] as f64);
    let solved = if index == 0 {
        (p - target * r2 * i3) / (target * i1 + target * i2 * r2)
    } else {
        (p - target * i1 * r1) / (target * r1 * i2 + target * i3)
    };
    let upper = tt_rank_bound(dims, index + 1);
    finish(ranks.to_vec(), index, solved, upper, target, cr_before, |r| cr_tt(dims, r))
}

/// Single-pass ML rank correction for a 3-way tensor, re-solving the largest
/// rank when the CR is too low and the smallest when it is too high, from
/// `P / CR = R1 R2 R3 + Σ I_n R_n`.
pub fn correct_ml_rank(dims: &[usize], ranks: &[usize], target: f64) -> Result<RankCorrection> {
    check_target(target)?;
    if dims.len() != 3 || ranks.len() != 3 {
        return Err(Error::InvalidInput("ML rank correction needs 3 dims and 3 ranks".into()));
    }
    let cr_before = cr_ml(dims, ranks)?;
    if cr_before == target {
        return Ok(RankCorrection {
            ranks: ranks.to_vec(),
            corrected: None,
            cr_before,
            cr_after: cr_before,
            status: CorrectionStatus::Unchanged,
        });
    }
    let i = pick(ranks, cr_before < target);
    let p = dims.iter().product::<usize>() as f64;
    let others: Vec<usize> = (0..3).filter(|&j| j != i).collect();
    let fixed: f64 = others.iter().map(|&j| (dims[j] * ranks[j]) as f64).sum();
    let cross = (ranks[others[0]] * ranks[others[1]]) as f64;
    let solved = (p - target * fixed) / (target * cross + target * dims[i] as f64);
    let total: usize = dims.iter().product();
    let upper = dims[i].min(total / dims[i]);
    finish(ranks.to_vec(), i, solved, upper, target, cr_before, |r| cr_ml(dims, r))
}

/// One calibration knot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    pub cr: f64,
    pub mu0: f64,
    pub mu_max: f64,
}

/// Penalty schedule samples per (scheme, norm), each list sorted by strictly
/// increasing CR.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationTable {
    entries: BTreeMap<(Scheme, SpNorm), Vec<CalibrationSample>>,
}

const BUILTIN_TABLE: &str = include_str!("../data/default_calibration.txt");

impl CalibrationTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Table shipped with the crate, calibrated on the reference phantom
    /// ([`crate::phantom::SpeckledPhantomSpec::reference`]).
    pub fn builtin() -> Self {
        BUILTIN_TABLE.parse().expect("shipped calibration table parses")
    }

    /// Replaces the list for `(scheme, norm)`; samples may come in any order.
    pub fn set(&mut self, scheme: Scheme, norm: SpNorm, mut samples: Vec<CalibrationSample>) -> Result<()> {
        samples.sort_by(|a, b| a.cr.total_cmp(&b.cr));
        for s in &samples {
            let ok = |v: f64| v > 0.0 && v.is_finite();
            if !ok(s.cr) || !ok(s.mu0) || !ok(s.mu_max) {
                return Err(Error::InvalidConfig(format!("non-positive calibration sample {s:?}")));
            }
        }
        if samples.windows(2).any(|w| w[0].cr >= w[1].cr) {
            return Err(Error::InvalidConfig(format!(
                "calibration CRs for {scheme}/{norm} are not strictly increasing"
            )));
        }
        self.entries.insert((scheme, norm), samples);
        Ok(())
    }

    pub fn samples(&self, scheme: Scheme, norm: SpNorm) -> Option<&[CalibrationSample]> {
        self.entries.get(&(scheme, norm)).map(Vec::as_slice)
    }

    /// Copies every list of `other` into `self`, replacing clashes.
    pub fn merge(&mut self, other: &CalibrationTable) {
        for (k, v) in &other.entries {
            self.entries.insert(*k, v.clone());
        }
    }

    /// `(μ⁰, μ_max)` for a target CR by monotone piecewise-cubic Hermite
    /// interpolation in log-log coordinates, clamped to the end knots.
    pub fn interpolate_mu(&self, scheme: Scheme, norm: SpNorm, target_cr: f64) -> Result<(f64, f64)> {
        check_target(target_cr)?;
        let samples = self
            .samples(scheme, norm)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::MissingCalibration { mode: scheme.to_string(), norm: norm.to_string() })?;
        if let Some(s) = samples.iter().find(|s| s.cr == target_cr) {
            return Ok((s.mu0, s.mu_max));
        }
        let (first, last) = (samples[0], samples[samples.len() - 1]);
        if target_cr <= first.cr {
            return Ok((first.mu0, first.mu_max));
        }
        if target_cr >= last.cr {
            return Ok((last.mu0, last.mu_max));
        }
        let xs: Vec<f64> = samples.iter().map(|s| s.cr.ln()).collect();
        let at = |ys: Vec<f64>| pchip(&xs, &ys, target_cr.ln()).exp();
        Ok((
            at(samples.iter().map(|s| s.mu0.ln()).collect()),
            at(samples.iter().map(|s| s.mu_max.ln()).collect()),
        ))
    }
}

impl fmt::Display for CalibrationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for ((scheme, norm), samples) in &self.entries {
            for s in samples {
                writeln!(f, "mode={scheme} norm={norm} cr={} mu0={} mu_max={}", s.cr, s.mu0, s.mu_max)?;
            }
        }
        Ok(())
    }
}

impl FromStr for CalibrationTable {
    type Err = Error;

    /// One `mode=… norm=… cr=… mu0=… mu_max=…` record per line; blank lines
    /// and lines starting with `#` are ignored.
    fn from_str(text: &str) -> Result<Self> {
        let mut lists: BTreeMap<(Scheme, SpNorm), Vec<CalibrationSample>> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: idx + 1, msg };
            let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
            for tok in line.split_whitespace() {
                let (k, v) = tok.split_once('=').ok_or_else(|| err(format!("expected key=value, got {tok:?}")))?;
                if fields.insert(k, v).is_some() {
                    return Err(err(format!("duplicate field {k}")));
                }
            }
            let get = |k: &str| fields.get(k).copied().ok_or_else(|| err(format!("missing field {k}")));
            let num = |k: &str| -> Result<f64> {
                get(k)?.parse::<f64>().map_err(|e| err(format!("field {k}: {e}")))
            };
            if fields.len() != 5 {
                return Err(err("expected exactly mode, norm, cr, mu0, mu_max".into()));
            }
            let scheme: Scheme = get("mode")?.parse().map_err(|e: Error| err(e.to_string()))?;
            let norm: SpNorm = get("norm")?.parse().map_err(|e: Error| err(e.to_string()))?;
            let sample = CalibrationSample { cr: num("cr")?, mu0: num("mu0")?, mu_max: num("mu_max")? };
            lists.entry((scheme, norm)).or_default().push(sample);
        }
        let mut table = CalibrationTable::new();
        for ((scheme, norm), samples) in lists {
            table.set(scheme, norm, samples)?;
        }
        Ok(table)
    }
}

/// Shape-preserving piecewise cubic Hermite interpolation with
/// Fritsch–Carlson harmonic-mean slopes and three-point end slopes.
/// Queries outside `[xs[0], xs[n-1]]` return the end values.
pub fn pchip(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    assert!(n > 0 && n == ys.len());
    if n == 1 || x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
    let mut d = vec![0.0; n];
    if n == 2 {
        d[0] = delta[0];
        d[1] = delta[0];
    } else {
        for k in 1..n - 1 {
            if delta[k - 1] * delta[k] > 0.0 {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
            }
        }
        d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
        d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    }
    let k = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[k]) / h[k];
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * ys[k]
        + (t3 - 2.0 * t2 + t) * h[k] * d[k]
        + (-2.0 * t3 + 3.0 * t2) * ys[k + 1]
        + (t3 - t2) * h[k] * d[k + 1]
}

fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d.signum() != del0.signum() || del0 == 0.0 {
        0.0
    } else if del0.signum() != del1.signum() && d.abs() > (3.0 * del0).abs() {
        3.0 * del0
    } else {
        d
    }
}

/// Either fitted model.
#[derive(Debug, Clone, PartialEq)]
pub enum CompressedModel {
    Tt(TTModel),
    Tucker(TuckerModel),
}

impl CompressedModel {
    pub fn dims(&self) -> Vec<usize> {
        match self {
            CompressedModel::Tt(m) => m.dims().to_vec(),
            CompressedModel::Tucker(m) => m.dims(),
        }
    }

    pub fn ranks(&self) -> Vec<usize> {
        match self {
            CompressedModel::Tt(m) => m.ranks(),
            CompressedModel::Tucker(m) => m.ranks().to_vec(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            CompressedModel::Tt(m) => m.param_count(),
            CompressedModel::Tucker(m) => m.param_count(),
        }
    }

    /// Raw element count over parameter count.
    pub fn compression_ratio(&self) -> f64 {
        self.dims().iter().product::<usize>() as f64 / self.param_count() as f64
    }

    pub fn reconstruct(&self) -> DenseTensor {
        match self {
            CompressedModel::Tt(m) => crate::decomp::tt_reconstruct(m),
            CompressedModel::Tucker(m) => crate::decomp::tucker_reconstruct(m),
        }
    }
}

/// Knobs of the end-to-end pipelines beyond the calibrated penalties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    /// Fit the final model to the de-speckled tensor instead of the input.
    pub decompose_denoised: bool,
    /// Overrides the solver's default stopping threshold.
    pub eps_r: Option<f64>,
    pub itmax: Option<usize>,
    pub tucker_tol: f64,
    pub tucker_max_sweeps: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            decompose_denoised: false,
            eps_r: None,
            itmax: None,
            tucker_tol: TUCKER_TOL,
            tucker_max_sweeps: TUCKER_MAX_SWEEPS,
        }
    }
}

/// Everything a pipeline run produces.
#[derive(Debug, Clone)]
pub struct CompressionOutcome {
    pub model: CompressedModel,
    /// ADMM output.
    pub denoised: DenseTensor,
    pub requested_cr: f64,
    /// CR of the emitted model.
    pub achieved_cr: f64,
    pub admm_trace: AdmmTrace,
    /// `‖X − X̂‖_F / ‖X‖_F` between the input and the ADMM output.
    pub approx_error: f64,
    pub mu0: f64,
    pub mu_max: f64,
    /// Ranks read off the de-speckled tensor before correction.
    pub natural_ranks: Vec<usize>,
    pub correction: RankCorrection,
}

fn check_pipeline_input(x: &DenseTensor, target_cr: f64) -> Result<()> {
    if x.order() != 3 {
        return Err(Error::InvalidInput(format!("pipeline needs a 3-way tensor, got order {}", x.order())));
    }
    if !(target_cr > 1.0 && target_cr.is_finite()) {
        return Err(Error::InvalidInput(format!("target CR must exceed 1, got {target_cr}")));
    }
    if x.frobenius_norm() == 0.0 {
        return Err(Error::Degenerate("input volume is identically zero".into()));
    }
    Ok(())
}

fn admm_config(scheme: Scheme, norm: SpNorm, mu0: f64, mu_max: f64, opts: &PipelineOptions) -> AdmmConfig {
    let mut cfg = match scheme {
        Scheme::Tt => AdmmConfig::tt(norm, mu0, mu_max),
        Scheme::Ml => AdmmConfig::ml(norm, mu0, mu_max),
    };
    if let Some(e) = opts.eps_r {
        cfg.eps_r = e;
    }
    if let Some(i) = opts.itmax {
        cfg.itmax = i;
    }
    cfg
}

/// Relative error used as the TT-SVD budget, kept inside `(0, 1)`.
fn budget(err: f64) -> f64 {
    err.clamp(1e-12, 1.0 - 1e-12)
}

/// Low TT rank de-speckling and compression with default options.
pub fn despeckle_compress_tt(
    x: &DenseTensor,
    target_cr: f64,
    norm: SpNorm,
    table: &CalibrationTable,
) -> Result<CompressionOutcome> {
    despeckle_compress_tt_with(x, target_cr, norm, table, &PipelineOptions::default())
}

pub fn despeckle_compress_tt_with(
    x: &DenseTensor,
    target_cr: f64,
    norm: SpNorm,
    table: &CalibrationTable,
    opts: &PipelineOptions,
) -> Result<CompressionOutcome> {
    check_pipeline_input(x, target_cr)?;
    let (mu0, mu_max) = table.interpolate_mu(Scheme::Tt, norm, target_cr)?;
    let cfg = admm_config(Scheme::Tt, norm, mu0, mu_max, opts);
    let (denoised, admm_trace) = denoise_tt(x, &cfg)?;
    let approx_error = x.sub(&denoised)?.frobenius_norm() / x.frobenius_norm();
    let source = if opts.decompose_denoised { &denoised } else { x };
    let natural = tt_svd_eps(source, budget(approx_error))?.ranks();
    let correction = correct_tt_rank(x.dims(), &natural, target_cr)?;
    let model = tt_svd_ranks(source, &TtRank::new(correction.ranks.clone(), x.dims())?)?;
    let achieved_cr = cr_tt(x.dims(), &model.ranks())?;
    log::info!(
        "tt pipeline: natural ranks {natural:?}, corrected {:?}, achieved CR {achieved_cr:.3}",
        correction.ranks
    );
    Ok(CompressionOutcome {
        model: CompressedModel::Tt(model),
        denoised,
        requested_cr: target_cr,
        achieved_cr,
        admm_trace,
        approx_error,
        mu0,
        mu_max,
        natural_ranks: natural,
        correction,
    })
}

/// Low ML rank de-speckling and compression with default options.
pub fn despeckle_compress_ml(
    x: &DenseTensor,
    target_cr: f64,
    norm: SpNorm,
    table: &CalibrationTable,
) -> Result<CompressionOutcome> {
    despeckle_compress_ml_with(x, target_cr, norm, table, &PipelineOptions::default())
}

pub fn despeckle_compress_ml_with(
    x: &DenseTensor,
    target_cr: f64,
    norm: SpNorm,
    table: &CalibrationTable,
    opts: &PipelineOptions,
) -> Result<CompressionOutcome> {
    check_pipeline_input(x, target_cr)?;
    let (mu0, mu_max) = table.interpolate_mu(Scheme::Ml, norm, target_cr)?;
    let cfg = admm_config(Scheme::Ml, norm, mu0, mu_max, opts);
    let (denoised, admm_trace, estimate) = denoise_ml(x, &cfg)?;
    let approx_error = x.sub(&denoised)?.frobenius_norm() / x.frobenius_norm();
    let natural = estimate.to_ml_rank(x.dims())?.ranks().to_vec();
    let correction = correct_ml_rank(x.dims(), &natural, target_cr)?;
    let source = if opts.decompose_denoised { &denoised } else { x };
    let ranks = MlRank::new(correction.ranks.clone(), x.dims())?;
    let model = tucker_als(source, &ranks, opts.tucker_tol, opts.tucker_max_sweeps)?;
    let achieved_cr = cr_ml(x.dims(), model.ranks())?;
    log::info!(
        "ml pipeline: natural ranks {natural:?}, corrected {:?}, achieved CR {achieved_cr:.3}",
        correction.ranks
    );
    Ok(CompressionOutcome {
        model: CompressedModel::Tucker(model),
        denoised,
        requested_cr: target_cr,
        achieved_cr,
        admm_trace,
        approx_error,
        mu0,
        mu_max,
        natural_ranks: natural,
        correction,
    })
}

/// Runs the solver for `scheme` and returns the CR implied by the ranks it
/// produces before any correction: TT-SVD ranks at the solver's
/// approximation error for TT, the ranks of the solver's unfoldings for ML.
pub fn natural_cr(x: &DenseTensor, scheme: Scheme, cfg: &AdmmConfig) -> Result<f64> {
    match scheme {
        Scheme::Tt => {
            let (z, _) = denoise_tt(x, cfg)?;
            let err = x.sub(&z)?.frobenius_norm() / x.frobenius_norm();
            cr_tt(x.dims(), &tt_svd_eps(x, budget(err))?.ranks())
        }
        Scheme::Ml => {
            let (_, _, est) = denoise_ml(x, cfg)?;
            cr_ml(x.dims(), est.to_ml_rank(x.dims())?.ranks())
        }
    }
}

/// Search settings of [`calibrate`].
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    /// `μ_max = mu_max_factor · μ⁰`.
    pub mu_max_factor: f64,
    /// Coarse grid of `μ⁰ · ‖X‖_F` values, geometric from `grid_low` to
    /// `grid_high` with ratio `grid_ratio`.
    pub grid_low: f64,
    pub grid_high: f64,
    pub grid_ratio: f64,
    /// Accept a knot once the mean CR is within this relative distance.
    pub tolerance: f64,
    pub max_bisections: usize,
    pub eps_r: Option<f64>,
    pub itmax: Option<usize>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            mu_max_factor: 1e3,
            grid_low: 1e-2,
            grid_high: 1e3,
            grid_ratio: 4.0,
            tolerance: 0.1,
            max_bisections: 12,
            eps_r: None,
            itmax: None,
        }
    }
}

/// Twelve logarithmically spaced CRs from 1 to 100.
pub fn default_cr_targets() -> Vec<f64> {
    (0..12).map(|i| 10f64.powf(2.0 * i as f64 / 11.0)).collect()
}

/// Sign of the CR response to a larger `μ⁰`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrResponse {
    Decreasing,
    Increasing,
    Flat,
}

/// What [`calibrate_with_report`] saw along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub response: CrResponse,
    /// Every `(μ⁰, mean CR)` evaluated, sorted by `μ⁰`.
    pub evaluations: Vec<(f64, f64)>,
    /// Targets for which no knot was found.
    pub missed: Vec<f64>,
}

/// Builds a table list for `(scheme, norm)` by searching, per target, a
/// `μ⁰` whose mean natural CR over `volumes` is within `tolerance` of it.
pub fn calibrate(
    volumes: &[DenseTensor],
    scheme: Scheme,
    norm: SpNorm,
    cr_targets: &[f64],
    opts: &CalibrationOptions,
) -> Result<CalibrationTable> {
    calibrate_with_report(volumes, scheme, norm, cr_targets, opts).map(|(t, _)| t)
}

pub fn calibrate_with_report(
    volumes: &[DenseTensor],
    scheme: Scheme,
    norm: SpNorm,
    cr_targets: &[f64],
    opts: &CalibrationOptions,
) -> Result<(CalibrationTable, CalibrationReport)> {
    if volumes.is_empty() {
        return Err(Error::InvalidInput("calibration needs at least one volume".into()));
    }
    if cr_targets.windows(2).any(|w| w[0] >= w[1]) || cr_targets.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidInput("CR targets must be positive and strictly increasing".into()));
    }
    let ok = |v: f64| v > 0.0 && v.is_finite();
    if !ok(opts.mu_max_factor) || opts.mu_max_factor < 1.0 || !ok(opts.grid_low) || !(opts.grid_high > opts.grid_low)
        || !(opts.grid_ratio > 1.0) || !ok(opts.tolerance)
    {
        return Err(Error::InvalidConfig(format!("bad calibration options {opts:?}")));
    }
    for v in volumes {
        if v.frobenius_norm() == 0.0 {
            return Err(Error::Degenerate("calibration volume is identically zero".into()));
        }
    }
    let mut table = CalibrationTable::new();
    if cr_targets.is_empty() {
        table.set(scheme, norm, Vec::new())?;
        let report = CalibrationReport { response: CrResponse::Flat, evaluations: Vec::new(), missed: Vec::new() };
        return Ok((table, report));
    }

    let scale = volumes.iter().map(|v| v.frobenius_norm()).sum::<f64>() / volumes.len() as f64;
    let cache: RefCell<Vec<(f64, f64)>> = RefCell::new(Vec::new());
    let eval = |mu0: f64| -> Result<f64> {
        if let Some(&(_, cr)) = cache.borrow().iter().find(|(m, _)| *m == mu0) {
            return Ok(cr);
        }
        let cfg = admm_config(
            scheme,
            norm,
            mu0,
            mu0 * opts.mu_max_factor,
            &PipelineOptions { eps_r: opts.eps_r, itmax: opts.itmax, ..PipelineOptions::default() },
        );
        let mut total = 0.0;
        for v in volumes {
            total += natural_cr(v, scheme, &cfg)?;
        }
        let cr = total / volumes.len() as f64;
        log::info!("calibrate {scheme}/{norm}: mu0 = {mu0:.6e} -> mean CR {cr:.4}");
        cache.borrow_mut().push((mu0, cr));
        Ok(cr)
    };

    let mut grid = Vec::new();
    let mut g = opts.grid_low;
    while g <= opts.grid_high * (1.0 + 1e-12) {
        grid.push(g / scale);
        g *= opts.grid_ratio;
    }
    let crs: Vec<f64> = grid.iter().map(|&m| eval(m)).collect::<Result<_>>()?;
    let response = match crs[crs.len() - 1].partial_cmp(&crs[0]) {
        Some(std::cmp::Ordering::Less) => CrResponse::Decreasing,
        Some(std::cmp::Ordering::Greater) => CrResponse::Increasing,
        _ => CrResponse::Flat,
    };

    let mut samples: Vec<CalibrationSample> = Vec::new();
    let mut missed = Vec::new();
    let within = |cr: f64, t: f64| (cr - t).abs() <= opts.tolerance * t;
    for &target in cr_targets {
        // closest evaluation so far, else refine the tightest bracket seen
        let mut best: Option<(f64, f64)> = None;
        for _ in 0..=opts.max_bisections {
            let mut seen = cache.borrow().clone();
            seen.sort_by(|a, b| a.0.total_cmp(&b.0));
            best = seen
                .iter()
                .filter(|(_, cr)| within(*cr, target))
                .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
                .copied();
            if best.is_some() {
                break;
            }
            let Some(j) = (0..seen.len() - 1).find(|&j| (seen[j].1 - target) * (seen[j + 1].1 - target) < 0.0) else {
                break;
            };
            let ((m0, c0), (m1, c1)) = (seen[j], seen[j + 1]);
            // a jump in the response, not a slope: no penalty lands closer
            if m1 / m0 < 1.0 + 1e-3 {
                break;
            }
            let (l0, l1) = (m0.ln(), m1.ln());
            // secant step in log-log coordinates, kept away from the ends
            let frac = if c0 > 0.0 && c1 > 0.0 && c0 != c1 {
                ((target.ln() - c0.ln()) / (c1.ln() - c0.ln())).clamp(0.15, 0.85)
            } else {
                0.5
            };
            eval((l0 + frac * (l1 - l0)).exp())?;
        }
        match best {
            Some((mu0, cr)) => {
                if !samples.iter().any(|s| s.cr == cr) {
                    samples.push(CalibrationSample { cr, mu0, mu_max: mu0 * opts.mu_max_factor });
                }
            }
            None => {
                log::warn!("calibrate {scheme}/{norm}: no penalty reaches CR {target:.3}; knot omitted");
                missed.push(target);
            }
        }
    }
    table.set(scheme, norm, samples)?;
    let mut evaluations = cache.into_inner();
    evaluations.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok((table, CalibrationReport { response, evaluations, missed }))
}
