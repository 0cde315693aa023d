//! End-to-end acceptance checks. Run with
//! `cargo test -p ttml-core --test acceptance`; prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::result::Result;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ttml::decomp::{tucker_als_with_trace, TUCKER_MAX_SWEEPS};
use ttml::io::{decode_model, decode_volume, encode_model, encode_volume, StoredModel};
use ttml::pipeline::{calibrate, despeckle_compress_ml, despeckle_compress_tt, CalibrationOptions, CompressionOutcome};
use ttml::*;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_tensor(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> DenseTensor {
    DenseTensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0)).unwrap()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn rel(a: &DenseTensor, b: &DenseTensor) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / a.frobenius_norm()
}

fn prox_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for norm in SpNorm::ALL {
        for _ in 0..1000 {
            let x = rng.gen_range(-10.0..=10.0);
            // (0, 5]
            let tau = 5.0 - rng.gen_range(0.0..5.0);
            let d = (prox_scalar(x, tau, norm) - prox_oracle(x, tau, norm)).abs();
            ensure(d <= 1e-4, || format!("{norm}: x = {x}, tau = {tau}, gap {d:e}"))?;
            worst = worst.max(d);
        }
    }
    Ok(format!("4000 samples, worst gap {worst:.2e}"))
}

/// Every dims tuple of order 2..=4 with entries in 1..=8, plus order 5 and 6
/// with entries in 1..=3; all have at most 4096 entries.
fn enumerated_dims() -> Vec<Vec<usize>> {
    fn grow(prefix: Vec<usize>, order: usize, max: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == order {
            out.push(prefix);
            return;
        }
        for d in 1..=max {
            let mut next = prefix.clone();
            next.push(d);
            grow(next, order, max, out);
        }
    }
    let mut out = Vec::new();
    for order in 2..=4 {
        grow(Vec::new(), order, 8, &mut out);
    }
    for order in 5..=6 {
        grow(Vec::new(), order, 3, &mut out);
    }
    out
}

fn unfolding_correctness() -> Check {
    let all = enumerated_dims();
    let mut entries = 0usize;
    for dims in &all {
        let t = DenseTensor::from_fn(dims.clone(), |i| {
            i.iter().enumerate().map(|(k, &v)| (v as f64 + 1.0) * 10f64.powi(k as i32)).sum::<f64>()
        })
        .unwrap();
        let n_modes = dims.len();
        let mode = (1..=n_modes).map(|n| unfold_mode_n(&t, n).unwrap()).collect::<Vec<_>>();
        let canon = (1..n_modes).map(|k| unfold_canonical(&t, k).unwrap()).collect::<Vec<_>>();
        let mut idx = vec![0usize; n_modes];
        for flat in 0..t.len() {
            let mut rest = flat;
            for (i, &d) in idx.iter_mut().zip(dims) {
                *i = rest % d;
                rest /= d;
            }
            let v = t.get(&idx);
            for n in 0..n_modes {
                let (mut col, mut stride) = (0, 1);
                for m in (0..n_modes).filter(|&m| m != n) {
                    col += idx[m] * stride;
                    stride *= dims[m];
                }
                ensure(mode[n].get(idx[n], col) == v, || format!("mode {} of {dims:?} at {idx:?}", n + 1))?;
            }
            for k in 1..n_modes {
                let (mut row, mut col, mut stride) = (0, 0, 1);
                for m in 0..k {
                    row += idx[m] * stride;
                    stride *= dims[m];
                }
                stride = 1;
                for m in k..n_modes {
                    col += idx[m] * stride;
                    stride *= dims[m];
                }
                ensure(canon[k - 1].get(row, col) == v, || format!("canonical {k} of {dims:?} at {idx:?}"))?;
            }
            entries += 1;
        }
        for (n, m) in mode.iter().enumerate() {
            ensure(fold_mode_n(m, dims, n + 1).unwrap() == t, || format!("fold mode {} of {dims:?}", n + 1))?;
        }
        for (k, m) in canon.iter().enumerate() {
            ensure(m.data() == t.data(), || format!("canonical {} of {dims:?} copied", k + 1))?;
            ensure(fold_canonical(m, dims, k + 1).unwrap() == t, || format!("fold canonical {} of {dims:?}", k + 1))?;
        }
    }
    Ok(format!("{} shapes, {entries} entries", all.len()))
}

fn tt_svd_bound() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = random_tensor(vec![16, 16, 16], &mut rng);
        for eps in [0.01, 0.1, 0.3] {
            let e = rel(&x, &tt_reconstruct(&tt_svd_eps(&x, eps).unwrap()));
            ensure(e <= eps, || format!("eps {eps}: error {e}"))?;
            worst = worst.max(e / eps);
        }
    }
    // exact TT rank (2, 3)
    let g1 = random_tensor(vec![1, 7, 2], &mut rng);
    let g2 = random_tensor(vec![2, 8, 3], &mut rng);
    let g3 = random_tensor(vec![3, 9, 1], &mut rng);
    let x = tt_reconstruct(&TTModel::new(vec![7, 8, 9], vec![g1, g2, g3]).unwrap());
    let m = tt_svd_eps(&x, 1e-8).unwrap();
    ensure(m.ranks() == vec![2, 3], || format!("TT ranks {:?}", m.ranks()))?;
    let e_tt = rel(&x, &tt_reconstruct(&m));
    ensure(e_tt <= 1e-10, || format!("TT recovery error {e_tt:e}"))?;
    // exact ML rank (2, 2, 2)
    let core = random_tensor(vec![2, 2, 2], &mut rng);
    let factors: Vec<DenseMatrix> = [6, 7, 8].iter().map(|&d| random_matrix(d, 2, &mut rng)).collect();
    let x = tucker_reconstruct(&TuckerModel::new(core, factors).unwrap());
    let m = tucker_als(&x, &MlRank::new(vec![2, 2, 2], x.dims()).unwrap(), 1e-10, TUCKER_MAX_SWEEPS).unwrap();
    let e_ml = rel(&x, &tucker_reconstruct(&m));
    ensure(e_ml <= 1e-10, || format!("ML recovery error {e_ml:e}"))?;
    Ok(format!("worst error/eps {worst:.3}, TT recovery {e_tt:.1e}, ML recovery {e_ml:.1e}"))
}

fn tucker_monotone() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_orth: f64 = 0.0;
    let mut sweeps = 0;
    for _ in 0..20 {
        let dims: Vec<usize> = (0..3).map(|_| rng.gen_range(4..=12)).collect();
        let ranks: Vec<usize> = dims.iter().map(|&d| rng.gen_range(1..=d / 2)).collect();
        let x = random_tensor(dims.clone(), &mut rng);
        let rank = MlRank::new(ranks, &dims).unwrap();
        let (_, trace) = tucker_als_with_trace(&x, &rank, 1e-12, TUCKER_MAX_SWEEPS).unwrap();
        for w in trace.fit.windows(2) {
            ensure(w[1] >= w[0], || format!("fit decreased {} -> {} on {dims:?}", w[0], w[1]))?;
        }
        for &d in &trace.orthonormality {
            ensure(d <= 1e-10, || format!("orthonormality {d:e}"))?;
            worst_orth = worst_orth.max(d);
        }
        sweeps += trace.sweeps;
    }
    Ok(format!("{sweeps} sweeps, worst orthonormality {worst_orth:.1e}"))
}

fn admm_convergence() -> Check {
    let (_, noisy) = make_phantom(&SpeckledPhantomSpec::small()).unwrap();
    let bound = 2.0 * noisy.frobenius_norm();
    let mut summary = Vec::new();
    for scheme in Scheme::ALL {
        for norm in SpNorm::ALL {
            let table = calibrate(std::slice::from_ref(&noisy), scheme, norm, &[10.0], &CalibrationOptions::default())
                .map_err(|e| format!("{scheme}/{norm} calibration: {e}"))?;
            let (mu0, mu_max) = table.interpolate_mu(scheme, norm, 10.0).map_err(|e| e.to_string())?;
            let (cfg, trace) = match scheme {
                Scheme::Tt => {
                    let cfg = AdmmConfig::tt(norm, mu0, mu_max);
                    (cfg, denoise_tt(&noisy, &cfg).unwrap().1)
                }
                Scheme::Ml => {
                    let cfg = AdmmConfig::ml(norm, mu0, mu_max);
                    (cfg, denoise_ml(&noisy, &cfg).unwrap().1)
                }
            };
            let last = trace.rel_change.last().copied().unwrap_or(f64::INFINITY);
            ensure(trace.converged && last <= cfg.eps_r && trace.iterations <= 100, || {
                format!("{scheme}/{norm}: {} iterations, last change {last:e}", trace.iterations)
            })?;
            let peak = trace.z_norm.iter().copied().fold(0.0, f64::max);
            ensure(peak <= bound, || format!("{scheme}/{norm}: |Z| {peak} > 2|X|"))?;
            summary.push(format!("{scheme}/{norm}:{}", trace.iterations));
        }
    }
    Ok(format!("iterations {}", summary.join(" ")))
}

struct FullRuns {
    clean: DenseTensor,
    noisy: DenseTensor,
    /// `(scheme, norm, requested CR, outcome, seconds)`.
    runs: Vec<(Scheme, SpNorm, f64, Kept, f64)>,
}

/// The part of an outcome the checks read. The de-speckled tensors are
/// dropped: 32 of them at full size do not fit in memory.
struct Kept {
    model: CompressedModel,
    achieved_cr: f64,
}

fn run_pipeline(x: &DenseTensor, scheme: Scheme, norm: SpNorm, cr: f64, table: &CalibrationTable) -> ttml::Result<(CompressionOutcome, f64)> {
    let start = Instant::now();
    let out = match scheme {
        Scheme::Tt => despeckle_compress_tt(x, cr, norm, table)?,
        Scheme::Ml => despeckle_compress_ml(x, cr, norm, table)?,
    };
    Ok((out, start.elapsed().as_secs_f64()))
}

fn full_runs() -> Result<FullRuns, String> {
    let (clean, noisy) = make_phantom(&SpeckledPhantomSpec::reference()).map_err(|e| e.to_string())?;
    let table = CalibrationTable::builtin();
    let mut runs = Vec::new();
    for scheme in Scheme::ALL {
        for norm in SpNorm::ALL {
            for cr in [5.0, 10.0, 20.0, 60.0] {
                let (out, secs) =
                    run_pipeline(&noisy, scheme, norm, cr, &table).map_err(|e| format!("{scheme}/{norm} CR {cr}: {e}"))?;
                eprintln!("  {scheme}/{norm} CR {cr}: achieved {:.3} in {secs:.1} s", out.achieved_cr);
                let kept = Kept { model: out.model, achieved_cr: out.achieved_cr };
                runs.push((scheme, norm, cr, kept, secs));
            }
        }
    }
    Ok(FullRuns { clean, noisy, runs })
}

fn cr_targeting(full: &FullRuns) -> Check {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (scheme, norm, cr, out, _) in &full.runs {
        let dev = (out.achieved_cr - cr).abs() / cr;
        let from_params = out.model.compression_ratio();
        if (from_params - out.achieved_cr).abs() > 1e-12 * cr {
            failures.push(format!("{scheme}/{norm}@{cr}: reported {} vs params {from_params}", out.achieved_cr));
        }
        if dev > 0.05 {
            failures.push(format!("{scheme}/{norm}@{cr}: {:.3}", out.achieved_cr));
        }
        worst = worst.max(dev);
    }
    ensure(failures.is_empty(), || failures.join(", "))?;
    Ok(format!("{} runs, worst deviation {:.2}%", full.runs.len(), 100.0 * worst))
}

fn despeckling(full: &FullRuns) -> Check {
    let layer = SpeckledPhantomSpec::reference().layer_mask(4).map_err(|e| e.to_string())?;
    let cnr_noisy = cnr(&full.noisy, &layer).map_err(|e| e.to_string())?;
    let err_noisy = relative_error(&full.clean, &full.noisy).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for (scheme, norm, cr, out, _) in full.runs.iter().filter(|r| r.2 == 10.0) {
        let rec = out.model.reconstruct();
        let c = cnr(&rec, &layer).map_err(|e| e.to_string())?;
        let e = relative_error(&full.clean, &rec).map_err(|e| e.to_string())?;
        if !(c > cnr_noisy && e < err_noisy) {
            failures.push(format!("{scheme}/{norm}@{cr}: CNR {c:.3}, error {e:.4}"));
        }
        lines.push(format!("{scheme}/{norm} CNR {c:.2} err {e:.3}"));
    }
    ensure(failures.is_empty(), || format!("noisy CNR {cnr_noisy:.3}, error {err_noisy:.4}; {}", failures.join(", ")))?;
    Ok(format!("noisy CNR {cnr_noisy:.2} err {err_noisy:.3}; {}", lines.join("; ")))
}

fn runtime(full: &FullRuns) -> Check {
    let table = CalibrationTable::builtin();
    let (_, tt_secs) = run_pipeline(&full.noisy, Scheme::Tt, SpNorm::TwoThirds, 7.0, &table).map_err(|e| e.to_string())?;
    let (_, ml_secs) = run_pipeline(&full.noisy, Scheme::Ml, SpNorm::TwoThirds, 60.0, &table).map_err(|e| e.to_string())?;
    ensure(tt_secs <= 53.1, || format!("TT at CR 7 took {tt_secs:.1} s"))?;
    ensure(ml_secs <= 145.8, || format!("ML at CR 60 took {ml_secs:.1} s"))?;
    ensure(tt_secs < ml_secs, || format!("TT {tt_secs:.1} s not faster than ML {ml_secs:.1} s"))?;
    // same input, same request, summed over the whole grid
    let total = |s: Scheme| full.runs.iter().filter(|r| r.0 == s).map(|r| r.4).sum::<f64>();
    let (tt_total, ml_total) = (total(Scheme::Tt), total(Scheme::Ml));
    ensure(tt_total < ml_total, || format!("TT grid {tt_total:.0} s vs ML grid {ml_total:.0} s"))?;
    let slower = full
        .runs
        .iter()
        .filter(|r| r.0 == Scheme::Tt)
        .filter(|t| full.runs.iter().any(|m| m.0 == Scheme::Ml && m.1 == t.1 && m.2 == t.2 && m.4 <= t.4))
        .count();
    Ok(format!(
        "TT s23 CR 7 {tt_secs:.1} s, ML s23 CR 60 {ml_secs:.1} s; grid TT {tt_total:.0} s vs ML {ml_total:.0} s, TT slower in {slower}/16 pairs"
    ))
}

fn fuzz<T>(good: &[u8], decode: impl Fn(&[u8]) -> ttml::Result<T>, rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let mut rejected = 0;
    for trial in 0..3000 {
        let mut b = good.to_vec();
        match trial % 4 {
            0 => {
                let i = rng.gen_range(0..b.len().min(48));
                b[i] = rng.gen();
            }
            1 => {
                for _ in 0..rng.gen_range(1..6) {
                    let i = rng.gen_range(0..b.len());
                    b[i] ^= 1 << rng.gen_range(0..8);
                }
            }
            2 => b.truncate(rng.gen_range(0..b.len())),
            _ => b.extend((0..rng.gen_range(1..16)).map(|_| rng.gen::<u8>())),
        }
        let result = catch_unwind(AssertUnwindSafe(|| decode(&b).is_err()))
            .map_err(|_| format!("decoder panicked on trial {trial}"))?;
        // a header edit can land on another valid value; only panics are failures
        if result {
            rejected += 1;
        }
    }
    Ok(rejected)
}

fn formats() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_tensor(vec![6, 7, 5], &mut rng);
    let vol64 = encode_volume(&x, ElementType::F64).unwrap();
    ensure(decode_volume(&vol64).unwrap() == x, || "f64 volume roundtrip".into())?;
    let vol32 = encode_volume(&x, ElementType::F32).unwrap();
    let back = decode_volume(&vol32).unwrap();
    ensure(x.data().iter().zip(back.data()).all(|(a, b)| *b == *a as f32 as f64), || "f32 volume roundtrip".into())?;
    let tt = tt_svd_ranks(&x, &TtRank::new(vec![3, 4], x.dims()).unwrap()).unwrap();
    let tk = tucker_als(&x, &MlRank::new(vec![3, 4, 2], x.dims()).unwrap(), 1e-8, 20).unwrap();
    let mut models = Vec::new();
    for (model, norm) in [(CompressedModel::Tt(tt), SpNorm::Zero), (CompressedModel::Tucker(tk), SpNorm::Half)] {
        let stored = StoredModel::new(model, norm).unwrap();
        let bytes = encode_model(&stored).unwrap();
        let back = decode_model(&bytes).unwrap();
        ensure(back.model.ranks() == stored.model.ranks() && back.norm == norm, || "model header roundtrip".into())?;
        let quantized: Vec<f64> = match &stored.model {
            CompressedModel::Tt(m) => m.cores().iter().flat_map(|c| c.data().iter().map(|v| *v as f32 as f64)).collect(),
            CompressedModel::Tucker(m) => m
                .core()
                .data()
                .iter()
                .chain(m.factors().iter().flat_map(|f| f.data()))
                .map(|v| *v as f32 as f64)
                .collect(),
        };
        let stored_back: Vec<f64> = match &back.model {
            CompressedModel::Tt(m) => m.cores().iter().flat_map(|c| c.data().to_vec()).collect(),
            CompressedModel::Tucker(m) => {
                m.core().data().iter().chain(m.factors().iter().flat_map(|f| f.data())).copied().collect()
            }
        };
        ensure(quantized == stored_back, || "model payload roundtrip".into())?;
        models.push(bytes);
    }

    let class = |r: ttml::Result<()>| match r {
        Err(Error::Format(f)) => std::mem::discriminant(&f),
        other => panic!("expected a format error, got {other:?}"),
    };
    let vol = |b: &[u8]| decode_volume(b).map(|_| ());
    let model = |b: &[u8]| decode_model(b).map(|_| ());
    let flip = |src: &[u8], i: usize, v: u8| {
        let mut b = src.to_vec();
        b[i] = v;
        b
    };
    let mut seen = Vec::new();
    for (r, expect) in [
        (vol(&flip(&vol64, 0, b'Q')), FormatError::BadMagic { expected: *b"OCTV", found: *b"QCTV" }),
        (vol(&flip(&vol64, 4, 2)), FormatError::UnsupportedVersion(2)),
        (vol(&flip(&vol64, 6, 3)), FormatError::UnknownElementType(3)),
        (vol(&flip(&vol64, 8, 0)), FormatError::InvalidHeader(String::new())),
        (vol(&vol64[..vol64.len() - 5]), FormatError::Truncated { expected: 0, found: 0 }),
        (vol(&[vol64.clone(), vec![0]].concat()), FormatError::TrailingBytes(1)),
        (vol(&flip(&vol64, 40, vol64[40] ^ 0x10)), FormatError::CrcMismatch { stored: 0, computed: 0 }),
        (model(&flip(&models[1], 6, 7)), FormatError::UnknownModelKind(7)),
        (model(&flip(&models[1], 7, 9)), FormatError::UnknownNorm(9)),
        (model(&flip(&models[0], 21, 2)), FormatError::PayloadSizeMismatch { expected: 0, found: 0 }),
        (model(&{
            let mut b = models[0].clone();
            b[29..37].copy_from_slice(&2.5f64.to_le_bytes());
            b
        }), FormatError::CrMismatch { stored: 0.0, computed: 0.0 }),
    ] {
        let got = class(r);
        ensure(got == std::mem::discriminant(&expect), || format!("expected {expect:?}"))?;
        seen.push(got);
    }
    let mut nan = encode_volume(&DenseTensor::zeros(vec![1]).unwrap(), ElementType::F32).unwrap();
    nan[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
    let crc = crc32fast_hash(&nan[12..16]);
    nan[16..20].copy_from_slice(&crc.to_le_bytes());
    let got = class(vol(&nan));
    ensure(got == std::mem::discriminant(&FormatError::NonFinitePayload), || "NaN payload".into())?;
    seen.push(got);
    let distinct = seen.iter().collect::<std::collections::HashSet<_>>().len();
    ensure(distinct == seen.len(), || format!("only {distinct} distinct classes"))?;

    let mut rejected = fuzz(&vol64, vol, &mut rng)?;
    rejected += fuzz(&vol32, vol, &mut rng)?;
    for m in &models {
        rejected += fuzz(m, model, &mut rng)?;
    }
    Ok(format!("{} corruption classes, {rejected} fuzzed files rejected without panic", seen.len()))
}

/// CRC-32 (IEEE), computed bitwise so the check does not reuse the format code.
fn crc32fast_hash(data: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in data {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

fn report(name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(detail) => {
            println!("{name} PASS ({secs:.1} s): {detail}");
            true
        }
        Err(detail) => {
            println!("{name} FAIL ({secs:.1} s): {detail}");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    ok &= report("C1 prox-oracle equivalence", || {
        let start = Instant::now();
        let detail = prox_equivalence()?;
        let secs = start.elapsed().as_secs_f64();
        ensure(secs < 10.0, || format!("took {secs:.1} s"))?;
        Ok(detail)
    });
    ok &= report("C2 unfolding correctness", || {
        let start = Instant::now();
        let detail = unfolding_correctness()?;
        let secs = start.elapsed().as_secs_f64();
        ensure(secs < 5.0, || format!("took {secs:.1} s"))?;
        Ok(detail)
    });
    ok &= report("C3 TT-SVD error bound and exact recovery", tt_svd_bound);
    ok &= report("C4 Tucker monotonicity", tucker_monotone);
    ok &= report("C5 ADMM convergence", || {
        let start = Instant::now();
        let detail = admm_convergence()?;
        let secs = start.elapsed().as_secs_f64();
        ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
        Ok(detail)
    });
    let full = full_runs();
    let needs = |f: fn(&FullRuns) -> Check| {
        let full = &full;
        move || match full {
            Ok(runs) => f(runs),
            Err(e) => Err(format!("pipeline runs failed: {e}")),
        }
    };
    ok &= report("C6 CR targeting", needs(cr_targeting));
    ok &= report("C7 de-speckling efficacy", needs(despeckling));
    ok &= report("C8 runtime", needs(runtime));
    ok &= report("C9 formats", formats);
    if !ok {
        std::process::exit(1);
    }
}
