use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ttml::io::{self, FileInfo};
use ttml::pipeline::{calibrate_with_report, CalibrationOptions, CrResponse};
use ttml::{
    denoise_ml, denoise_tt, make_phantom, AdmmConfig, CalibrationTable, ElementType, Error, PipelineOptions,
    Scheme, SpNorm, SpeckledPhantomSpec, StoredModel,
};

#[derive(Parser)]
#[command(name = "ttml", version, about = "De-speckle and compress 3-D volumes with low-rank tensor models")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the CR -> penalty table for one scheme and norm
    Calibrate(CalibrateArgs),
    /// De-speckle a volume and fit a model at the requested CR
    Compress(CompressArgs),
    /// Expand a model file back into a volume
    Reconstruct(ReconstructArgs),
    /// Run the ADMM solver alone with explicit penalties
    Denoise(DenoiseArgs),
    /// Quality metrics as one CSV row
    Metrics(MetricsArgs),
    /// Write a synthetic speckled volume and its ground truth
    Phantom(PhantomArgs),
    /// Validate a volume or model file and print its header
    Info(InfoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

impl From<Precision> for ElementType {
    fn from(p: Precision) -> Self {
        match p {
            Precision::F32 => ElementType::F32,
            Precision::F64 => ElementType::F64,
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, value_parser = parse_scheme)]
    mode: Scheme,
    #[arg(long, value_parser = parse_norm)]
    norm: SpNorm,
    /// Comma-separated CR targets; twelve log-spaced values in [1, 100] by default
    #[arg(long, value_delimiter = ',')]
    targets: Vec<f64>,
    /// Table file; an existing table is updated in place
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e3)]
    mu_max_factor: f64,
    #[arg(required = true)]
    volumes: Vec<PathBuf>,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long, value_parser = parse_scheme)]
    mode: Scheme,
    #[arg(long, value_parser = parse_norm)]
    norm: SpNorm,
    #[arg(long)]
    cr: f64,
    /// Calibration table; the built-in one when omitted
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fit the model to the de-speckled volume instead of the input
    #[arg(long)]
    decompose_denoised: bool,
    #[arg(long)]
    eps_r: Option<f64>,
    #[arg(long)]
    itmax: Option<usize>,
    /// Also write the de-speckled volume
    #[arg(long)]
    out_denoised: Option<PathBuf>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    element: Precision,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long, value_parser = parse_scheme)]
    mode: Scheme,
    #[arg(long, value_parser = parse_norm)]
    norm: SpNorm,
    #[arg(long)]
    mu0: f64,
    #[arg(long)]
    mu_max: f64,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    eps_r: Option<f64>,
    #[arg(long)]
    itmax: Option<usize>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    element: Precision,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Ground truth for the relative error
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Homogeneous region (CSV of 1-based i1,i2,i3) for CNR and the SNR peak
    #[arg(long)]
    region: Option<PathBuf>,
    /// Background region for SNR
    #[arg(long)]
    background: Option<PathBuf>,
    /// Automatic and manual surface CSVs for the segmentation error
    #[arg(long, num_args = 2, value_names = ["AUTO", "MANUAL"])]
    surfaces: Option<Vec<PathBuf>>,
    /// 1-based B-scans scored by the segmentation error; all by default
    #[arg(long, value_delimiter = ',')]
    bscans: Vec<usize>,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, num_args = 3, value_names = ["I1", "I2", "I3"], default_values_t = [480, 512, 64])]
    dims: Vec<usize>,
    /// Multilinear rank of the clean volume
    #[arg(long, num_args = 3, value_names = ["R1", "R2", "R3"], default_values_t = [12, 16, 8])]
    rank: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    looks: f64,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long)]
    out_clean: PathBuf,
    #[arg(long)]
    out_noisy: PathBuf,
    /// Mask CSV of one homogeneous tissue layer
    #[arg(long)]
    out_region: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    region_label: u8,
    /// Mask CSV of the background
    #[arg(long)]
    out_background: Option<PathBuf>,
    /// Surface CSV of the true layer boundaries
    #[arg(long)]
    out_surfaces: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    element: Precision,
}

#[derive(Args)]
struct InfoArgs {
    #[arg(long = "in")]
    input: PathBuf,
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse::<Scheme>().map_err(|e| e.to_string())
}

fn parse_norm(s: &str) -> Result<SpNorm, String> {
    s.parse::<SpNorm>().map_err(|e| e.to_string())
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(e) => match e {
                Error::InvalidConfig(_)
                | Error::ModeOutOfRange { .. }
                | Error::RankBound(_)
                | Error::MissingCalibration { .. } => 1,
                Error::InvalidInput(_)
                | Error::ShapeMismatch(_)
                | Error::Degenerate(_)
                | Error::Format(_)
                | Error::Parse { .. }
                | Error::Io(_) => 2,
                Error::NonFinite(_) | Error::Numerical(_) => 3,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult = Result<(), Failure>;

fn with_path<T>(path: &Path, r: ttml::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))).into(),
        other => other.into(),
    })
}

fn load_volume(path: &Path) -> Result<ttml::DenseTensor, Failure> {
    with_path(path, io::read_volume(path))
}

fn calibrate(a: CalibrateArgs) -> CliResult {
    let targets = if a.targets.is_empty() { ttml::pipeline::default_cr_targets() } else { a.targets };
    let volumes = a.volumes.iter().map(|p| load_volume(p)).collect::<Result<Vec<_>, _>>()?;
    let opts = CalibrationOptions { mu_max_factor: a.mu_max_factor, ..CalibrationOptions::default() };
    let (fresh, report) = calibrate_with_report(&volumes, a.mode, a.norm, &targets, &opts)?;
    let mut table = if a.out.exists() {
        with_path(&a.out, std::fs::read_to_string(&a.out).map_err(Error::from))?.parse::<CalibrationTable>()?
    } else {
        CalibrationTable::new()
    };
    table.merge(&fresh);
    std::fs::write(&a.out, table.to_string())?;
    let direction = match report.response {
        CrResponse::Decreasing => "decreasing",
        CrResponse::Increasing => "increasing",
        CrResponse::Flat => "flat",
    };
    let knots = fresh.samples(a.mode, a.norm).map_or(0, |s| s.len());
    println!(
        "{}/{}: {knots} knots from {} solver runs, CR {direction} in mu0",
        a.mode,
        a.norm,
        report.evaluations.len()
    );
    for t in &report.missed {
        eprintln!("warning: CR {t:.3} not reachable");
    }
    Ok(())
}

fn compress(a: CompressArgs) -> CliResult {
    if !(a.cr > 1.0 && a.cr.is_finite()) {
        return Err(Failure::Usage(format!("--cr must exceed 1, got {}", a.cr)));
    }
    let table = match &a.table {
        Some(p) => with_path(p, std::fs::read_to_string(p).map_err(Error::from))?.parse::<CalibrationTable>()?,
        None => CalibrationTable::builtin(),
    };
    let x = load_volume(&a.input)?;
    let opts = PipelineOptions {
        decompose_denoised: a.decompose_denoised,
        eps_r: a.eps_r,
        itmax: a.itmax,
        ..PipelineOptions::default()
    };
    let out = match a.mode {
        Scheme::Tt => ttml::pipeline::despeckle_compress_tt_with(&x, a.cr, a.norm, &table, &opts)?,
        Scheme::Ml => ttml::pipeline::despeckle_compress_ml_with(&x, a.cr, a.norm, &table, &opts)?,
    };
    io::write_model(&StoredModel::new(out.model.clone(), a.norm)?, &a.out)?;
    if let Some(p) = &a.out_denoised {
        io::write_volume(&out.denoised, p, ElementType::F32)?;
    }
    println!("requested_cr,achieved_cr,ranks,natural_ranks,iterations,converged,mu0,mu_max");
    let join = |v: &[usize]| v.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" ");
    println!(
        "{},{},{},{},{},{},{:e},{:e}",
        out.requested_cr,
        out.achieved_cr,
        join(&out.model.ranks()),
        join(&out.natural_ranks),
        out.admm_trace.iterations,
        out.admm_trace.converged,
        out.mu0,
        out.mu_max
    );
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> CliResult {
    let stored = with_path(&a.input, io::read_model(&a.input))?;
    io::write_volume(&stored.model.reconstruct(), &a.out, a.element.into())?;
    Ok(())
}

fn denoise(a: DenoiseArgs) -> CliResult {
    let mut cfg = match a.mode {
        Scheme::Tt => AdmmConfig::tt(a.norm, a.mu0, a.mu_max),
        Scheme::Ml => AdmmConfig::ml(a.norm, a.mu0, a.mu_max),
    };
    if let Some(r) = a.rho {
        cfg.rho = r;
    }
    if let Some(e) = a.eps_r {
        cfg.eps_r = e;
    }
    if let Some(i) = a.itmax {
        cfg.itmax = i;
    }
    cfg.validate()?;
    let x = load_volume(&a.input)?;
    let (z, trace) = match a.mode {
        Scheme::Tt => denoise_tt(&x, &cfg)?,
        Scheme::Ml => {
            let (z, trace, est) = denoise_ml(&x, &cfg)?;
            eprintln!("unfolding ranks {:?}", est.ranks);
            (z, trace)
        }
    };
    io::write_volume(&z, &a.out, a.element.into())?;
    eprintln!(
        "{} iterations, converged {}, final relative change {:e}",
        trace.iterations,
        trace.converged,
        trace.rel_change.last().copied().unwrap_or(0.0)
    );
    Ok(())
}

fn metrics(a: MetricsArgs) -> CliResult {
    let x = load_volume(&a.input)?;
    let rel = match &a.reference {
        Some(p) => Some(ttml::relative_error(&load_volume(p)?, &x)?),
        None => None,
    };
    let region = match &a.region {
        Some(p) => Some(with_path(p, io::read_region_mask(p, x.dims()))?),
        None => None,
    };
    let background = match &a.background {
        Some(p) => Some(with_path(p, io::read_region_mask(p, x.dims()))?),
        None => None,
    };
    let cnr = match &region {
        Some(r) => Some(ttml::cnr(&x, r)?),
        None => None,
    };
    let snr = match (&region, &background) {
        (Some(r), Some(b)) => Some(ttml::snr(&x, r, b)?),
        (None, Some(b)) => {
            let all = ttml::RegionMask::new(x.dims().to_vec(), vec![true; x.len()])?;
            Some(ttml::snr(&x, &all, b)?)
        }
        _ => None,
    };
    let se = match &a.surfaces {
        Some(paths) => {
            let auto = with_path(&paths[0], io::read_surfaces(&paths[0]))?;
            let manual = with_path(&paths[1], io::read_surfaces(&paths[1]))?;
            let bscans = if a.bscans.is_empty() { (1..=manual.bscans()).collect() } else { a.bscans.clone() };
            Some(ttml::segmentation_error(&auto, &manual, &bscans)?)
        }
        None => None,
    };
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
    println!("relative_error,cnr,snr,se");
    println!("{},{},{},{}", cell(rel), cell(cnr), cell(snr), cell(se));
    Ok(())
}

fn phantom(a: PhantomArgs) -> CliResult {
    let spec = SpeckledPhantomSpec::new(
        [a.dims[0], a.dims[1], a.dims[2]],
        [a.rank[0], a.rank[1], a.rank[2]],
        a.looks,
        a.seed,
    );
    let (clean, noisy) = make_phantom(&spec)?;
    io::write_volume(&clean, &a.out_clean, a.element.into())?;
    io::write_volume(&noisy, &a.out_noisy, a.element.into())?;
    if let Some(p) = &a.out_region {
        if a.region_label == 0 || a.region_label as usize >= ttml::phantom::LAYER_COUNT {
            return Err(Failure::Usage(format!("--region-label must be a tissue label, got {}", a.region_label)));
        }
        std::fs::write(p, io::format_region_mask(&spec.layer_mask(a.region_label)?))?;
    }
    if let Some(p) = &a.out_background {
        std::fs::write(p, io::format_region_mask(&spec.layer_mask(0)?))?;
    }
    if let Some(p) = &a.out_surfaces {
        std::fs::write(p, io::format_surfaces(&spec.surfaces()?))?;
    }
    Ok(())
}

fn info(a: InfoArgs) -> CliResult {
    let bytes = with_path(&a.input, std::fs::read(&a.input).map_err(Error::from))?;
    match io::inspect(&bytes)? {
        FileInfo::Volume { header, bytes } => {
            println!("kind: volume");
            println!("version: {}", header.version);
            println!("element: {:?}", header.element);
            println!("dims: {:?}", header.dims);
            println!("bytes: {bytes}");
        }
        FileInfo::Model { header, bytes } => {
            println!("kind: {}", if header.kind == io::KIND_TT { "tt" } else { "tucker" });
            println!("version: {}", header.version);
            println!("norm: {}", header.norm);
            println!("dims: {:?}", header.dims);
            println!("ranks: {:?}", header.ranks);
            println!("cr: {}", header.cr);
            println!("bytes: {bytes}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Command::Calibrate(a) => calibrate(a),
        Command::Compress(a) => compress(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Denoise(a) => denoise(a),
        Command::Metrics(a) => metrics(a),
        Command::Phantom(a) => phantom(a),
        Command::Info(a) => info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
