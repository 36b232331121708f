//! `unmix` drives the full pipeline: synthetic scene generation, abundance
//! estimation, evaluation against ground truth, and the benchmark table.
//! Every command writes a manifest next to its outputs so runs can be
//! replayed exactly.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use unmix_core::UnmixError;

#[derive(Parser, Debug)]
#[command(name = "unmix", version, about = "Nonlinear hyperspectral unmixing with spatial regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene (cube, true abundances, endmembers).
    Generate(GenerateArgs),
    /// Estimate abundances of a scene.
    Unmix(UnmixArgs),
    /// Compare an estimated abundance map against the ground truth.
    Eval(EvalArgs),
    /// Run the method x model benchmark and emit a table.
    Bench(BenchArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Directory for outputs (created if missing).
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
    /// Worker threads; falls back to UNMIX_THREADS, then all cores.
    /// 1 guarantees bit-exact reproducibility.
    #[arg(long)]
    threads: Option<usize>,
    /// Validate the whole configuration without computing.
    #[arg(long)]
    dry_run: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum PatternArg {
    Patches,
    Smooth,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ModelArg {
    Linear,
    Bilinear,
    Pnmm,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum MethodArg {
    Fcls,
    Ncls,
    Khype,
    Nkhype,
    Sfcls,
    Sncls,
    Skhype,
    Snkhype,
}

impl MethodArg {
    fn is_spatial(self) -> bool {
        matches!(
            self,
            MethodArg::Sfcls | MethodArg::Sncls | MethodArg::Skhype | MethodArg::Snkhype
        )
    }

    fn as_str(self) -> &'static str {
        match self {
            MethodArg::Fcls => "fcls",
            MethodArg::Ncls => "ncls",
            MethodArg::Khype => "khype",
            MethodArg::Nkhype => "nkhype",
            MethodArg::Sfcls => "sfcls",
            MethodArg::Sncls => "sncls",
            MethodArg::Skhype => "skhype",
            MethodArg::Snkhype => "snkhype",
        }
    }
}

fn parse_snr(s: &str) -> Result<f64, String> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(f64::INFINITY);
    }
    s.parse::<f64>().map_err(|e| e.to_string())
}

#[derive(Args, Debug, Clone)]
struct GenerateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum, default_value_t = PatternArg::Patches)]
    pattern: PatternArg,
    #[arg(long, default_value_t = 50)]
    w: usize,
    #[arg(long, default_value_t = 50)]
    h: usize,
    /// Endmember count drawn from the library.
    #[arg(long, default_value_t = 5)]
    r: usize,
    #[arg(long, value_enum, default_value_t = ModelArg::Bilinear)]
    model: ModelArg,
    /// Target SNR in dB, or `inf` for a noiseless cube.
    #[arg(long, value_parser = parse_snr, default_value = "20")]
    snr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Endmember library CSV; the bundled synthetic library when omitted.
    #[arg(long)]
    endmembers: Option<PathBuf>,
    /// Keep only this many uniformly strided bands.
    #[arg(long)]
    bands: Option<usize>,
    /// Patch edge length (patches pattern).
    #[arg(long, default_value_t = 10)]
    patch_size: usize,
    /// Fraction of pure patches (patches pattern).
    #[arg(long, default_value_t = 0.1)]
    pure_fraction: f64,
    /// Gaussian correlation length in pixels (smooth pattern).
    #[arg(long, default_value_t = 4.0)]
    correlation_length: f64,
    /// Exponent of the post-nonlinear model.
    #[arg(long, default_value_t = 0.7)]
    pnmm_exponent: f64,
}

#[derive(Args, Debug, Clone)]
struct UnmixArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input cube in HSC format.
    #[arg(long)]
    input: PathBuf,
    /// Endmember CSV (bands x R).
    #[arg(long)]
    endmembers: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Skhype)]
    method: MethodArg,
    /// Kernel trade-off for the kernel methods.
    #[arg(long, default_value_t = 0.01)]
    mu: f64,
    /// Spatial regularization weight (spatial methods).
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    /// Initial split-Bregman penalty.
    #[arg(long, default_value_t = 1.0)]
    zeta0: f64,
    /// Outer iteration cap.
    #[arg(long, default_value_t = 10)]
    max_iter: usize,
    /// Residual tolerance of the outer loop.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Rebalance zeta from the residual norms each iteration.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    adapt_zeta: bool,
    /// Kernel: `poly` or `gaussian:<sigma>`.
    #[arg(long, default_value = "poly")]
    kernel: String,
    /// Keep only this many uniformly strided bands.
    #[arg(long)]
    bands: Option<usize>,
    /// Replace failed pixels by the uniform abundance.
    #[arg(long)]
    skip_bad_pixels: bool,
    /// Also export one PGM grayscale map per endmember.
    #[arg(long)]
    pgm: bool,
    /// Dump per-iteration QP objectives to stderr.
    #[arg(long)]
    qp_trace: bool,
}

#[derive(Args, Debug, Clone)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Ground-truth abundance CSV.
    #[arg(long)]
    truth: PathBuf,
    /// Estimated abundance CSV.
    #[arg(long)]
    est: PathBuf,
    /// Scene cube; enables the reconstruction error.
    #[arg(long)]
    cube: Option<PathBuf>,
    /// Endmember CSV matching the estimate (required with --cube).
    #[arg(long)]
    endmembers: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 50)]
    w: usize,
    #[arg(long, default_value_t = 50)]
    h: usize,
    #[arg(long, default_value_t = 5)]
    r: usize,
    #[arg(long, value_parser = parse_snr, default_value = "20")]
    snr: f64,
    #[arg(long, default_value_t = 50)]
    bands: usize,
    #[arg(long, default_value_t = 0.01)]
    mu: f64,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = 10)]
    patch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pure_fraction: f64,
    /// Endmember library CSV; the bundled synthetic library when omitted.
    #[arg(long)]
    endmembers: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ReplayArgs {
    /// Manifest written by a previous run.
    #[arg(long)]
    manifest: PathBuf,
    /// Redirect outputs (defaults to the recorded directory).
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn exit_code_for(err: &UnmixError) -> u8 {
    match err {
        UnmixError::Io(_) | UnmixError::Format { .. } => 3,
        UnmixError::InvalidArgument(_) | UnmixError::DimensionMismatch(_) => 2,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => commands::generate(&args),
        Command::Unmix(args) => commands::unmix(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Bench(args) => commands::bench(&args),
        Command::Replay(args) => commands::replay(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
