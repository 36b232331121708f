use std::path::{Path, PathBuf};
use std::time::Instant;

use unmix_core::bregman::{self, BregmanConfig, RunOutcome};
use unmix_core::kernel::{gram, GramMatrix, KernelSpec};
use unmix_core::metrics;
use unmix_core::pixelwise::{DualSolution, PixelModel};
use unmix_core::scene::{
    self, AbundanceMatrix, EndmemberMatrix, SceneCube,
};
use unmix_core::synth::{
    self, AbundanceFieldSpec, FieldPattern, MixtureModel, MixtureSpec,
};
use unmix_core::{Result, UnmixError};

use crate::manifest::RunManifest;
use crate::{
    BenchArgs, CommonArgs, EvalArgs, GenerateArgs, MethodArg, ModelArg, PatternArg, ReplayArgs,
    UnmixArgs,
};

fn resolve_threads(common: &CommonArgs) -> usize {
    common
        .threads
        .or_else(|| {
            std::env::var("UNMIX_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

fn install_thread_pool(threads: usize) {
    // build_global fails if a pool already exists (replay path); that pool
    // then stays in effect, which is fine for a second in-process dispatch
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
}

fn ensure_output_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn parse_kernel(s: &str) -> Result<KernelSpec> {
    if s == "poly" {
        return Ok(KernelSpec::Polynomial);
    }
    if let Some(rest) = s.strip_prefix("gaussian:") {
        let sigma: f64 = rest
            .parse()
            .map_err(|e| UnmixError::InvalidArgument(format!("bad gaussian bandwidth: {e}")))?;
        return KernelSpec::gaussian(sigma);
    }
    if s == "gaussian" {
        return KernelSpec::gaussian(1.0);
    }
    Err(UnmixError::InvalidArgument(format!(
        "unknown kernel {s:?}; expected poly or gaussian:<sigma>"
    )))
}

fn model_arg_to_mixture(model: ModelArg) -> MixtureModel {
    match model {
        ModelArg::Linear => MixtureModel::Linear,
        ModelArg::Bilinear => MixtureModel::Bilinear,
        ModelArg::Pnmm => MixtureModel::Pnmm,
    }
}

fn load_library(path: &Option<PathBuf>) -> Result<EndmemberMatrix> {
    match path {
        Some(p) => scene::load_endmembers(p),
        None => Ok(synth::builtin_library()),
    }
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let threads = resolve_threads(&args.common);
    install_thread_pool(threads);
    let library = load_library(&args.endmembers)?;
    let m = synth::pick_endmembers(&library, args.r, args.seed)?;
    let m = match args.bands {
        Some(k) => m.subsample_bands(k)?,
        None => m,
    };
    let pattern = match args.pattern {
        PatternArg::Patches => FieldPattern::Patches {
            patch_size: args.patch_size,
            pure_fraction: args.pure_fraction,
        },
        PatternArg::Smooth => FieldPattern::SmoothField {
            correlation_length: args.correlation_length,
        },
    };
    let field = AbundanceFieldSpec {
        pattern,
        w: args.w,
        h: args.h,
        r: args.r,
        seed: args.seed,
    };
    field.validate()?;
    let mut mixture = MixtureSpec::new(model_arg_to_mixture(args.model), args.seed);
    mixture.pnmm_exponent = args.pnmm_exponent;
    mixture.snr_db = args.snr;
    mixture.validate()?;

    let dir = &args.common.output_dir;
    let mut manifest = RunManifest::new(generate_argv(args), vec![args.seed], threads);
    manifest.outputs = vec![
        "scene.hsc".into(),
        "truth.csv".into(),
        "endmembers.csv".into(),
    ];
    if args.common.dry_run {
        println!("{}", serde_json::to_string_pretty(&manifest).unwrap());
        return Ok(());
    }
    ensure_output_dir(dir)?;

    let start = Instant::now();
    let truth = synth::gen_abundances(&field)?;
    let clean = synth::mix(&truth, &m, &mixture, args.w, args.h)?;
    let cube = synth::add_noise(&clean, args.snr, args.seed)?;
    manifest.wall_ms = start.elapsed().as_secs_f64() * 1e3;

    scene::save_cube(&cube, dir.join("scene.hsc"))?;
    scene::save_abundances(&truth, dir.join("truth.csv"))?;
    scene::save_endmembers(&m, dir.join("endmembers.csv"))?;
    manifest.save(dir)?;
    println!(
        "generated {}x{} scene, {} bands, {} endmembers -> {}",
        args.w,
        args.h,
        cube.bands(),
        args.r,
        dir.display()
    );
    Ok(())
}

pub struct MethodRun {
    pub abundances: AbundanceMatrix,
    pub duals: Option<Vec<DualSolution>>,
    pub converged: bool,
    pub history: Vec<bregman::IterationStats>,
    pub skipped: Vec<usize>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_method(
    cube: &SceneCube,
    m: &EndmemberMatrix,
    gram_matrix: Option<&GramMatrix>,
    method: MethodArg,
    mu: f64,
    eta: f64,
    zeta0: f64,
    max_iter: usize,
    tol: f64,
    adapt_zeta: bool,
    skip_bad_pixels: bool,
    qp_trace: bool,
) -> Result<MethodRun> {
    let model = match method {
        MethodArg::Fcls | MethodArg::Sfcls => PixelModel::fcls(),
        MethodArg::Ncls | MethodArg::Sncls => PixelModel::ncls(),
        MethodArg::Khype | MethodArg::Skhype => PixelModel::khype(mu)?,
        MethodArg::Nkhype | MethodArg::Snkhype => PixelModel::nkhype(mu)?,
    };
    let outcome: RunOutcome = if method.is_spatial() {
        let mut config = BregmanConfig::new(model);
        config.eta = eta;
        config.zeta0 = zeta0;
        config.max_outer = max_iter;
        config.tol = tol;
        config.adapt_zeta = adapt_zeta;
        config.skip_bad_pixels = skip_bad_pixels;
        config.qp_trace = qp_trace;
        bregman::run(cube, m, gram_matrix, &config)?
    } else {
        bregman::unmix_pixelwise(cube, m, gram_matrix, &model, skip_bad_pixels)?
    };
    Ok(MethodRun {
        abundances: outcome.abundances,
        duals: outcome.duals,
        converged: outcome.converged,
        history: outcome.history,
        skipped: outcome.skipped_pixels,
    })
}

pub fn unmix(args: &UnmixArgs) -> Result<()> {
    let threads = resolve_threads(&args.common);
    install_thread_pool(threads);
    let kernel = parse_kernel(&args.kernel)?;
    let needs_kernel = matches!(
        args.method,
        MethodArg::Khype | MethodArg::Nkhype | MethodArg::Skhype | MethodArg::Snkhype
    );

    let dir = &args.common.output_dir;
    let mut manifest = RunManifest::new(unmix_argv(args), Vec::new(), threads);
    manifest.inputs = vec![
        args.input.display().to_string(),
        args.endmembers.display().to_string(),
    ];
    manifest.outputs = vec!["abundances.csv".into(), "history.csv".into()];

    let cube = scene::load_cube(&args.input)?;
    let m = scene::load_endmembers(&args.endmembers)?;
    let (cube, m) = match args.bands {
        Some(k) => (cube.subsample_bands(k)?, m.subsample_bands(k)?),
        None => (cube, m),
    };
    if m.bands() != cube.bands() {
        return Err(UnmixError::DimensionMismatch(format!(
            "cube has {} bands, endmembers {}",
            cube.bands(),
            m.bands()
        )));
    }
    if args.common.dry_run {
        println!("{}", serde_json::to_string_pretty(&manifest).unwrap());
        return Ok(());
    }
    ensure_output_dir(dir)?;

    let gram_matrix = if needs_kernel {
        Some(gram(kernel, &m)?)
    } else {
        None
    };

    let start = Instant::now();
    let run = run_method(
        &cube,
        &m,
        gram_matrix.as_ref(),
        args.method,
        args.mu,
        args.eta,
        args.zeta0,
        args.max_iter,
        args.tol,
        args.adapt_zeta,
        args.skip_bad_pixels,
        args.qp_trace,
    )?;
    let wall = start.elapsed().as_secs_f64() * 1e3;
    manifest.wall_ms = wall;
    manifest.ms_per_pixel = Some(wall / cube.num_pixels() as f64);
    manifest.converged = Some(run.converged);

    scene::save_abundances(&run.abundances, dir.join("abundances.csv"))?;
    save_history(&run.history, dir.join("history.csv"))?;
    if args.pgm {
        scene::save_abundance_pgms(
            &run.abundances,
            dir.join("abundances.pgm"),
            cube.width(),
            cube.height(),
        )?;
    }
    manifest.save(dir)?;

    let recon = metrics::reconstruction_rmse(
        &cube,
        &m,
        gram_matrix.as_ref(),
        &run.abundances,
        run.duals.as_deref(),
    )?;
    println!(
        "method {} on {} pixels: reconstruction rmse {:.6}, {:.3} ms/pixel, converged {}",
        args.method.as_str(),
        cube.num_pixels(),
        recon,
        wall / cube.num_pixels() as f64,
        run.converged
    );
    if !run.skipped.is_empty() {
        println!("skipped pixels: {:?}", run.skipped);
    }
    Ok(())
}

fn save_history(history: &[bregman::IterationStats], path: PathBuf) -> Result<()> {
    let mut body = String::from("iter,rho_A,rho_U,r_p,r_d,zeta,objective\n");
    for h in history {
        body.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            h.iter, h.rho_a, h.rho_u, h.r_primal, h.r_dual, h.zeta, h.objective
        ));
    }
    std::fs::write(path, body)?;
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let truth = scene::load_abundances_any(&args.truth)?;
    let est = scene::load_abundances_any(&args.est)?;
    let rmse = metrics::rmse(&truth, &est)?;
    let per = metrics::per_endmember_rmse(&truth, &est)?;
    let reconstruction = match (&args.cube, &args.endmembers) {
        (Some(cube_path), Some(em_path)) => {
            let cube = scene::load_cube(cube_path)?;
            let m = scene::load_endmembers(em_path)?;
            Some(metrics::reconstruction_rmse(&cube, &m, None, &est, None)?)
        }
        (Some(_), None) | (None, Some(_)) => {
            return Err(UnmixError::InvalidArgument(
                "--cube and --endmembers must be given together".into(),
            ));
        }
        (None, None) => None,
    };
    let report = metrics::EvalReport {
        rmse,
        per_endmember_rmse: per,
        reconstruction_rmse: reconstruction,
        runtime_ms_per_pixel: None,
    };
    if args.common.dry_run {
        return Ok(());
    }
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}

const BENCH_METHODS: [MethodArg; 8] = [
    MethodArg::Fcls,
    MethodArg::Ncls,
    MethodArg::Sfcls,
    MethodArg::Sncls,
    MethodArg::Khype,
    MethodArg::Nkhype,
    MethodArg::Skhype,
    MethodArg::Snkhype,
];
const BENCH_MODELS: [ModelArg; 2] = [ModelArg::Bilinear, ModelArg::Pnmm];

pub fn bench(args: &BenchArgs) -> Result<()> {
    if args.seeds == 0 {
        return Err(UnmixError::InvalidArgument("need at least one seed".into()));
    }
    let threads = resolve_threads(&args.common);
    install_thread_pool(threads);
    let dir = &args.common.output_dir;
    let mut manifest = RunManifest::new(bench_argv(args), (0..args.seeds).collect(), threads);
    manifest.outputs = vec!["bench.csv".into()];
    if args.common.dry_run {
        println!("{}", serde_json::to_string_pretty(&manifest).unwrap());
        return Ok(());
    }
    ensure_output_dir(dir)?;
    let library = load_library(&args.endmembers)?;

    let start = Instant::now();
    // rmse[method][model] over seeds; ms/pixel accumulated per cell
    let mut rmse_table = vec![vec![Vec::new(); BENCH_MODELS.len()]; BENCH_METHODS.len()];
    let mut ms_table = vec![vec![0.0f64; BENCH_MODELS.len()]; BENCH_METHODS.len()];
    for seed in 0..args.seeds {
        for (model_idx, model) in BENCH_MODELS.iter().enumerate() {
            let m = synth::pick_endmembers(&library, args.r, seed)?.subsample_bands(args.bands)?;
            let field = AbundanceFieldSpec {
                pattern: FieldPattern::Patches {
                    patch_size: args.patch_size,
                    pure_fraction: args.pure_fraction,
                },
                w: args.w,
                h: args.h,
                r: args.r,
                seed,
            };
            let mut mixture = MixtureSpec::new(model_arg_to_mixture(*model), seed);
            mixture.snr_db = args.snr;
            let truth = synth::gen_abundances(&field)?;
            let clean = synth::mix(&truth, &m, &mixture, args.w, args.h)?;
            let cube = synth::add_noise(&clean, args.snr, seed)?;
            let gram_matrix = gram(KernelSpec::Polynomial, &m)?;

            for (method_idx, method) in BENCH_METHODS.iter().enumerate() {
                let t0 = Instant::now();
                let run = run_method(
                    &cube,
                    &m,
                    Some(&gram_matrix),
                    *method,
                    args.mu,
                    args.eta,
                    1.0,
                    10,
                    1e-5,
                    true,
                    false,
                    false,
                )?;
                let elapsed_ms = t0.elapsed().as_secs_f64() * 1e3;
                let r = metrics::rmse(&truth, &run.abundances)?;
                rmse_table[method_idx][model_idx].push(r);
                ms_table[method_idx][model_idx] += elapsed_ms / cube.num_pixels() as f64;
            }
        }
    }
    manifest.wall_ms = start.elapsed().as_secs_f64() * 1e3;

    let mut body = String::from(
        "method,bilinear_rmse_mean,bilinear_rmse_std,pnmm_rmse_mean,pnmm_rmse_std,bilinear_ms_per_pixel,pnmm_ms_per_pixel\n",
    );
    println!(
        "{:<8} {:>24} {:>24} {:>12} {:>12}",
        "method", "bilinear rmse", "pnmm rmse", "ms/px (bil)", "ms/px (pnmm)"
    );
    for (method_idx, method) in BENCH_METHODS.iter().enumerate() {
        let (bm, bs) = metrics::mean_std(&rmse_table[method_idx][0]);
        let (pm, ps) = metrics::mean_std(&rmse_table[method_idx][1]);
        let ms_b = ms_table[method_idx][0] / args.seeds as f64;
        let ms_p = ms_table[method_idx][1] / args.seeds as f64;
        body.push_str(&format!(
            "{},{bm:.6},{bs:.6},{pm:.6},{ps:.6},{ms_b:.4},{ms_p:.4}\n",
            method.as_str()
        ));
        println!(
            "{:<8} {bm:>14.4} ± {bs:.4} {pm:>14.4} ± {ps:.4} {ms_b:>12.3} {ms_p:>12.3}",
            method.as_str()
        );
    }
    std::fs::write(dir.join("bench.csv"), body)?;
    manifest.save(dir)?;
    Ok(())
}

pub fn replay(args: &ReplayArgs) -> Result<()> {
    use clap::Parser;
    let manifest = RunManifest::load(&args.manifest)?;
    let mut argv: Vec<String> = vec!["unmix".to_string()];
    let mut recorded = manifest.command.iter().cloned();
    while let Some(tok) = recorded.next() {
        if tok == "--output-dir" {
            recorded.next();
            continue;
        }
        argv.push(tok);
    }
    let dir = args
        .output_dir
        .clone()
        .or_else(|| find_recorded_output_dir(&manifest.command))
        .unwrap_or_else(|| PathBuf::from("."));
    argv.push("--output-dir".into());
    argv.push(dir.display().to_string());
    let cli = crate::Cli::try_parse_from(&argv).map_err(|e| {
        UnmixError::InvalidArgument(format!("manifest command does not parse: {e}"))
    })?;
    match cli.command {
        crate::Command::Generate(a) => generate(&a),
        crate::Command::Unmix(a) => unmix(&a),
        crate::Command::Eval(a) => eval(&a),
        crate::Command::Bench(a) => bench(&a),
        crate::Command::Replay(_) => Err(UnmixError::InvalidArgument(
            "a manifest cannot record a replay".into(),
        )),
    }
}

fn find_recorded_output_dir(command: &[String]) -> Option<PathBuf> {
    command
        .windows(2)
        .find(|w| w[0] == "--output-dir")
        .map(|w| PathBuf::from(&w[1]))
}

fn push_flag(argv: &mut Vec<String>, name: &str, value: impl ToString) {
    argv.push(name.to_string());
    argv.push(value.to_string());
}

fn generate_argv(args: &GenerateArgs) -> Vec<String> {
    let mut v = vec!["generate".to_string()];
    push_flag(&mut v, "--pattern", match args.pattern {
        PatternArg::Patches => "patches",
        PatternArg::Smooth => "smooth",
    });
    push_flag(&mut v, "--w", args.w);
    push_flag(&mut v, "--h", args.h);
    push_flag(&mut v, "--r", args.r);
    push_flag(&mut v, "--model", match args.model {
        ModelArg::Linear => "linear",
        ModelArg::Bilinear => "bilinear",
        ModelArg::Pnmm => "pnmm",
    });
    push_flag(&mut v, "--snr", if args.snr.is_infinite() { "inf".to_string() } else { args.snr.to_string() });
    push_flag(&mut v, "--seed", args.seed);
    if let Some(p) = &args.endmembers {
        push_flag(&mut v, "--endmembers", p.display());
    }
    if let Some(b) = args.bands {
        push_flag(&mut v, "--bands", b);
    }
    push_flag(&mut v, "--patch-size", args.patch_size);
    push_flag(&mut v, "--pure-fraction", args.pure_fraction);
    push_flag(&mut v, "--correlation-length", args.correlation_length);
    push_flag(&mut v, "--pnmm-exponent", args.pnmm_exponent);
    push_flag(&mut v, "--output-dir", args.common.output_dir.display());
    v
}

fn unmix_argv(args: &UnmixArgs) -> Vec<String> {
    let mut v = vec!["unmix".to_string()];
    push_flag(&mut v, "--input", args.input.display());
    push_flag(&mut v, "--endmembers", args.endmembers.display());
    push_flag(&mut v, "--method", args.method.as_str());
    push_flag(&mut v, "--mu", args.mu);
    push_flag(&mut v, "--eta", args.eta);
    push_flag(&mut v, "--zeta0", args.zeta0);
    push_flag(&mut v, "--max-iter", args.max_iter);
    push_flag(&mut v, "--tol", args.tol);
    push_flag(&mut v, "--adapt-zeta", args.adapt_zeta);
    push_flag(&mut v, "--kernel", &args.kernel);
    if let Some(b) = args.bands {
        push_flag(&mut v, "--bands", b);
    }
    if args.skip_bad_pixels {
        v.push("--skip-bad-pixels".into());
    }
    if args.pgm {
        v.push("--pgm".into());
    }
    push_flag(&mut v, "--output-dir", args.common.output_dir.display());
    v
}

fn bench_argv(args: &BenchArgs) -> Vec<String> {
    let mut v = vec!["bench".to_string()];
    push_flag(&mut v, "--seeds", args.seeds);
    push_flag(&mut v, "--w", args.w);
    push_flag(&mut v, "--h", args.h);
    push_flag(&mut v, "--r", args.r);
    push_flag(&mut v, "--snr", if args.snr.is_infinite() { "inf".to_string() } else { args.snr.to_string() });
    push_flag(&mut v, "--bands", args.bands);
    push_flag(&mut v, "--mu", args.mu);
    push_flag(&mut v, "--eta", args.eta);
    push_flag(&mut v, "--patch-size", args.patch_size);
    push_flag(&mut v, "--pure-fraction", args.pure_fraction);
    if let Some(p) = &args.endmembers {
        push_flag(&mut v, "--endmembers", p.display());
    }
    push_flag(&mut v, "--output-dir", args.common.output_dir.display());
    v
}
