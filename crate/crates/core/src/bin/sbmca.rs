use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use sbmca::audio::{read_signal, WavFormat};
use sbmca::dictionaries::{build_pulse_dictionary, symmetric_shifts, Dictionary};
use sbmca::metrics::{
    correlation_scale, default_lambda_grid, evaluate, grid_search, histogram, histogram_csv, log_grid, GridSpec,
    Method, Truth,
};
use sbmca::persist::{read_dataset, read_result, write_dataset, write_json_file, write_text, ResultWriter};
use sbmca::separators::{mca_separate_with, SeparationResult};
use sbmca::synth::{
    BackgroundSource, DatasetConfig, PulseSpec, DEFAULT_BLOCK_LEN, DEFAULT_FS, DEFAULT_JITTER, DEFAULT_RATE,
};
use sbmca::{blockify, sbmca_separate, truncated_svd_denoise, BlockMatrix, Error, Init, Result, SbmcaParams, SparseCode};

#[derive(Parser)]
#[command(name = "sbmca", version, about = "Semi-blind separation of a known periodic source from an unknown background")]
struct Cli {
    /// Worker threads (0 = rayon default). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic pulse-train + background mixture.
    Synth(SynthArgs),
    /// Separate a mixture into known and background components.
    Separate(SeparateArgs),
    /// Score a result directory against a dataset's ground truth.
    Eval(EvalArgs),
    /// Clairvoyant regularisation sweep for one method.
    Grid(GridArgs),
    /// Histogram of per-block errors.
    Hist(HistArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Number of samples.
    #[arg(long, default_value_t = DEFAULT_FS as usize * 10)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_FS)]
    fs: f64,
    /// Discharges per second.
    #[arg(long, default_value_t = DEFAULT_RATE)]
    rate: f64,
    #[arg(long, default_value_t = DEFAULT_BLOCK_LEN)]
    block_len: usize,
    #[arg(long, default_value_t = DEFAULT_JITTER)]
    jitter_max: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// RMS(x_u) / RMS(x_p).
    #[arg(long, default_value_t = 1.0)]
    rms_ratio: f64,
    /// Mono WAV or CSV used as background instead of the synthetic one.
    #[arg(long)]
    background: Option<PathBuf>,
    #[command(flatten)]
    low: LowPulseArgs,
    #[command(flatten)]
    high: HighPulseArgs,
    #[arg(long, default_value = "f32")]
    wav_format: WavFormat,
}

#[derive(Args)]
struct LowPulseArgs {
    #[arg(long, default_value_t = PulseSpec::default_low().carrier_freq)]
    low_freq: f64,
    #[arg(long, default_value_t = PulseSpec::default_low().decay_rate)]
    low_decay: f64,
    #[arg(long, default_value_t = PulseSpec::default_low().duration)]
    low_duration: f64,
    #[arg(long, default_value_t = PulseSpec::default_low().amplitude)]
    low_amplitude: f64,
    #[arg(long, default_value_t = PulseSpec::default_low().phase)]
    low_phase: f64,
}

#[derive(Args)]
struct HighPulseArgs {
    #[arg(long, default_value_t = PulseSpec::default_high().carrier_freq)]
    high_freq: f64,
    #[arg(long, default_value_t = PulseSpec::default_high().decay_rate)]
    high_decay: f64,
    #[arg(long, default_value_t = PulseSpec::default_high().duration)]
    high_duration: f64,
    #[arg(long, default_value_t = PulseSpec::default_high().amplitude)]
    high_amplitude: f64,
    #[arg(long, default_value_t = PulseSpec::default_high().phase)]
    high_phase: f64,
}

/// Source of the mixture and of the known dictionary.
#[derive(Args)]
struct InputArgs {
    /// Dataset directory written by `synth`.
    #[arg(long, conflicts_with = "input")]
    dataset: Option<PathBuf>,
    /// Mono WAV or CSV mixture.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Sampling rate of a CSV input.
    #[arg(long)]
    fs: Option<f64>,
    /// Block length; defaults to the dataset's.
    #[arg(long)]
    block_len: Option<usize>,
    /// Known dictionary file; built from the dataset's pulse prototypes otherwise.
    #[arg(long)]
    d1: Option<PathBuf>,
    /// Circular shifts -r..=r of each prototype in the built dictionary.
    #[arg(long, default_value_t = 8)]
    shift_range: i64,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 64)]
    num_atoms: usize,
    #[arg(long, default_value_t = 20)]
    inner_iters: usize,
    #[arg(long, default_value_t = 10)]
    outer_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    outer_tol: f64,
    #[arg(long, default_value = "mca-dct-omp")]
    init: Init,
    /// Seed of the dictionary initialisation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    lasso_max_iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    kkt_tol: f64,
}

#[derive(Args)]
struct SeparateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "sbmca")]
    method: Method,
    /// Penalty of the MCA baselines; required for them.
    #[arg(long)]
    lambda: Option<f64>,
    /// SBMCA penalties on the known codes, the learned-dictionary codes during
    /// learning, and the learned-dictionary codes in the final fit; required
    /// for sbmca.
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    /// Rank of the svd baseline.
    #[arg(long, default_value_t = 1)]
    rank: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "f32")]
    wav_format: WavFormat,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    result: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for report.json and block_errors.csv; defaults to the result directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    method: Method,
    /// Comma-separated MCA penalties.
    #[arg(long, value_delimiter = ',')]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    lambda1: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    lambda2: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    lambda3: Vec<f64>,
    /// Pair lambda2 with lambda3 instead of taking the full product.
    #[arg(long)]
    tie: bool,
    /// Density of default grids.
    #[arg(long, default_value_t = 7)]
    per_decade: usize,
    #[arg(long, default_value_t = 8)]
    shift_range: i64,
    #[arg(long)]
    d1: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HistArgs {
    /// CSV with a header row, e.g. block_errors.csv from `eval`.
    #[arg(long)]
    errors: PathBuf,
    #[arg(long, default_value = "err_xp")]
    column: String,
    #[arg(long, default_value_t = 30)]
    bins: usize,
    #[arg(long, default_value_t = 0.0)]
    lo: f64,
    #[arg(long, default_value_t = 1.5)]
    hi: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("could not size thread pool: {e}");
        }
    }
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Separate(a) => separate(a),
        Command::Eval(a) => eval(a),
        Command::Grid(a) => grid(a),
        Command::Hist(a) => hist(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = DatasetConfig {
        n: a.n,
        fs: a.fs,
        rate: a.rate,
        block_len: a.block_len,
        jitter_max: a.jitter_max,
        low: PulseSpec {
            carrier_freq: a.low.low_freq,
            decay_rate: a.low.low_decay,
            duration: a.low.low_duration,
            amplitude: a.low.low_amplitude,
            phase: a.low.low_phase,
        },
        high: PulseSpec {
            carrier_freq: a.high.high_freq,
            decay_rate: a.high.high_decay,
            duration: a.high.high_duration,
            amplitude: a.high.high_amplitude,
            phase: a.high.high_phase,
        },
        sigma: a.sigma,
        rms_ratio: a.rms_ratio,
        background: match a.background {
            Some(path) => BackgroundSource::File {
                path: path.to_string_lossy().into_owned(),
            },
            None => BackgroundSource::Synthetic,
        },
        seed: a.seed,
    };
    let ds = cfg.generate()?;
    write_dataset(&a.out, &cfg, &ds, a.wav_format)?;
    log::info!("wrote {} samples to {}", cfg.n, a.out.display());
    Ok(())
}

struct Loaded {
    x: BlockMatrix,
    fs: f64,
    d1: Dictionary,
    source: String,
}

fn known_dictionary(cfg: Option<&DatasetConfig>, fs: f64, m: usize, d1: Option<&Path>, shift_range: i64) -> Result<Dictionary> {
    if let Some(path) = d1 {
        return Dictionary::load(path);
    }
    let mut cfg = cfg.cloned().unwrap_or_else(|| DatasetConfig::default_with(0, 0.0));
    cfg.fs = fs;
    cfg.block_len = m;
    build_pulse_dictionary(&cfg.prototypes()?, &symmetric_shifts(shift_range))
}

fn load_input(a: &InputArgs) -> Result<Loaded> {
    match (&a.dataset, &a.input) {
        (Some(dir), _) => {
            let (cfg, ds) = read_dataset(dir)?;
            let m = a.block_len.unwrap_or(cfg.block_len);
            Ok(Loaded {
                x: blockify(&ds.x, m)?,
                fs: cfg.fs,
                d1: known_dictionary(Some(&cfg), cfg.fs, m, a.d1.as_deref(), a.shift_range)?,
                source: dir.display().to_string(),
            })
        }
        (None, Some(path)) => {
            let (x, wav_fs) = read_signal(path)?;
            let fs = match (wav_fs, a.fs) {
                (_, Some(fs)) => fs,
                (Some(fs), None) => fs,
                (None, None) => DEFAULT_FS,
            };
            let m = a.block_len.unwrap_or(DEFAULT_BLOCK_LEN);
            Ok(Loaded {
                x: blockify(&x, m)?,
                fs,
                d1: known_dictionary(None, fs, m, a.d1.as_deref(), a.shift_range)?,
                source: path.display().to_string(),
            })
        }
        (None, None) => Err(Error::InvalidArgument("one of --dataset or --input is required".into())),
    }
}

fn base_params(s: &SolverArgs, l1: f64, l2: f64, l3: f64) -> SbmcaParams {
    let mut p = SbmcaParams::new(l1, l2, l3, s.num_atoms, s.seed);
    p.dict_opts.inner_iters = s.inner_iters;
    p.max_outer_iters = s.outer_iters;
    p.outer_tol = s.outer_tol;
    p.init = s.init;
    p.lasso.max_iters = s.lasso_max_iters;
    p.lasso.kkt_tol = s.kkt_tol;
    p.dict_opts.lasso = p.lasso;
    p
}

fn separate(a: SeparateArgs) -> Result<()> {
    let required = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| Error::InvalidArgument(format!("{} needs --{flag}", a.method)))
    };
    let loaded = load_input(&a.input)?;
    let (res, d1, params_json) = match a.method {
        Method::Sbmca => {
            let params = base_params(
                &a.solver,
                required(a.lambda1, "lambda1")?,
                required(a.lambda2, "lambda2")?,
                required(a.lambda3, "lambda3")?,
            );
            params.validate()?;
            let res = sbmca_separate(&loaded.x, &loaded.d1, &params)?;
            (res, Some(&loaded.d1), serde_json::to_value(&params).unwrap_or_default())
        }
        Method::McaDct | Method::McaIdentity => {
            let d2 = a
                .method
                .fixed_background(loaded.x.block_len)?
                .expect("MCA methods have a fixed background");
            let lambda = required(a.lambda, "lambda")?;
            let lasso = base_params(&a.solver, lambda, lambda, lambda).lasso;
            lasso.validate()?;
            let res = mca_separate_with(&loaded.x, &loaded.d1, &d2, lambda, &lasso)?;
            (
                res,
                Some(&loaded.d1),
                serde_json::json!({ "lambda": lambda, "lasso": lasso }),
            )
        }
        Method::Svd => {
            let start = Instant::now();
            let low = truncated_svd_denoise(&loaded.x, a.rank)?;
            let rest = loaded.x.with_data(&loaded.x.data - &low.data)?;
            let q = loaded.x.num_blocks();
            let empty = |id: &str| SparseCode {
                coeffs: DMatrix::zeros(0, q),
                dict_id: id.to_string(),
            };
            let res = SeparationResult {
                xp_hat: low,
                xu_hat: rest,
                a1_hat: empty("svd"),
                a2_hat: empty("svd"),
                d2_hat: None,
                objective_trace: Vec::new(),
                outer_iters: 1,
                converged: true,
                wall_time: start.elapsed().as_secs_f64(),
            };
            (res, None, serde_json::json!({ "rank": a.rank }))
        }
    };
    if !res.converged {
        log::warn!("{} did not converge within its iteration limits", a.method);
    }
    let writer = ResultWriter {
        method: a.method.tag(),
        params: params_json,
        input: loaded.source,
        fs: loaded.fs,
        wav: a.wav_format,
    };
    writer.write(&a.out, d1, &res)?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let (manifest, xp_hat, xu_hat) = read_result(&a.result)?;
    let (_, ds) = read_dataset(&a.dataset)?;
    if manifest.orig_len != ds.x_p.len() {
        return Err(Error::InvalidArgument(format!(
            "result has {} samples but dataset has {}",
            manifest.orig_len,
            ds.x_p.len()
        )));
    }
    let method: Method = manifest.method.parse()?;
    let truth = Truth {
        x_p: &ds.x_p,
        x_u: &ds.x_u,
    };
    let report = evaluate(method, truth, &xp_hat, &xu_hat, manifest.params.clone())?;
    let out = a.out.unwrap_or(a.result);
    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        message: e.to_string(),
    })?;
    write_json_file(&out.join("report.json"), &report)?;
    write_text(&out.join("block_errors.csv"), &report.block_errors_csv())?;
    println!(
        "{}: SNR(x_p) = {} dB, SNR(x_u) = {} dB",
        method, report.snr_xp_db, report.snr_xu_db
    );
    Ok(())
}

fn grid(a: GridArgs) -> Result<()> {
    let (cfg, ds) = read_dataset(&a.dataset)?;
    let x = blockify(&ds.x, cfg.block_len)?;
    let d1 = known_dictionary(Some(&cfg), cfg.fs, cfg.block_len, a.d1.as_deref(), a.shift_range)?;
    let default_grid = |d: &Dictionary| -> Result<Vec<f64>> {
        let scale = correlation_scale(d, &x.data);
        if a.per_decade == 7 {
            default_lambda_grid(scale)
        } else {
            log_grid(1e-3 * scale, 1e1 * scale, a.per_decade)
        }
    };
    let or_default = |given: &Vec<f64>, d: &Dictionary| -> Result<Vec<f64>> {
        if given.is_empty() {
            default_grid(d)
        } else {
            Ok(given.clone())
        }
    };
    let spec = match a.method {
        Method::Sbmca => GridSpec::sbmca(
            or_default(&a.lambda1, &d1)?,
            or_default(&a.lambda2, &d1)?,
            or_default(&a.lambda3, &d1)?,
            a.tie,
        ),
        Method::McaDct | Method::McaIdentity => {
            let d2 = a.method.fixed_background(cfg.block_len)?.expect("fixed background");
            GridSpec::mca(a.method, or_default(&a.lambdas, &d1.concat(&d2)?)?)
        }
        Method::Svd => return Err(Error::InvalidArgument("the svd baseline has no regularisation grid".into())),
    };
    let base = base_params(&a.solver, 1.0, 1.0, 1.0);
    base.validate()?;
    let truth = Truth {
        x_p: &ds.x_p,
        x_u: &ds.x_u,
    };
    let outcome = grid_search(&x, truth, &d1, &spec, &base)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        message: e.to_string(),
    })?;
    write_text(&a.out.join("grid.csv"), &outcome.csv())?;
    let best = serde_json::json!({
        "method": a.method,
        "best_xp": { "snr_db": outcome.best_xp.snr_xp_db, "params": outcome.best_xp.params },
        "best_xu": { "snr_db": outcome.best_xu.snr_xu_db, "params": outcome.best_xu.params },
    });
    write_json_file(&a.out.join("best.json"), &best)?;
    write_text(&a.out.join("best_xp_block_errors.csv"), &outcome.best_xp.block_errors_csv())?;
    println!("method\ttarget\tsnr_db\tparams");
    println!("{}\tx_p\t{}\t{}", a.method, outcome.best_xp.snr_xp_db, lambdas_of(&outcome.best_xp.params));
    println!("{}\tx_u\t{}\t{}", a.method, outcome.best_xu.snr_xu_db, lambdas_of(&outcome.best_xu.params));
    Ok(())
}

fn lambdas_of(p: &serde_json::Value) -> String {
    ["lambda", "lambda1", "lambda2", "lambda3"]
        .iter()
        .filter_map(|k| p.get(*k).map(|v| format!("{k}={v}")))
        .collect::<Vec<_>>()
        .join(" ")
}

fn hist(a: HistArgs) -> Result<()> {
    let io = |e: String| Error::Io {
        path: a.errors.clone(),
        message: e,
    };
    let text = std::fs::read_to_string(&a.errors).map_err(|e| io(e.to_string()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| io("empty file".into()))?;
    let col = header
        .split(',')
        .position(|h| h.trim() == a.column)
        .ok_or_else(|| Error::InvalidArgument(format!("no column `{}` in {}", a.column, a.errors.display())))?;
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let field = line.split(',').nth(col).ok_or_else(|| io(format!("line {} is short", i + 2)))?;
        let v: f64 = field
            .trim()
            .parse()
            .map_err(|_| io(format!("line {}: not a number: {field}", i + 2)))?;
        values.push(v);
    }
    let bins = histogram(&values, a.bins, a.lo, a.hi)?;
    write_text(&a.out, &histogram_csv(&bins))?;
    Ok(())
}
