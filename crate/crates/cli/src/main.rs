//! `dynct` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dynct::acquisition::{
    bit_reversed_schedule, calibrate_noise_sigma, reduced_view_schedule, simulate_measurements, uniform_schedule,
    CalibrationOptions,
};
use dynct::datasets::{
    load_object, load_sinograms, procedural_phantom_with, save_object, save_sinograms, walnut_training_slices,
    PhantomOptions, PhantomRecipe,
};
use dynct::embedding::{fit_nf_embedding, psm_embedding, write_results_csv, EmbedConfig};
use dynct::experiment::{load_config, run_experiment, ExperimentConfig};
use dynct::metrics::evaluate;
use dynct::nf::NfArch;
use dynct::recon::{
    rsr_nf_reconstruct, temp_nf_reconstruct, write_history_csv, AdmmState, Reconstruction, RunOptions, SolverConfig,
};
use dynct::restoration::{evaluate_restorer, train_restorer, RestorationModel, TrainConfig};
use dynct::tomo::fbp_sliding_window;
use dynct::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "dynct", version, about = "Dynamic CT reconstruction with neural fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural dynamic phantom.
    Phantom(PhantomArgs),
    /// Simulate one noisy projection per frame.
    Simulate(SimulateArgs),
    /// Pretrain the restoration network on degraded static slices.
    TrainRestorer(TrainArgs),
    /// Reconstruct a dynamic object from sinograms.
    Reconstruct(ReconArgs),
    /// Compare low-rank and neural-field embeddings of a known object.
    Embed(EmbedArgs),
    /// Score an estimate against a reference.
    Evaluate(EvalArgs),
    /// Run a TOML experiment.
    Run {
        config: PathBuf,
    },
    /// Run a TOML experiment over several distinct-view counts.
    Sweep {
        config: PathBuf,
        /// Comma-separated distinct view counts; overrides the config.
        #[arg(long, value_delimiter = ',')]
        distinct: Vec<usize>,
    },
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, default_value = "warped-walnut")]
    recipe: String,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 64)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    c_max: Option<f64>,
    #[arg(long, default_value_t = 8)]
    grid_rows: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    BitReversed,
    Uniform,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    object: PathBuf,
    #[arg(long, value_enum, default_value = "bit-reversed")]
    scheme: Scheme,
    /// Distinct angles, cycled over the frames.
    #[arg(long)]
    distinct: Option<usize>,
    /// Fixed noise level; calibrated against the first frame when absent.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 46.0)]
    target_psnr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 64)]
    slices: usize,
    /// Phantom seed to keep out of the training set.
    #[arg(long)]
    exclude_seed: Option<u64>,
    /// Training options as TOML; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ReconMethod {
    RsrNf,
    TempNf,
    Fbp,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args)]
struct ReconArgs {
    #[arg(long)]
    sinograms: PathBuf,
    #[arg(long, value_enum, default_value = "rsr-nf")]
    method: ReconMethod,
    /// Solver options as TOML; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    restorer: Option<PathBuf>,
    /// Ground truth for the per-iteration PSNR column.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    outer_iters: Option<usize>,
    #[arg(long)]
    inner_steps: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fit the initial field to the sliding-window FBP for this many steps.
    #[arg(long)]
    warm_start_steps: Option<usize>,
    #[arg(long, value_enum, default_value = "f32")]
    precision: Precision,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Continue from a saved solver checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum EmbedMethod {
    Psm,
    Nf,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    object: PathBuf,
    #[arg(long, value_enum)]
    method: EmbedMethod,
    /// Ranks for the low-rank model.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    rank: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    frequencies: usize,
    #[arg(long, default_value_t = 7)]
    hidden_layers: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 10_000)]
    iters: usize,
    #[arg(long, default_value_t = 5e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Restrict to these frames.
    #[arg(long, value_delimiter = ',')]
    frames: Vec<usize>,
    #[arg(long)]
    peak: Option<f64>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn phantom(a: PhantomArgs) -> Result<()> {
    let opts = PhantomOptions {
        c_max: a.c_max,
        grid_rows: a.grid_rows,
    };
    let obj = procedural_phantom_with(a.size, a.frames, PhantomRecipe::from_id(&a.recipe)?, a.seed, &opts)?;
    save_object(&obj, &a.out)?;
    log::info!("wrote {} ({} frames of {}x{})", a.out.display(), a.frames, a.size, a.size);
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let obj = load_object(&a.object)?;
    let p = obj.n_frames();
    let schedule = match (a.distinct, a.scheme) {
        (Some(d), _) if d < p => reduced_view_schedule(d, p)?,
        (_, Scheme::BitReversed) => bit_reversed_schedule(p)?,
        (_, Scheme::Uniform) => uniform_schedule(p)?,
    };
    let sigma = match a.sigma {
        Some(s) => s,
        None => {
            let opts = CalibrationOptions {
                target_psnr_db: a.target_psnr,
                ..Default::default()
            };
            calibrate_noise_sigma(&obj.frame(0), &opts)?.sigma
        }
    };
    let sinos = simulate_measurements(&obj, &schedule, sigma, a.seed)?;
    save_sinograms(&sinos, &a.out)?;
    println!("sigma {sigma:.6}");
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => TrainConfig::default(),
    };
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.steps_per_epoch = a.steps_per_epoch.unwrap_or(cfg.steps_per_epoch);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let frames = walnut_training_slices(a.size, a.slices, cfg.seed, a.exclude_seed);
    let (model, report) = train_restorer(&frames, &cfg)?;
    model.save(&a.out)?;
    let held_out = walnut_training_slices(a.size, 8, cfg.seed.wrapping_add(1_000_003), a.exclude_seed);
    let ev = evaluate_restorer(&model, &held_out, 4, cfg.blur_max, cfg.sigma_max, cfg.seed ^ 0xe7a1)?;
    println!(
        "trained in {:.1}s; held-out PSNR {:.2} dB -> {:.2} dB",
        report.seconds, ev.psnr_degraded_db, ev.psnr_restored_db
    );
    Ok(())
}

fn recon_with<T: dynct::real::Real>(a: &ReconArgs, cfg: &SolverConfig) -> Result<()> {
    let sinos = load_sinograms(&a.sinograms)?;
    let truth = a.truth.as_ref().map(load_object).transpose()?;
    let mut cfg = cfg.clone();
    let resume = match &a.resume {
        Some(p) => {
            let (state, saved) = AdmmState::<T>::load(p)?;
            cfg = saved;
            Some(state)
        }
        None => None,
    };
    let opts = RunOptions::<T> {
        ground_truth: truth.as_ref(),
        checkpoint_dir: a.checkpoint_dir.clone(),
        resume,
        ..Default::default()
    };
    let rec: Reconstruction<T> = match a.method {
        ReconMethod::TempNf => temp_nf_reconstruct(&sinos, &cfg, opts)?,
        ReconMethod::RsrNf => {
            let path = a
                .restorer
                .as_ref()
                .ok_or_else(|| Error::Validation("rsr-nf needs --restorer".into()))?;
            let model = RestorationModel::<f32>::load(path)?;
            rsr_nf_reconstruct(&sinos, &model, &cfg, opts)?
        }
        ReconMethod::Fbp => unreachable!("handled by the caller"),
    };
    save_object(&rec.object, &a.out)?;
    if let Some(h) = &a.history {
        write_history_csv(rec.history(), h)?;
    }
    if let Some(last) = rec.history().last() {
        println!("iterations {} objective {:.6e}", last.iter, last.objective);
    }
    if let Some(t) = &truth {
        println!("psnr {:.3} dB", evaluate(&rec.object, t, None, None)?.psnr_db);
    }
    Ok(())
}

fn reconstruct(a: ReconArgs) -> Result<()> {
    if a.method == ReconMethod::Fbp {
        let sinos = load_sinograms(&a.sinograms)?;
        let mut obj = fbp_sliding_window(&sinos)?;
        if let Some(t) = &a.truth {
            let t = load_object(t)?;
            obj.normalization = t.normalization;
            println!("psnr {:.3} dB", evaluate(&obj, &t, None, None)?.psnr_db);
        }
        return save_object(&obj, &a.out);
    }
    if a.method == ReconMethod::RsrNf && a.restorer.is_none() {
        return Err(Error::Validation("rsr-nf needs --restorer".into()));
    }
    let mut cfg: SolverConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => SolverConfig::default(),
    };
    cfg.outer_iters = a.outer_iters.unwrap_or(cfg.outer_iters);
    cfg.inner_steps = a.inner_steps.unwrap_or(cfg.inner_steps);
    cfg.lambda = a.lambda.unwrap_or(cfg.lambda);
    cfg.xi = a.xi.unwrap_or(cfg.xi);
    cfg.beta = a.beta.unwrap_or(cfg.beta);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.warm_start_steps = a.warm_start_steps.unwrap_or(cfg.warm_start_steps);
    cfg.validate()?;
    match a.precision {
        Precision::F32 => recon_with::<f32>(&a, &cfg),
        Precision::F64 => recon_with::<f64>(&a, &cfg),
    }
}

fn embed(a: EmbedArgs) -> Result<()> {
    let obj = load_object(&a.object)?;
    let mut results = Vec::new();
    match a.method {
        EmbedMethod::Psm => {
            for &k in &a.rank {
                results.push(psm_embedding(&obj, k)?.1);
            }
        }
        EmbedMethod::Nf => {
            let cfg = EmbedConfig {
                arch: NfArch {
                    frequencies: a.frequencies,
                    hidden_layers: a.hidden_layers,
                    width: a.width,
                    ..Default::default()
                },
                iters: a.iters,
                lr: a.lr,
                seed: a.seed,
                ..Default::default()
            };
            results.push(fit_nf_embedding::<f32>(&obj, &cfg)?.1);
        }
    }
    for r in &results {
        println!("{} params {} psnr {:.3} dB", r.label, r.param_count, r.psnr_db);
    }
    write_results_csv(&results, &a.out)
}

fn eval(a: EvalArgs) -> Result<()> {
    let est = load_object(&a.estimate)?;
    let reference = load_object(&a.reference)?;
    let frames = (!a.frames.is_empty()).then_some(a.frames.as_slice());
    let m = evaluate(&est, &reference, frames, a.peak)?;
    println!("{}", serde_json::to_string_pretty(&m)?);
    Ok(())
}

fn run(path: &Path, distinct: Option<Vec<usize>>) -> Result<()> {
    let mut cfg: ExperimentConfig = load_config(path)?;
    if let Some(d) = distinct {
        cfg.schedule.sweep_distinct = d;
    }
    let outcome = run_experiment(&cfg)?;
    for r in &outcome.rows {
        println!("{} {} distinct {} psnr {:.3} dB ssim {:.4}", r.run, r.method, r.distinct_views, r.psnr_db, r.ssim);
    }
    println!("results in {}", outcome.dir.display());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Validation => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Io => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Phantom(a) => phantom(a),
        Command::Simulate(a) => simulate(a),
        Command::TrainRestorer(a) => train(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Embed(a) => embed(a),
        Command::Evaluate(a) => eval(a),
        Command::Run { config } => run(&config, None),
        Command::Sweep { config, distinct } => run(&config, (!distinct.is_empty()).then_some(distinct)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
