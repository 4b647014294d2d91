//! Configuration-driven end-to-end runs: data, acquisition, reconstruction,
//! evaluation, and report files.

mod config;
pub mod plot;

use std::path::{Path, PathBuf};

use ndarray::Axis;
use serde::Serialize;

pub use config::{
    load_config, parse_config, DatasetSource, DatasetSpec, ExperimentConfig, Method, NoiseMode, NoiseSpec,
    Precision, RestorerSpec, ScheduleScheme, ScheduleSpec, OUTPUT_ROOT_ENV, SCHEMA_VERSION,
};

use crate::acquisition::{
    bit_reversed_schedule, calibrate_noise_sigma, reduced_view_schedule, simulate_measurements, uniform_schedule,
    AngleSchedule, CalibrationOptions, SinogramSet,
};
use crate::datasets::{
    ingest_volume, load_object, procedural_phantom_with, save_object, DynamicObject, PhantomOptions, PhantomRecipe,
};
use crate::error::{ensure, Error, ErrorKind, Result};
use crate::metrics::{evaluate, MetricsRecord};
use crate::real::Real;
use crate::recon::{rsr_nf_reconstruct, temp_nf_reconstruct, write_history_csv, HistoryRow, RunOptions, SolverConfig};
use crate::restoration::{IdentityRestorer, RestorationModel, Restorer};
use crate::tomo::fbp_sliding_window;
use plot::{hstack, line_chart_svg, save_gray_png, Series};

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub run: String,
    pub method: String,
    pub frames: usize,
    pub distinct_views: usize,
    pub noise_sigma: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub mae: f64,
    pub hfen: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const ERROR_FILE: &str = "error.json";
pub const CONFIG_SNAPSHOT: &str = "config.resolved.toml";

/// A failure tagged with the pipeline stage it happened in.
struct StageError {
    stage: &'static str,
    error: Error,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

fn write_error_manifest(dir: &Path, err: &StageError) {
    let kind = match err.error.kind() {
        ErrorKind::Validation => "validation",
        ErrorKind::Numerical => "numerical",
        ErrorKind::Io => "io",
    };
    let manifest = serde_json::json!({
        "stage": err.stage,
        "kind": kind,
        "message": err.error.to_string(),
    });
    if std::fs::create_dir_all(dir).is_ok() {
        let text = serde_json::to_string_pretty(&manifest).unwrap_or_default();
        if let Err(e) = std::fs::write(dir.join(ERROR_FILE), text) {
            log::error!("could not write the error manifest: {e}");
        }
    }
}

/// Runs the configured pipeline. On failure, everything produced so far is
/// left in place next to an `error.json` manifest naming the failed stage.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let dir = cfg.resolved_output_dir();
    match run_stages(cfg, &dir) {
        Ok(rows) => {
            let stale = dir.join(ERROR_FILE);
            if stale.exists() {
                std::fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
            }
            Ok(ExperimentOutcome { dir, rows })
        }
        Err(e) => {
            write_error_manifest(&dir, &e);
            Err(e.error)
        }
    }
}

fn run_stages(cfg: &ExperimentConfig, dir: &Path) -> std::result::Result<Vec<MetricsRow>, StageError> {
    cfg.validate().stage("validate")?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).stage("validate")?;
    let mut snapshot = cfg.clone();
    snapshot.output_dir = dir.to_path_buf();
    std::fs::write(dir.join(CONFIG_SNAPSHOT), snapshot.to_toml().stage("validate")?)
        .map_err(|e| Error::io(dir.join(CONFIG_SNAPSHOT), e))
        .stage("validate")?;
    let restorer = load_restorer(cfg).stage("validate")?;

    let truth = build_object(cfg).stage("dataset")?;
    save_object(&truth, dir.join("truth.dct")).stage("dataset")?;
    let sigma = noise_sigma(cfg, &truth).stage("noise")?;

    let p = truth.n_frames();
    let runs: Vec<(String, usize)> = if cfg.schedule.sweep_distinct.is_empty() {
        vec![("main".to_string(), cfg.schedule.distinct.unwrap_or(p))]
    } else {
        cfg.schedule.sweep_distinct.iter().map(|&d| (format!("distinct-{d}"), d)).collect()
    };
    let mut rows = Vec::new();
    for (name, distinct) in &runs {
        let run_dir = if runs.len() == 1 { dir.to_path_buf() } else { dir.join(name) };
        std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e)).stage("write")?;
        let schedule = build_schedule(cfg, p, *distinct).stage("simulate")?;
        let sinos = simulate_measurements(&truth, &schedule, sigma, cfg.noise_seed()).stage("simulate")?;
        let (recon, history) = reconstruct(cfg, &sinos, restorer.as_ref(), &truth, &run_dir).stage("reconstruct")?;
        let record = evaluate(&recon, &truth, None, None).stage("evaluate")?;
        write_run_outputs(&run_dir, &truth, &recon, &record, &history).stage("write")?;
        rows.push(MetricsRow {
            run: name.clone(),
            method: cfg.method.id().to_string(),
            frames: p,
            distinct_views: schedule.distinct_views,
            noise_sigma: sigma,
            psnr_db: record.psnr_db,
            ssim: record.ssim,
            mae: record.mae,
            hfen: record.hfen,
        });
    }
    write_metrics_csv(&rows, dir.join(METRICS_FILE)).stage("write")?;
    if runs.len() > 1 {
        let pts = rows.iter().map(|r| (r.distinct_views as f64, r.psnr_db)).collect();
        line_chart_svg(
            dir.join("psnr_vs_distinct_views.svg"),
            "PSNR vs distinct view angles",
            "distinct views",
            "PSNR (dB)",
            &[Series {
                label: cfg.method.id().into(),
                points: pts,
            }],
        )
        .stage("write")?;
    }
    Ok(rows)
}

fn load_restorer(cfg: &ExperimentConfig) -> Result<Option<Box<dyn Restorer>>> {
    if cfg.method != Method::RsrNf || cfg.solver.lambda == 0.0 {
        return Ok(None);
    }
    let path = cfg.restorer.checkpoint.as_ref().ok_or_else(|| {
        Error::Validation("rsr-nf with lambda > 0 needs `restorer.checkpoint`".into())
    })?;
    ensure!(path.is_file(), "restorer checkpoint {} does not exist", path.display());
    Ok(Some(Box::new(RestorationModel::<f32>::load(path)?)))
}

/// Generates or loads the ground-truth object.
pub fn build_object(cfg: &ExperimentConfig) -> Result<DynamicObject> {
    let d = &cfg.dataset;
    match d.source {
        DatasetSource::Phantom => {
            let opts = PhantomOptions {
                c_max: d.c_max,
                grid_rows: d.grid_rows,
            };
            procedural_phantom_with(d.size, d.frames, PhantomRecipe::from_id(&d.recipe)?, d.phantom_seed, &opts)
        }
        DatasetSource::Object => {
            let path = d.path.as_ref().ok_or_else(|| Error::Validation("dataset.path is required".into()))?;
            let obj = load_object(path)?;
            ensure!(
                obj.size() == d.size && obj.n_frames() == d.frames,
                "object at {} is {}x{} with {} frames, config expects {}x{} with {}",
                path.display(),
                obj.size(),
                obj.size(),
                obj.n_frames(),
                d.size,
                d.size,
                d.frames
            );
            Ok(obj)
        }
        DatasetSource::Volume => {
            let path = d.path.as_ref().ok_or_else(|| Error::Validation("dataset.path is required".into()))?;
            let slices = ingest_volume(path, d.size)?;
            ensure!(
                slices.len() >= d.frames,
                "volume has {} slices, {} frames requested",
                slices.len(),
                d.frames
            );
            DynamicObject::from_frames(&slices[..d.frames], format!("volume:{}", path.display()))
        }
    }
}

fn noise_sigma(cfg: &ExperimentConfig, truth: &DynamicObject) -> Result<f64> {
    match cfg.noise.mode {
        NoiseMode::None => Ok(0.0),
        NoiseMode::Fixed => Ok(cfg.noise.sigma),
        NoiseMode::Calibrated => {
            let opts = CalibrationOptions {
                target_psnr_db: cfg.noise.target_psnr_db,
                views: cfg.noise.views,
                ..Default::default()
            };
            let cal = calibrate_noise_sigma(&truth.frame(0), &opts)?;
            log::info!(
                "calibrated sigma {:.4} ({:.2} dB; noiseless {:.2} dB)",
                cal.sigma,
                cal.achieved_psnr_db,
                cal.noiseless_psnr_db
            );
            Ok(cal.sigma)
        }
    }
}

fn build_schedule(cfg: &ExperimentConfig, p: usize, distinct: usize) -> Result<AngleSchedule> {
    if distinct < p {
        return reduced_view_schedule(distinct, p);
    }
    match cfg.schedule.scheme {
        ScheduleScheme::BitReversed => bit_reversed_schedule(p),
        ScheduleScheme::Uniform => uniform_schedule(p),
    }
}

fn reconstruct(
    cfg: &ExperimentConfig,
    sinos: &SinogramSet,
    restorer: Option<&Box<dyn Restorer>>,
    truth: &DynamicObject,
    dir: &Path,
) -> Result<(DynamicObject, Vec<HistoryRow>)> {
    match cfg.precision {
        Precision::F32 => reconstruct_as::<f32>(cfg, sinos, restorer, truth, dir),
        Precision::F64 => reconstruct_as::<f64>(cfg, sinos, restorer, truth, dir),
    }
}

fn reconstruct_as<T: Real>(
    cfg: &ExperimentConfig,
    sinos: &SinogramSet,
    restorer: Option<&Box<dyn Restorer>>,
    truth: &DynamicObject,
    dir: &Path,
) -> Result<(DynamicObject, Vec<HistoryRow>)> {
    let opts = || RunOptions::<T> {
        ground_truth: Some(truth),
        checkpoint_dir: (cfg.solver.checkpoint_every > 0).then(|| dir.join("checkpoints")),
        ..Default::default()
    };
    let solver: &SolverConfig = &cfg.solver;
    let rec = match cfg.method {
        Method::Fbp => {
            let mut obj = fbp_sliding_window(sinos)?;
            obj.normalization = truth.normalization;
            return Ok((obj, Vec::new()));
        }
        Method::TempNf => temp_nf_reconstruct(sinos, solver, opts())?,
        Method::RsrNf => match restorer {
            Some(r) => rsr_nf_reconstruct(sinos, r.as_ref(), solver, opts())?,
            None => rsr_nf_reconstruct(sinos, &IdentityRestorer, solver, opts())?,
        },
    };
    let history = rec.state.history.clone();
    Ok((rec.object, history))
}

fn write_run_outputs(
    dir: &Path,
    truth: &DynamicObject,
    recon: &DynamicObject,
    record: &MetricsRecord,
    history: &[HistoryRow],
) -> Result<()> {
    save_object(recon, dir.join("reconstruction.dct"))?;
    let path = dir.join("per_frame.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for f in &record.per_frame {
        w.serialize(f)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    if !history.is_empty() {
        write_history_csv(history, dir.join("history.csv"))?;
        let pts = |f: fn(&HistoryRow) -> Option<f64>| -> Vec<(f64, f64)> {
            history.iter().filter_map(|r| f(r).map(|v| (r.iter as f64, v))).collect()
        };
        line_chart_svg(
            dir.join("psnr_vs_iteration.svg"),
            "PSNR vs outer iteration",
            "iteration",
            "PSNR (dB)",
            &[Series {
                label: recon.provenance.clone(),
                points: pts(|r| r.psnr),
            }],
        )?;
    }
    let per_t: Vec<(f64, f64)> = record.per_frame.iter().map(|f| (f.frame as f64, f.psnr_db)).collect();
    line_chart_svg(
        dir.join("psnr_vs_t.svg"),
        "PSNR vs time",
        "frame",
        "PSNR (dB)",
        &[Series {
            label: recon.provenance.clone(),
            points: per_t,
        }],
    )?;
    let peak = truth.normalization;
    let row = truth.size() / 2;
    let (xt_truth, xt_rec) = (truth.xt_slice(row), recon.xt_slice(row));
    let err = (&xt_rec - &xt_truth).mapv(f64::abs);
    save_gray_png(dir.join("xt_slice.png"), &hstack(&[&xt_truth, &xt_rec, &err], peak), 0.0, peak)?;
    let mid = truth.n_frames() / 2;
    let (a, b) = (
        truth.frames.index_axis(Axis(0), mid).to_owned(),
        recon.frames.index_axis(Axis(0), mid).to_owned(),
    );
    let e = (&b - &a).mapv(f64::abs);
    save_gray_png(dir.join("frame_mid.png"), &hstack(&[&a, &b, &e], peak), 0.0, peak)?;
    Ok(())
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
