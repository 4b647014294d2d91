//! TOML experiment description.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::PhantomRecipe;
use crate::error::{ensure, Error, Result};
use crate::recon::SolverConfig;

pub const SCHEMA_VERSION: u32 = 1;
/// When set, relative output directories are resolved against this root.
pub const OUTPUT_ROOT_ENV: &str = "DYNCT_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSource {
    #[default]
    Phantom,
    /// A saved dynamic object.
    Object,
    /// A directory of slice images or a raw volume, one slice per frame.
    Volume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub source: DatasetSource,
    pub recipe: String,
    pub size: usize,
    pub frames: usize,
    pub phantom_seed: u64,
    pub c_max: Option<f64>,
    pub grid_rows: usize,
    pub path: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            source: DatasetSource::Phantom,
            recipe: "warped-walnut".into(),
            size: 64,
            frames: 64,
            phantom_seed: 0,
            c_max: None,
            grid_rows: 8,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleScheme {
    #[default]
    BitReversed,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    pub scheme: ScheduleScheme,
    /// Number of distinct angles; fewer than the frame count cycles a
    /// bit-reversed set of that size.
    pub distinct: Option<usize>,
    /// Runs the pipeline once per entry, overriding `distinct`.
    pub sweep_distinct: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    #[default]
    Calibrated,
    Fixed,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub mode: NoiseMode,
    /// Used by `fixed`.
    pub sigma: f64,
    pub target_psnr_db: f64,
    pub views: usize,
    /// Defaults to a value derived from the top-level seed.
    pub seed: Option<u64>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            mode: NoiseMode::Calibrated,
            sigma: 0.0,
            target_psnr_db: 46.0,
            views: 512,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    RsrNf,
    TempNf,
    Fbp,
}

impl Method {
    pub fn id(&self) -> &'static str {
        match self {
            Method::RsrNf => "rsr-nf",
            Method::TempNf => "temp-nf",
            Method::Fbp => "fbp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RestorerSpec {
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub restorer: RestorerSpec,
}

impl ExperimentConfig {
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            output_dir: output_dir.into(),
            seed: 0,
            method: Method::default(),
            precision: Precision::default(),
            dataset: DatasetSpec::default(),
            schedule: ScheduleSpec::default(),
            noise: NoiseSpec::default(),
            solver: SolverConfig::default(),
            restorer: RestorerSpec::default(),
        }
    }

    pub fn noise_seed(&self) -> u64 {
        self.noise.seed.unwrap_or(self.seed ^ 0x6e6f_6973_65)
    }

    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Checks ranges and that every referenced file exists, before any work.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.schema_version == SCHEMA_VERSION,
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            self.schema_version
        );
        ensure!(!self.output_dir.as_os_str().is_empty(), "output_dir must not be empty");
        let d = &self.dataset;
        ensure!(d.size >= 2 && d.frames >= 2, "dataset needs size and frames >= 2");
        match d.source {
            DatasetSource::Phantom => {
                PhantomRecipe::from_id(&d.recipe)?;
                ensure!(d.grid_rows >= 1, "grid_rows must be at least 1");
                if let Some(c) = d.c_max {
                    ensure!(c.is_finite() && c >= 0.0, "c_max must be finite and >= 0");
                }
            }
            DatasetSource::Object | DatasetSource::Volume => {
                let p = d.path.as_ref().ok_or_else(|| Error::Validation("dataset.path is required".into()))?;
                ensure!(p.exists(), "dataset path {} does not exist", p.display());
            }
        }
        let mut distincts = self.schedule.sweep_distinct.clone();
        distincts.extend(self.schedule.distinct);
        for &k in &distincts {
            ensure!(
                k >= 1 && k <= d.frames && d.frames % k == 0,
                "distinct view count {k} must divide the frame count {}",
                d.frames
            );
        }
        let n = &self.noise;
        ensure!(n.sigma >= 0.0 && n.sigma.is_finite(), "noise sigma must be >= 0");
        ensure!(n.target_psnr_db.is_finite() && n.views >= 1, "invalid calibration settings");
        if self.method != Method::Fbp {
            self.solver.validate()?;
            if let Some(w) = self.solver.arch.expressivity_warning(d.size) {
                log::warn!("{w}");
            }
            self.solver.batch_size(d.frames)?;
        }
        if self.method == Method::RsrNf && self.solver.lambda > 0.0 {
            let p = self.restorer.checkpoint.as_ref().ok_or_else(|| {
                Error::Validation("rsr-nf with lambda > 0 needs `restorer.checkpoint`".into())
            })?;
            ensure!(p.is_file(), "restorer checkpoint {} does not exist", p.display());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

/// Reads a config. Relative input paths are taken relative to the file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let rebase = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    if let Some(p) = cfg.dataset.path.as_mut() {
        rebase(p);
    }
    if let Some(p) = cfg.restorer.checkpoint.as_mut() {
        rebase(p);
    }
    Ok(cfg)
}
