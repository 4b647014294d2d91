//! Supervised pretraining of the restoration network on randomly degraded
//! static slices.

use std::time::Instant;

use ndarray::{s, Array2, Array3, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cnn::Geometry;
use super::degrade::{degrade_array, DegradationSample, BLUR_MAX, SIGMA_MAX};
use super::model::{RestorationModel, Restorer};
use crate::error::{ensure, Error, Result};
use crate::metrics::psnr_db;
use crate::optim::{cosine_lr, Adam, AdamConfig};
use crate::tomo::ImageFrame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch: usize,
    /// Square patch side; 0 or anything at least the frame size uses whole
    /// frames.
    pub patch: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr` (cosine decay).
    pub lr_floor: f64,
    pub sigma_max: f64,
    pub blur_max: f64,
    pub seed: u64,
    pub residual: bool,
    pub channels: usize,
    pub depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            steps_per_epoch: 100,
            batch: 8,
            patch: 32,
            lr: 1e-3,
            lr_floor: 0.1,
            sigma_max: SIGMA_MAX,
            blur_max: BLUR_MAX,
            seed: 0,
            residual: false,
            channels: RestorationModel::<f32>::DEFAULT_CHANNELS,
            depth: RestorationModel::<f32>::DEFAULT_DEPTH,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1 && self.steps_per_epoch >= 1, "training needs at least one step");
        ensure!(self.batch >= 1, "batch must be at least 1");
        ensure!(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive");
        ensure!((0.0..=1.0).contains(&self.lr_floor), "lr_floor must lie in [0, 1]");
        ensure!(self.sigma_max >= 0.0 && self.blur_max >= 0.0, "degradation bounds must be >= 0");
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean squared restoration error of every optimisation step.
    pub step_loss: Vec<f64>,
    /// Mean of `step_loss` within each epoch.
    pub epoch_loss: Vec<f64>,
    pub seconds: f64,
}

/// One of the eight symmetries of the square.
fn dihedral(img: ArrayView2<f64>, k: u8) -> Array2<f64> {
    let mut v = img.to_owned();
    if k & 1 != 0 {
        v = v.slice(s![.., ..;-1]).to_owned();
    }
    if k & 2 != 0 {
        v = v.slice(s![..;-1, ..]).to_owned();
    }
    if k & 4 != 0 {
        v = v.t().to_owned();
    }
    v
}

/// Draws a training pair: a clean patch and its degraded copy.
fn draw_pair(frames: &[ImageFrame], patch: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(Array2<f64>, Array2<f64>)> {
    let f = &frames[rng.gen_range(0..frames.len())];
    let n = f.size();
    let (r0, c0) = if patch < n {
        (rng.gen_range(0..=n - patch), rng.gen_range(0..=n - patch))
    } else {
        (0, 0)
    };
    let p = patch.min(n);
    let clean = dihedral(f.pixels.slice(s![r0..r0 + p, c0..c0 + p]), rng.gen_range(0..8));
    let sample = DegradationSample::draw(rng, cfg.blur_max, cfg.sigma_max);
    let degraded = degrade_array(clean.view(), &sample)?;
    Ok((clean, degraded))
}

/// Minimises the mean squared error between the network output on freshly
/// degraded patches and the clean patches. Every step draws new patches and
/// new degradations, so there is no fixed dataset to overfit.
pub fn train_restorer(frames: &[ImageFrame], cfg: &TrainConfig) -> Result<(RestorationModel<f32>, TrainReport)> {
    cfg.validate()?;
    ensure!(!frames.is_empty(), "training set is empty");
    let n = frames[0].size();
    for f in frames {
        f.validate()?;
        ensure!(f.size() == n, "training frames must share one shape");
    }
    let patch = if cfg.patch == 0 { n } else { cfg.patch.min(n) };

    let mut model = RestorationModel::<f32>::untrained(cfg.channels, cfg.depth, cfg.residual, cfg.seed)?;
    ensure!(
        patch >= model.net.receptive_field(),
        "patch {patch} is smaller than the receptive field {}",
        model.net.receptive_field()
    );
    let mut opt = Adam::<f32>::new(model.net.params.len(), AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7265_7374);
    let g = Geometry {
        n: cfg.batch,
        h: patch,
        w: patch,
    };
    let total = cfg.total_steps();
    let mut report = TrainReport::default();
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let mut epoch_sum = 0.0;
        for step in 0..cfg.steps_per_epoch {
            let mut x = Array2::<f32>::zeros((g.pixels(), 1));
            let mut y = Array2::<f32>::zeros((g.pixels(), 1));
            for b in 0..cfg.batch {
                let (clean, degraded) = draw_pair(frames, patch, cfg, &mut rng)?;
                let off = b * patch * patch;
                for (k, (&c, &d)) in clean.iter().zip(degraded.iter()).enumerate() {
                    y[[off + k, 0]] = c as f32;
                    x[[off + k, 0]] = d as f32;
                }
            }
            let (cols, acts) = model.net.forward_trace(x.view(), g)?;
            let out = acts.last().expect("network has layers");
            let restored = if cfg.residual { &x - out } else { out.clone() };
            let diff = &restored - &y;
            let count = g.pixels() as f64;
            let loss = diff.iter().map(|&d| (d as f64) * (d as f64)).sum::<f64>() / count;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("restorer training diverged at epoch {epoch}, step {step}")));
            }
            let scale = (2.0 / count) as f32 * if cfg.residual { -1.0 } else { 1.0 };
            let d_out = diff.mapv(|d| d * scale);
            let grad = model.net.backward(g, &cols, &acts, d_out.view());
            let lr = cosine_lr(cfg.lr, epoch * cfg.steps_per_epoch + step, total, cfg.lr_floor);
            opt.step(&mut model.net.params, &grad, lr)?;
            report.step_loss.push(loss);
            epoch_sum += loss;
        }
        report.epoch_loss.push(epoch_sum / cfg.steps_per_epoch as f64);
        log::debug!("restorer epoch {epoch}: loss {:.3e}", report.epoch_loss[epoch]);
    }
    model.net.check_finite()?;
    report.seconds = start.elapsed().as_secs_f64();
    model.training = serde_json::json!({
        "config": cfg,
        "frames": frames.len(),
        "final_epoch_loss": report.epoch_loss.last(),
    });
    Ok((model, report))
}

/// Restoration quality on held-out degradations of whole frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RestorationEval {
    pub mse_degraded: f64,
    pub mse_restored: f64,
    pub psnr_degraded_db: f64,
    pub psnr_restored_db: f64,
}

/// Degrades each frame `draws` times (seeded independently of training) and
/// compares input and restored errors. PSNR uses each clean frame's maximum
/// as peak and is averaged over samples.
pub fn evaluate_restorer(
    model: &dyn Restorer,
    frames: &[ImageFrame],
    draws: usize,
    blur_max: f64,
    sigma_max: f64,
    seed: u64,
) -> Result<RestorationEval> {
    ensure!(!frames.is_empty() && draws >= 1, "nothing to evaluate");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clean = Vec::new();
    let mut degraded = Vec::new();
    for f in frames {
        for _ in 0..draws {
            let sample = DegradationSample::draw(&mut rng, blur_max, sigma_max);
            clean.push(f.pixels.clone());
            degraded.push(degrade_array(f.pixels.view(), &sample)?);
        }
    }
    let n = frames[0].size();
    let stack = Array3::from_shape_fn((degraded.len(), n, n), |(k, i, j)| degraded[k][[i, j]]);
    let restored = model.restore_frames(&stack)?;
    let (mut md, mut mr, mut pd, mut pr) = (0.0, 0.0, 0.0, 0.0);
    for (k, c) in clean.iter().enumerate() {
        let d = &degraded[k];
        let r = restored.index_axis(ndarray::Axis(0), k);
        md += (d - c).mapv(|v| v * v).mean().unwrap_or(0.0);
        mr += (&r - c).mapv(|v| v * v).mean().unwrap_or(0.0);
        pd += psnr_db(&d.view(), &c.view(), None)?.db;
        pr += psnr_db(&r, &c.view(), None)?.db;
    }
    let m = clean.len() as f64;
    Ok(RestorationEval {
        mse_degraded: md / m,
        mse_restored: mr / m,
        psnr_degraded_db: pd / m,
        psnr_restored_db: pr / m,
    })
}
