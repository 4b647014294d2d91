//! Representation study: fitting a neural field directly to a known object
//! and comparing it with truncated-SVD (rank-K separable) approximations of
//! the same parameter budget.

use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::DynamicObject;
use crate::error::{ensure, Error, Result};
use crate::metrics::evaluate;
use crate::nf::{encode_points, grid_point, NeuralField, NfArch};
use crate::optim::{cosine_lr, Adam, AdamConfig};
use crate::real::Real;

/// `J^2 x P` matrix with one column per frame, row-major pixels.
fn casorati(obj: &DynamicObject) -> DMatrix<f64> {
    let (p, j, _) = obj.frames.dim();
    DMatrix::from_fn(j * j, p, |r, t| obj.frames[[t, r / j, r % j]])
}

fn from_casorati(m: &DMatrix<f64>, j: usize, like: &DynamicObject, provenance: String) -> DynamicObject {
    let p = m.ncols();
    DynamicObject {
        frames: Array3::from_shape_fn((p, j, j), |(t, r, c)| m[(r * j + c, t)]),
        normalization: like.normalization,
        provenance,
    }
}

/// Best rank-`k` approximation in the Frobenius norm.
pub fn svd_truncate(obj: &DynamicObject, k: usize) -> Result<DynamicObject> {
    obj.validate()?;
    let (p, j, _) = obj.frames.dim();
    ensure!(k >= 1 && k <= (j * j).min(p), "rank {k} outside [1, {}]", (j * j).min(p));
    let svd = casorati(obj).svd(true, true);
    let u = svd.u.as_ref().expect("left vectors requested");
    let vt = svd.v_t.as_ref().expect("right vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut m = DMatrix::zeros(j * j, p);
    for &i in &order[..k] {
        m += u.column(i) * vt.row(i) * svd.singular_values[i];
    }
    Ok(from_casorati(&m, j, obj, format!("svd-rank-{k}")))
}

/// Singular values of the `J^2 x P` matrix, in decreasing order.
pub fn singular_values(obj: &DynamicObject) -> Vec<f64> {
    let mut s: Vec<f64> = casorati(obj).singular_values().iter().cloned().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Raw factor entries of a rank-`k` separable model: `k (J^2 + P)`.
pub fn psm_param_count(size: usize, frames: usize, k: usize) -> usize {
    k * (size * size + frames)
}

pub fn param_count(arch: &NfArch) -> usize {
    arch.param_count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedConfig {
    pub arch: NfArch,
    pub iters: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`.
    pub lr_floor: f64,
    /// Random grid points per step.
    pub batch_points: usize,
    pub seed: u64,
    /// PSNR of the full render is recorded every this many steps.
    pub eval_every: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            arch: NfArch::default(),
            iters: 10_000,
            lr: 5e-3,
            lr_floor: 0.01,
            batch_points: 8192,
            seed: 0,
            eval_every: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResult {
    pub label: String,
    pub param_count: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub seconds: f64,
    /// `(step, psnr)` pairs; empty for closed-form models.
    pub psnr_curve: Vec<(usize, f64)>,
    pub config: serde_json::Value,
}

/// PSNR and SSIM of the rank-`k` truncation.
pub fn psm_embedding(obj: &DynamicObject, k: usize) -> Result<(DynamicObject, EmbeddingResult)> {
    let start = Instant::now();
    let approx = svd_truncate(obj, k)?;
    let m = evaluate(&approx, obj, None, None)?;
    let (p, j, _) = obj.frames.dim();
    let result = EmbeddingResult {
        label: format!("psm-k{k}"),
        param_count: psm_param_count(j, p, k),
        psnr_db: m.psnr_db,
        ssim: m.ssim,
        seconds: start.elapsed().as_secs_f64(),
        psnr_curve: Vec::new(),
        config: serde_json::json!({ "rank": k }),
    };
    Ok((approx, result))
}

/// Fits an NF to `obj` by Adam on the mean squared error over random grid
/// points.
pub fn fit_nf_embedding<T: Real>(obj: &DynamicObject, cfg: &EmbedConfig) -> Result<(NeuralField<T>, EmbeddingResult)> {
    obj.validate()?;
    cfg.arch.validate()?;
    ensure!(cfg.batch_points >= 1, "batch_points must be at least 1");
    ensure!(cfg.lr > 0.0 && cfg.lr.is_finite(), "lr must be positive");
    let (p, j, _) = obj.frames.dim();
    let mut nf = NeuralField::<T>::new(cfg.arch, cfg.seed)?;
    let mut adam = Adam::<T>::new(nf.param_count(), AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x656d_6264);
    let posenc = cfg.arch.posenc();
    let start = Instant::now();
    let mut curve = Vec::new();
    let mut coords = Vec::with_capacity(cfg.batch_points);
    let mut target = Vec::with_capacity(cfg.batch_points);
    for step in 0..cfg.iters {
        coords.clear();
        target.clear();
        for _ in 0..cfg.batch_points {
            let (t, r, c) = (rng.gen_range(0..p), rng.gen_range(0..j), rng.gen_range(0..j));
            coords.push(grid_point(r, c, t, j, p));
            target.push(T::of(obj.frames[[t, r, c]]));
        }
        let x = encode_points::<T>(&coords, &posenc)?;
        let n = T::of(cfg.batch_points as f64);
        let (loss, grad) = nf.value_and_grad_encoded(&x, |y| {
            let diff = ndarray::Array1::from_shape_fn(y.len(), |k| y[k] - target[k]);
            let loss = diff.iter().map(|d| d.f64() * d.f64()).sum::<f64>() / cfg.batch_points as f64;
            Ok((loss, diff.mapv(|d| T::of(2.0) * d / n)))
        })
        .map_err(|e| Error::Numerical(format!("embedding fit failed at step {step}: {e}; psnr so far {curve:?}")))?;
        let lr = cosine_lr(cfg.lr, step, cfg.iters, cfg.lr_floor);
        adam.step(nf.params_mut(), &grad, lr)
            .map_err(|e| Error::Numerical(format!("embedding step {step}: {e}; loss {loss}")))?;
        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            let rendered = nf.render_grid(j, p)?;
            curve.push((step + 1, psnr_against(&rendered, obj)?));
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let mut rendered = nf.render_grid(j, p)?;
    rendered.normalization = obj.normalization;
    let m = evaluate(&rendered, obj, None, None)?;
    ensure!(m.psnr_db.is_finite(), "embedding metrics are not finite");
    let result = EmbeddingResult {
        label: format!(
            "nf-L{}-h{}-w{}",
            cfg.arch.frequencies, cfg.arch.hidden_layers, cfg.arch.width
        ),
        param_count: nf.param_count(),
        psnr_db: m.psnr_db,
        ssim: m.ssim,
        seconds,
        psnr_curve: curve,
        config: serde_json::to_value(cfg)?,
    };
    Ok((nf, result))
}

fn psnr_against(est: &DynamicObject, obj: &DynamicObject) -> Result<f64> {
    Ok(evaluate(est, obj, None, Some(obj.normalization))?.psnr_db)
}

/// Writes results as CSV rows (label, params, psnr, ssim, seconds).
pub fn write_results_csv(results: &[EmbeddingResult], path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["label", "param_count", "psnr_db", "ssim", "seconds"])?;
    for r in results {
        w.write_record([
            r.label.clone(),
            r.param_count.to_string(),
            r.psnr_db.to_string(),
            r.ssim.to_string(),
            r.seconds.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
