//! Image quality metrics: PSNR, SSIM, MAE and HFEN.
//!
//! PSNR and SSIM take their constants from the reference image (peak and
//! dynamic range), so they are not symmetric in their arguments. MAE and
//! HFEN are.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::datasets::DynamicObject;
use crate::error::{ensure, Result};

/// PSNR reported when the two images are identical.
pub const PSNR_CAP_DB: f64 = 200.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub const LOG_SIGMA: f64 = 1.5;
pub const LOG_SUPPORT: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psnr {
    pub db: f64,
    /// Set when the MSE was zero and `db` is the cap.
    pub capped: bool,
}

fn same_shape(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    ensure!(a.dim() == b.dim(), "shape mismatch: {:?} vs {:?}", a.dim(), b.dim());
    Ok(())
}

/// `10 log10(peak^2 / MSE)`; `peak` defaults to the reference maximum.
pub fn psnr_db(est: &ArrayView2<f64>, reference: &ArrayView2<f64>, peak: Option<f64>) -> Result<Psnr> {
    same_shape(est, reference)?;
    let peak = peak.unwrap_or_else(|| reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    ensure!(peak.is_finite() && peak > 0.0, "PSNR peak must be positive, got {peak}");
    let mse = est
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / est.len() as f64;
    if mse == 0.0 {
        return Ok(Psnr {
            db: PSNR_CAP_DB,
            capped: true,
        });
    }
    let db = 10.0 * (peak * peak / mse).log10();
    Ok(Psnr {
        db: db.min(PSNR_CAP_DB),
        capped: db >= PSNR_CAP_DB,
    })
}

pub fn mae(est: &ArrayView2<f64>, reference: &ArrayView2<f64>) -> Result<f64> {
    same_shape(est, reference)?;
    Ok(est
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / est.len() as f64)
}

fn gaussian_taps(len: usize, sigma: f64) -> Vec<f64> {
    let c = (len as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..len)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable 'valid' filtering with a symmetric kernel.
fn filter_valid(img: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (r, c) = img.dim();
    let k = taps.len();
    let (vr, vc) = (r + 1 - k, c + 1 - k);
    let mut tmp = Array2::<f64>::zeros((r, vc));
    for i in 0..r {
        for j in 0..vc {
            tmp[[i, j]] = (0..k).map(|m| taps[m] * img[[i, j + m]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((vr, vc));
    for i in 0..vr {
        for j in 0..vc {
            out[[i, j]] = (0..k).map(|m| taps[m] * tmp[[i + m, j]]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully-contained Gaussian windows (11x11, sigma 1.5;
/// narrower when the image is smaller than the window).
///
/// The dynamic range is `max(ref) - min(ref)`, falling back to 1 for a
/// constant reference.
pub fn ssim(est: &ArrayView2<f64>, reference: &ArrayView2<f64>) -> Result<f64> {
    same_shape(est, reference)?;
    let (r, c) = est.dim();
    let mut win = SSIM_WINDOW.min(r).min(c);
    if win % 2 == 0 {
        win -= 1;
    }
    ensure!(win >= 1, "image too small for SSIM");
    let taps = gaussian_taps(win, SSIM_SIGMA);
    let hi = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = reference.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = if hi > lo { hi - lo } else { 1.0 };
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);

    let x = est.to_owned();
    let y = reference.to_owned();
    let mx = filter_valid(&x, &taps);
    let my = filter_valid(&y, &taps);
    let sxx = filter_valid(&(&x * &x), &taps);
    let syy = filter_valid(&(&y * &y), &taps);
    let sxy = filter_valid(&(&x * &y), &taps);
    let mut total = 0.0;
    for (((((&mx, &my), &sxx), &syy), &sxy), _) in mx
        .iter()
        .zip(my.iter())
        .zip(sxx.iter())
        .zip(syy.iter())
        .zip(sxy.iter())
        .zip(0..)
    {
        let vx = sxx - mx * mx;
        let vy = syy - my * my;
        let cov = sxy - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Zero-sum Laplacian-of-Gaussian kernel (std 1.5 px, 9x9).
pub fn log_kernel() -> Array2<f64> {
    let k = LOG_SUPPORT;
    let c = (k as f64 - 1.0) / 2.0;
    let s2 = LOG_SIGMA * LOG_SIGMA;
    let g = Array2::from_shape_fn((k, k), |(i, j)| {
        let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
        (-r2 / (2.0 * s2)).exp()
    });
    let g = &g / g.sum();
    let mut h = Array2::from_shape_fn((k, k), |(i, j)| {
        let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
        g[[i, j]] * (r2 - 2.0 * s2) / (s2 * s2)
    });
    let mean = h.mean().unwrap_or(0.0);
    h.mapv_inplace(|v| v - mean);
    h
}

/// Half-sample symmetric index reflection (`d c b a | a b c d`).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

fn log_filter(img: &ArrayView2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (r, c) = img.dim();
    let k = kernel.nrows() as isize;
    let half = k / 2;
    Array2::from_shape_fn((r, c), |(i, j)| {
        let mut acc = 0.0;
        for a in 0..k {
            let ii = reflect(i as isize + a - half, r);
            for b in 0..k {
                let jj = reflect(j as isize + b - half, c);
                acc += kernel[[a as usize, b as usize]] * img[[ii, jj]];
            }
        }
        acc
    })
}

/// High-frequency error norm `|| LoG(est) - LoG(ref) ||_2`.
pub fn hfen(est: &ArrayView2<f64>, reference: &ArrayView2<f64>) -> Result<f64> {
    same_shape(est, reference)?;
    let diff = est - reference;
    let filtered = log_filter(&diff.view(), &log_kernel());
    Ok(filtered.mapv(|v| v * v).sum().sqrt())
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr_db: f64,
    pub psnr_capped: bool,
    pub ssim: f64,
    pub mae: f64,
    pub hfen: f64,
}

/// Per-frame metrics and their means over an evaluated frame set.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricsRecord {
    pub psnr_db: f64,
    pub ssim: f64,
    pub mae: f64,
    pub hfen: f64,
    pub per_frame: Vec<FrameMetrics>,
    pub frames_evaluated: Vec<usize>,
}

pub fn frame_metrics(
    frame: usize,
    est: &ArrayView2<f64>,
    reference: &ArrayView2<f64>,
    peak: Option<f64>,
) -> Result<FrameMetrics> {
    let p = psnr_db(est, reference, peak)?;
    Ok(FrameMetrics {
        frame,
        psnr_db: p.db,
        psnr_capped: p.capped,
        ssim: ssim(est, reference)?,
        mae: mae(est, reference)?,
        hfen: hfen(est, reference)?,
    })
}

/// Averages per-frame metrics over `frames` (all frames when `None`). PSNR
/// uses the reference object's normalization as peak unless `peak` is given.
pub fn evaluate(
    est: &DynamicObject,
    reference: &DynamicObject,
    frames: Option<&[usize]>,
    peak: Option<f64>,
) -> Result<MetricsRecord> {
    ensure!(
        est.frames.dim() == reference.frames.dim(),
        "estimate and reference shapes differ: {:?} vs {:?}",
        est.frames.dim(),
        reference.frames.dim()
    );
    let all: Vec<usize> = (0..reference.n_frames()).collect();
    let frames = frames.unwrap_or(&all);
    ensure!(!frames.is_empty(), "evaluation frame set is empty");
    ensure!(
        frames.iter().all(|&t| t < reference.n_frames()),
        "evaluation frame index out of range"
    );
    let peak = peak.unwrap_or(reference.normalization);
    let per_frame = frames
        .iter()
        .map(|&t| frame_metrics(t, &est.frame_view(t), &reference.frame_view(t), Some(peak)))
        .collect::<Result<Vec<_>>>()?;
    let n = per_frame.len() as f64;
    let mean = |f: fn(&FrameMetrics) -> f64| per_frame.iter().map(f).sum::<f64>() / n;
    Ok(MetricsRecord {
        psnr_db: mean(|m| m.psnr_db),
        ssim: mean(|m| m.ssim),
        mae: mean(|m| m.mae),
        hfen: mean(|m| m.hfen),
        frames_evaluated: frames.to_vec(),
        per_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_image(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Array2::from_shape_fn((n, n), |_| rng.gen::<f64>());
        // smooth a little so SSIM sees structure
        Array2::from_shape_fn((n, n), |(i, j)| {
            let mut s = 0.0;
            for di in 0..3 {
                for dj in 0..3 {
                    s += raw[[(i + di) % n, (j + dj) % n]];
                }
            }
            s / 9.0
        })
    }

    /// Direct per-window SSIM: weighted moments computed from scratch for
    /// every window position.
    fn ssim_direct(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let n = x.nrows();
        let k = 11;
        let c = 5.0;
        let mut w = Array2::from_shape_fn((k, k), |(i, j)| {
            (-((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / (2.0 * 1.5 * 1.5)).exp()
        });
        let s = w.sum();
        w /= s;
        let l = y.iter().cloned().fold(f64::MIN, f64::max) - y.iter().cloned().fold(f64::MAX, f64::min);
        let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..=n - k {
            for j in 0..=n - k {
                let (mut mx, mut my) = (0.0, 0.0);
                for a in 0..k {
                    for b in 0..k {
                        mx += w[[a, b]] * x[[i + a, j + b]];
                        my += w[[a, b]] * y[[i + a, j + b]];
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for a in 0..k {
                    for b in 0..k {
                        let dx = x[[i + a, j + b]] - mx;
                        let dy = y[[i + a, j + b]] - my;
                        vx += w[[a, b]] * dx * dx;
                        vy += w[[a, b]] * dy * dy;
                        cxy += w[[a, b]] * dx * dy;
                    }
                }
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    /// Brute-force LoG: explicit reflect-padded copies, each image filtered
    /// separately.
    fn hfen_direct(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let n = x.nrows();
        let h = log_kernel();
        let pad = 4usize;
        let padded = |img: &Array2<f64>| {
            Array2::from_shape_fn((n + 2 * pad, n + 2 * pad), |(i, j)| {
                let m = |v: isize| -> usize {
                    if v < 0 {
                        (-v - 1) as usize
                    } else if v >= n as isize {
                        (2 * n as isize - v - 1) as usize
                    } else {
                        v as usize
                    }
                };
                img[[m(i as isize - pad as isize), m(j as isize - pad as isize)]]
            })
        };
        let (px, py) = (padded(x), padded(y));
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let (mut fx, mut fy) = (0.0, 0.0);
                for a in 0..9 {
                    for b in 0..9 {
                        fx += h[[a, b]] * px[[i + a, j + b]];
                        fy += h[[a, b]] * py[[i + a, j + b]];
                    }
                }
                sum += (fx - fy).powi(2);
            }
        }
        sum.sqrt()
    }

    #[test]
    fn identical_images() {
        let a = random_image(24, 1);
        let p = psnr_db(&a.view(), &a.view(), None).unwrap();
        assert!(p.capped && p.db == PSNR_CAP_DB);
        assert_eq!(mae(&a.view(), &a.view()).unwrap(), 0.0);
        assert!((ssim(&a.view(), &a.view()).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(hfen(&a.view(), &a.view()).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_closed_forms() {
        let r = Array2::from_elem((16, 16), 0.5);
        let mut r = r.clone();
        r[[3, 3]] = 1.0;
        let e = &r + 0.1;
        assert!((mae(&e.view(), &r.view()).unwrap() - 0.1).abs() < 1e-12);
        let p = psnr_db(&e.view(), &r.view(), Some(1.0)).unwrap();
        assert!((p.db - 20.0).abs() < 1e-9);
        assert!(hfen(&e.view(), &r.view()).unwrap() <= 1e-8);
    }

    #[test]
    fn halving_noise_gains_six_db() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = random_image(64, 2);
        let noise = Array2::from_shape_fn((64, 64), |_| rng.sample::<f64, _>(StandardNormal));
        let a = psnr_db(&(&r + &(&noise * 0.1)).view(), &r.view(), Some(1.0)).unwrap().db;
        let b = psnr_db(&(&r + &(&noise * 0.05)).view(), &r.view(), Some(1.0)).unwrap().db;
        assert!((b - a - 6.02).abs() < 0.1);
    }

    #[test]
    fn anticorrelated_ssim_is_negative() {
        let r = random_image(32, 3);
        let m = r.mean().unwrap();
        let neg = r.mapv(|v| 2.0 * m - v);
        assert!(ssim(&neg.view(), &r.view()).unwrap() < 0.0);
    }

    #[test]
    fn ssim_matches_direct_formula() {
        for s in 0..10 {
            let x = random_image(24, 100 + s);
            let y = random_image(24, 200 + s);
            let ours = ssim(&x.view(), &y.view()).unwrap();
            assert!((ours - ssim_direct(&x, &y)).abs() < 1e-6);
        }
    }

    #[test]
    fn hfen_matches_direct_convolution() {
        for s in 0..3 {
            let x = random_image(20, 300 + s);
            let y = random_image(20, 400 + s);
            assert!((hfen(&x.view(), &y.view()).unwrap() - hfen_direct(&x, &y)).abs() < 1e-8);
        }
    }

    #[test]
    fn log_kernel_is_zero_sum_and_symmetric() {
        let h = log_kernel();
        assert!(h.sum().abs() < 1e-14);
        assert_eq!(h.dim(), (9, 9));
        assert!((h[[0, 3]] - h[[3, 0]]).abs() < 1e-15);
        assert!(h[[4, 4]] < 0.0);
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }

    #[test]
    fn evaluate_means_and_subsets() {
        let r = DynamicObject::new(
            Array3::from_shape_fn((4, 16, 16), |(t, i, j)| ((t + i * j) % 5) as f64 / 4.0),
            "r",
        )
        .unwrap();
        let e = DynamicObject::new(r.frames.mapv(|v| v * 0.9 + 0.02), "e").unwrap();
        let perfect = evaluate(&r, &r, None, None).unwrap();
        assert_eq!(perfect.mae, 0.0);
        assert_eq!(perfect.psnr_db, PSNR_CAP_DB);
        let all = evaluate(&e, &r, None, None).unwrap();
        let manual = all.per_frame.iter().map(|m| m.psnr_db).sum::<f64>() / 4.0;
        assert!((all.psnr_db - manual).abs() < 1e-12);
        let single = evaluate(&e, &r, Some(&[2]), None).unwrap();
        assert_eq!(single.per_frame[0], all.per_frame[2]);
        assert_eq!(single.psnr_db, all.per_frame[2].psnr_db);
        let subset = evaluate(&e, &r, Some(&[1, 3]), None).unwrap();
        let m = (all.per_frame[1].ssim + all.per_frame[3].ssim) / 2.0;
        assert!((subset.ssim - m).abs() < 1e-12);
        assert!(evaluate(&e, &r, Some(&[]), None).is_err());
    }
}
