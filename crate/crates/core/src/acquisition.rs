//! Time-sequential acquisition: view schedules, noise calibration and
//! measurement synthesis.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::datasets::DynamicObject;
use crate::error::{ensure, Error, Result};
use crate::metrics::psnr_db;
use crate::tomo::{fbp_static, radon_project, ImageFrame, Projection};

/// View angle and time stamp of every projection.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSchedule {
    pub angles: Vec<f64>,
    pub times: Vec<f64>,
    pub scheme: String,
    pub distinct_views: usize,
}

impl AngleSchedule {
    fn from_angles(angles: Vec<f64>, scheme: &str, distinct_views: usize) -> Self {
        let times = (0..angles.len()).map(|p| p as f64).collect();
        Self {
            angles,
            times,
            scheme: scheme.to_string(),
            distinct_views,
        }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.angles.is_empty(), "schedule must contain at least one view");
        ensure!(self.times.len() == self.angles.len(), "schedule times and angles differ in length");
        ensure!(
            self.angles.iter().all(|a| (0.0..PI).contains(a)),
            "schedule angles must lie in [0, pi)"
        );
        ensure!(
            self.times.windows(2).all(|w| w[1] > w[0]),
            "schedule times must be strictly increasing"
        );
        ensure!(
            self.distinct_views >= 1 && self.distinct_views <= self.angles.len(),
            "distinct view count out of range"
        );
        Ok(())
    }

    /// Normalised temporal coordinate `t_p / (P - 1)` fed to the neural field.
    pub fn normalized_time(&self, p: usize) -> f64 {
        normalized_time(p, self.len())
    }
}

pub fn normalized_time(p: usize, total: usize) -> f64 {
    if total <= 1 {
        0.0
    } else {
        p as f64 / (total - 1) as f64
    }
}

/// Reverses the low `bits` bits of `p`.
pub fn bit_reverse(p: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        p.reverse_bits() >> (usize::BITS - bits)
    }
}

/// `theta_p = pi * bitreverse(p) / P` for a power-of-two `P`.
pub fn bit_reversed_schedule(count: usize) -> Result<AngleSchedule> {
    if count == 0 || !count.is_power_of_two() {
        return Err(Error::Validation(format!(
            "bit-reversed schedules need a power-of-two view count, got {count}; \
             use the uniform schedule or a reduced-view schedule instead"
        )));
    }
    let bits = count.trailing_zeros();
    let angles = (0..count)
        .map(|p| PI * bit_reverse(p, bits) as f64 / count as f64)
        .collect();
    Ok(AngleSchedule::from_angles(angles, "bit-reversed", count))
}

/// The bit-reversed pattern over `distinct` views, repeated until `count`
/// projections are scheduled.
pub fn reduced_view_schedule(distinct: usize, count: usize) -> Result<AngleSchedule> {
    ensure!(
        distinct >= 1 && distinct <= count,
        "distinct views {distinct} must be in [1, {count}]"
    );
    ensure!(count % distinct == 0, "distinct views {distinct} must divide P = {count}");
    let base = bit_reversed_schedule(distinct)?;
    let angles = (0..count).map(|p| base.angles[p % distinct]).collect();
    Ok(AngleSchedule::from_angles(angles, "reduced-view", distinct))
}

/// `theta_p = pi * p / P`.
pub fn uniform_schedule(count: usize) -> Result<AngleSchedule> {
    ensure!(count >= 1, "schedule needs at least one view");
    let angles = (0..count).map(|p| PI * p as f64 / count as f64).collect();
    Ok(AngleSchedule::from_angles(angles, "uniform", count))
}

/// Time-ordered projections of a dynamic object.
#[derive(Debug, Clone, PartialEq)]
pub struct SinogramSet {
    pub projections: Vec<Projection>,
    pub schedule: AngleSchedule,
    pub noise_sigma: f64,
    pub seed: Option<u64>,
}

impl SinogramSet {
    pub fn len(&self) -> usize {
        self.projections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projections.is_empty()
    }

    pub fn detector_count(&self) -> usize {
        self.projections.first().map_or(0, |p| p.detector_count())
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        ensure!(
            self.projections.len() == self.schedule.len(),
            "sinogram count does not match schedule length"
        );
        let n = self.detector_count();
        for (p, proj) in self.projections.iter().enumerate() {
            proj.validate()?;
            ensure!(proj.time_index == p, "projection {p} has time index {}", proj.time_index);
            ensure!(proj.angle == self.schedule.angles[p], "projection {p} angle disagrees with schedule");
            ensure!(proj.detector_count() == n, "projection {p} has a different detector length");
        }
        Ok(())
    }
}

/// Forward-projects frame `p` at `theta_p` and adds i.i.d. Gaussian noise of
/// standard deviation `sigma` to every bin.
pub fn simulate_measurements(
    obj: &DynamicObject,
    schedule: &AngleSchedule,
    sigma: f64,
    seed: u64,
) -> Result<SinogramSet> {
    schedule.validate()?;
    ensure!(
        obj.n_frames() == schedule.len(),
        "object has {} frames but the schedule has {} views",
        obj.n_frames(),
        schedule.len()
    );
    ensure!(sigma.is_finite() && sigma >= 0.0, "noise sigma must be finite and nonnegative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Validation(e.to_string()))?;
    let mut projections = Vec::with_capacity(schedule.len());
    for (p, &angle) in schedule.angles.iter().enumerate() {
        let mut proj = radon_project(&obj.frame(p), angle)?;
        proj.time_index = p;
        if sigma > 0.0 {
            proj.bins.iter_mut().for_each(|b| *b += noise.sample(&mut rng));
        }
        projections.push(proj);
    }
    Ok(SinogramSet {
        projections,
        schedule: schedule.clone(),
        noise_sigma: sigma,
        seed: Some(seed),
    })
}

/// What the noisy reconstruction is compared against during calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationReference {
    /// The noiseless reconstruction from the same views. Isolates the
    /// measurement noise from the projector's own discretization error.
    #[default]
    NoiselessFbp,
    /// The frame itself. Only reachable when the noiseless reconstruction is
    /// already well above the target.
    Truth,
}

#[derive(Debug, Clone)]
pub struct CalibrationOptions {
    pub target_psnr_db: f64,
    pub reference: CalibrationReference,
    pub views: usize,
    pub seed: u64,
    /// Independent noise draws averaged into the noise-energy estimate.
    pub noise_draws: usize,
    pub tolerance_db: f64,
    pub max_iterations: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            target_psnr_db: 46.0,
            reference: CalibrationReference::default(),
            views: 512,
            seed: 0x0046_db00,
            noise_draws: 8,
            tolerance_db: 0.05,
            max_iterations: 60,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NoiseCalibration {
    pub sigma: f64,
    pub achieved_psnr_db: f64,
    /// Noiseless reconstruction against the frame.
    pub noiseless_psnr_db: f64,
    pub seed: u64,
    pub iterations: usize,
}

/// Finds the measurement noise level at which a Ram-Lak reconstruction of
/// `frame` from `views` uniformly spaced noisy projections reaches the
/// target PSNR against `opts.reference`.
///
/// FBP is linear, so the reconstruction error at noise level `sigma` is
/// `e0 + sigma * e1`, where `e0` is the noiseless error and `e1` the
/// reconstruction of a unit-variance draw. The MSE is therefore a quadratic
/// in `sigma` whose coefficients are averaged over `noise_draws` fixed-seed
/// draws, and bisection on `log sigma` evaluates it without re-running FBP.
pub fn calibrate_noise_sigma(frame: &ImageFrame, opts: &CalibrationOptions) -> Result<NoiseCalibration> {
    frame.validate()?;
    let peak = frame.pixels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ensure!(
        frame.pixels.iter().any(|&v| v != 0.0) && peak > 0.0,
        "cannot calibrate noise on an all-zero (or nonpositive) frame"
    );
    ensure!(opts.views >= 2, "calibration needs at least 2 views");
    let schedule = uniform_schedule(opts.views)?;
    let clean: Vec<Projection> = schedule
        .angles
        .iter()
        .map(|&a| radon_project(frame, a))
        .collect::<Result<_>>()?;
    let clean_rec = fbp_static(&clean)?;
    let e0 = match opts.reference {
        CalibrationReference::Truth => &clean_rec.pixels - &frame.pixels,
        CalibrationReference::NoiselessFbp => Array2::zeros(frame.pixels.dim()),
    };
    ensure!(opts.noise_draws >= 1, "calibration needs at least one noise draw");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let n = e0.len() as f64;
    let a = e0.mapv(|v| v * v).sum() / n;
    let (mut b, mut c) = (0.0, 0.0);
    for _ in 0..opts.noise_draws {
        let noise_only: Vec<Projection> = clean
            .iter()
            .map(|p| Projection {
                bins: Array1::from_shape_fn(p.bins.len(), |_| unit.sample(&mut rng)),
                ..p.clone()
            })
            .collect();
        let e1 = fbp_static(&noise_only)?.pixels;
        b += (&e0 * &e1).sum() / n;
        c += e1.mapv(|v| v * v).sum() / n;
    }
    let (b, c) = (b / opts.noise_draws as f64, c / opts.noise_draws as f64);
    let psnr_at = |sigma: f64| {
        let mse = (a + 2.0 * b * sigma + c * sigma * sigma).max(f64::MIN_POSITIVE);
        10.0 * (peak * peak / mse).log10()
    };
    let noiseless = psnr_db(&clean_rec.pixels.view(), &frame.pixels.view(), Some(peak))?.db;
    if opts.reference == CalibrationReference::Truth && noiseless <= opts.target_psnr_db + opts.tolerance_db {
        return Err(Error::Numerical(format!(
            "noiseless reconstruction PSNR {noiseless:.2} dB is already below the {:.2} dB target",
            opts.target_psnr_db
        )));
    }

    // Bracket in log-space: psnr decreases with sigma once noise dominates.
    let mut lo = (peak * 1e-9).ln();
    let mut hi = peak.ln();
    let mut iterations = 0;
    while psnr_at(hi.exp()) > opts.target_psnr_db {
        hi += std::f64::consts::LN_2 * 4.0;
        iterations += 1;
        if iterations > opts.max_iterations {
            return Err(Error::Numerical("could not bracket the noise level".into()));
        }
    }
    let mut sigma = hi.exp();
    let mut achieved = psnr_at(sigma);
    for _ in 0..opts.max_iterations {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        sigma = mid.exp();
        achieved = psnr_at(sigma);
        if (achieved - opts.target_psnr_db).abs() <= opts.tolerance_db {
            break;
        }
        if achieved > opts.target_psnr_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (achieved - opts.target_psnr_db).abs() > opts.tolerance_db {
        return Err(Error::Numerical(format!(
            "noise calibration did not converge (reached {achieved:.3} dB)"
        )));
    }
    Ok(NoiseCalibration {
        sigma,
        achieved_psnr_db: achieved,
        noiseless_psnr_db: noiseless,
        seed: opts.seed,
        iterations,
    })
}
