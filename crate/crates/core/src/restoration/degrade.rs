//! Randomised blur-and-noise degradations used to pretrain the restorer.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::metrics::reflect;
use crate::tomo::ImageFrame;

pub const SIGMA_MAX: f64 = 5e-2;
pub const BLUR_MAX: f64 = 2.0;

/// One draw of `H = zeta G_k + (1 - zeta) I` plus noise of std `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSample {
    pub zeta: f64,
    /// Gaussian blur standard deviation in pixels.
    pub blur: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl DegradationSample {
    pub fn identity() -> Self {
        Self {
            zeta: 0.0,
            blur: 0.0,
            sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!((0.0..=1.0).contains(&self.zeta), "zeta must lie in [0, 1], got {}", self.zeta);
        ensure!(self.blur >= 0.0 && self.blur.is_finite(), "blur must be >= 0, got {}", self.blur);
        ensure!(self.sigma >= 0.0 && self.sigma.is_finite(), "sigma must be >= 0, got {}", self.sigma);
        Ok(())
    }

    /// `zeta ~ U[0,1]`, `blur ~ U[0, blur_max]`, `sigma ~ U[0, sigma_max]`.
    pub fn draw(rng: &mut impl Rng, blur_max: f64, sigma_max: f64) -> Self {
        Self {
            zeta: rng.gen::<f64>(),
            blur: rng.gen::<f64>() * blur_max,
            sigma: rng.gen::<f64>() * sigma_max,
            seed: rng.gen(),
        }
    }
}

/// Normalised Gaussian taps of standard deviation `std`, truncated at
/// `+-3 std`. A zero width gives the unit impulse.
pub fn gaussian_kernel(std: f64) -> Vec<f64> {
    let radius = (3.0 * std).ceil() as usize;
    if radius == 0 || std <= 0.0 {
        return vec![1.0];
    }
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            if x.abs() > 3.0 * std {
                0.0
            } else {
                (-x * x / (2.0 * std * std)).exp()
            }
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable Gaussian blur with half-sample symmetric boundaries.
pub fn gaussian_blur(img: ArrayView2<f64>, std: f64) -> Array2<f64> {
    let taps = gaussian_kernel(std);
    if taps.len() == 1 {
        return img.to_owned();
    }
    let r = (taps.len() / 2) as isize;
    let (h, w) = img.dim();
    let mut tmp = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            tmp[[i, j]] = taps
                .iter()
                .enumerate()
                .map(|(k, &t)| t * img[[i, reflect(j as isize + k as isize - r, w)]])
                .sum();
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            out[[i, j]] = taps
                .iter()
                .enumerate()
                .map(|(k, &t)| t * tmp[[reflect(i as isize + k as isize - r, h), j]])
                .sum();
        }
    }
    out
}

/// `zeta G f + (1 - zeta) f` without noise.
pub fn degrade_mean(img: ArrayView2<f64>, sample: &DegradationSample) -> Result<Array2<f64>> {
    sample.validate()?;
    if sample.zeta == 0.0 {
        return Ok(img.to_owned());
    }
    let blurred = gaussian_blur(img, sample.blur);
    Ok(&blurred * sample.zeta + &img * (1.0 - sample.zeta))
}

pub fn degrade_array(img: ArrayView2<f64>, sample: &DegradationSample) -> Result<Array2<f64>> {
    let mut out = degrade_mean(img, sample)?;
    if sample.sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(sample.seed);
        let normal = Normal::new(0.0, sample.sigma).expect("sigma validated");
        out.mapv_inplace(|v| v + normal.sample(&mut rng));
    }
    Ok(out)
}

/// Degraded copy of a frame: blur mix plus white noise.
pub fn degrade(frame: &ImageFrame, sample: &DegradationSample) -> Result<ImageFrame> {
    frame.validate()?;
    Ok(ImageFrame {
        pixels: degrade_array(frame.pixels.view(), sample)?,
        pixel_spacing: frame.pixel_spacing,
    })
}
