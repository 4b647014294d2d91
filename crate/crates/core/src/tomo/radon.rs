//! Pixel-driven parallel-beam projector.
//!
//! Each pixel is split into a few point masses which are projected onto the
//! detector and shared between the two nearest bins by linear interpolation. The detector has as
//! many bins as the image has columns, with bin spacing equal to pixel
//! spacing, centred on the rotation axis. Mass that lands outside the
//! detector is dropped, so mass is conserved only for frames supported in the
//! inscribed disc.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2};

use super::frame::{ImageFrame, Projection};
use crate::error::{ensure, Result};

/// Each pixel is split into `SUBSAMPLES x SUBSAMPLES` point masses before
/// interpolation. A single point per pixel aliases badly at oblique angles.
pub const SUBSAMPLES: usize = 2;

/// Visits every pixel with its two detector weights.
///
/// `f(row, col, bin, w_lo, w_hi)` receives the lower bin index (may be `-1`
/// or `n - 1`, callers bounds-check each side) and the interpolation weights
/// for `bin` and `bin + 1`.
#[inline]
fn for_each_footprint(n: usize, angle: f64, mut f: impl FnMut(usize, usize, isize, f64, f64)) {
    let sub = SUBSAMPLES;
    let (sin, cos) = angle.sin_cos();
    let c = (n as f64 - 1.0) / 2.0;
    let w = 1.0 / (sub * sub) as f64;
    for row in 0..n {
        for col in 0..n {
            for a in 0..sub {
                let y = c - row as f64 + 0.5 - (a as f64 + 0.5) / sub as f64;
                for b in 0..sub {
                    let x = col as f64 - c - 0.5 + (b as f64 + 0.5) / sub as f64;
                    let u = x * cos + y * sin + c;
                    let lo = u.floor();
                    let w_hi = u - lo;
                    f(row, col, lo as isize, w * (1.0 - w_hi), w * w_hi);
                }
            }
        }
    }
}

/// Projects a raw pixel array. Units are pixel-spacing units scaled by
/// `weight` (pixel area over bin spacing).
pub(crate) fn project_view(pixels: ArrayView2<f64>, angle: f64, weight: f64) -> Array1<f64> {
    let n = pixels.nrows();
    let mut bins = vec![0.0; n];
    let last = n as isize - 1;
    for_each_footprint(n, angle, |row, col, lo, w_lo, w_hi| {
        let v = pixels[[row, col]] * weight;
        if v == 0.0 {
            return;
        }
        if lo >= 0 && lo <= last {
            bins[lo as usize] += v * w_lo;
        }
        if lo + 1 >= 0 && lo < last {
            bins[(lo + 1) as usize] += v * w_hi;
        }
    });
    Array1::from(bins)
}

/// Adds `scale * interp(bins)` to every pixel, where `interp` samples the
/// detector at the pixel's projected offset. This is the transpose of
/// [`project_view`] up to the `scale` factor.
pub(crate) fn backproject_view_into(
    bins: ArrayView1<f64>,
    angle: f64,
    scale: f64,
    mut out: ArrayViewMut2<f64>,
) {
    let n = out.nrows();
    let last = n as isize - 1;
    for_each_footprint(n, angle, |row, col, lo, w_lo, w_hi| {
        let mut v = 0.0;
        if lo >= 0 && lo <= last {
            v += bins[lo as usize] * w_lo;
        }
        if lo + 1 >= 0 && lo < last {
            v += bins[(lo + 1) as usize] * w_hi;
        }
        out[[row, col]] += scale * v;
    });
}

/// Discrete line integrals of `frame` at `angle` (radians).
pub fn radon_project(frame: &ImageFrame, angle: f64) -> Result<Projection> {
    frame.validate()?;
    ensure!(angle.is_finite(), "projection angle must be finite");
    let weight = frame.pixel_area() / frame.pixel_spacing;
    let bins = project_view(frame.pixels.view(), angle, weight);
    Ok(Projection {
        bins,
        angle,
        time_index: 0,
        bin_spacing: frame.pixel_spacing,
    })
}

/// Exact transpose of [`radon_project`] under the Euclidean inner products on
/// pixel and bin arrays.
pub fn radon_adjoint(proj: &Projection) -> Result<ImageFrame> {
    proj.validate()?;
    let n = proj.detector_count();
    let mut pixels = Array2::zeros((n, n));
    backproject_view_into(proj.bins.view(), proj.angle, proj.bin_spacing, pixels.view_mut());
    Ok(ImageFrame {
        pixels,
        pixel_spacing: proj.bin_spacing,
    })
}
