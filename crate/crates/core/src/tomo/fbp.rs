//! Ram-Lak filtered backprojection, static and sliding-window.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Array3};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::frame::{ImageFrame, Projection};
use super::radon::backproject_view_into;
use crate::acquisition::SinogramSet;
use crate::datasets::DynamicObject;
use crate::error::{ensure, Result};

/// Frequency response of the band-limited ramp filter for `n_fft` samples at
/// the given detector spacing. Built from the spatial-domain Ram-Lak kernel
/// so the DC term is handled correctly.
fn ramp_response(n_fft: usize, spacing: f64) -> Vec<Complex<f64>> {
    let mut kernel = vec![Complex::new(0.0, 0.0); n_fft];
    let s2 = spacing * spacing;
    kernel[0].re = 1.0 / (4.0 * s2);
    for k in (1..=n_fft / 2).step_by(2) {
        let v = -1.0 / ((k * k) as f64 * PI * PI * s2);
        kernel[k].re = v;
        kernel[n_fft - k].re = v;
    }
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut kernel);
    kernel
}

/// Ram-Lak filtered copy of each projection, zero-padded to the next power of
/// two at least twice the detector length.
pub fn ramp_filter(projections: &[Projection]) -> Result<Vec<Array1<f64>>> {
    let Some(first) = projections.first() else {
        return Ok(Vec::new());
    };
    let n = first.detector_count();
    let spacing = first.bin_spacing;
    let n_fft = (2 * n).next_power_of_two();
    let response = ramp_response(n_fft, spacing);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);
    let norm = spacing / n_fft as f64;

    let mut out = Vec::with_capacity(projections.len());
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for p in projections {
        ensure!(
            p.detector_count() == n && p.bin_spacing == spacing,
            "all projections must share the detector geometry"
        );
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, &v) in buf.iter_mut().zip(p.bins.iter()) {
            b.re = v;
        }
        fwd.process(&mut buf);
        for (b, h) in buf.iter_mut().zip(response.iter()) {
            *b *= h;
        }
        inv.process(&mut buf);
        out.push(Array1::from_iter(buf[..n].iter().map(|c| c.re * norm)));
    }
    Ok(out)
}

/// Zeroes pixels whose centre lies outside the inscribed disc. Those pixels
/// are not covered by the detector at every angle, so FBP values there are
/// meaningless.
fn mask_to_field_of_view(pixels: &mut Array2<f64>) {
    let n = pixels.nrows();
    let c = (n as f64 - 1.0) / 2.0;
    let r2 = (n as f64 / 2.0).powi(2);
    for ((i, j), v) in pixels.indexed_iter_mut() {
        if (i as f64 - c).powi(2) + (j as f64 - c).powi(2) > r2 {
            *v = 0.0;
        }
    }
}

/// Static filtered backprojection with angular weight `pi / views`.
pub fn fbp_static(projections: &[Projection]) -> Result<ImageFrame> {
    ensure!(
        projections.len() >= 2,
        "filtered backprojection needs at least 2 projections, got {}",
        projections.len()
    );
    for p in projections {
        p.validate()?;
    }
    let a0 = projections[0].angle.rem_euclid(PI);
    ensure!(
        projections
            .iter()
            .any(|p| (p.angle.rem_euclid(PI) - a0).abs() > 1e-12),
        "filtered backprojection needs at least 2 distinct view angles"
    );
    let filtered = ramp_filter(projections)?;
    let n = projections[0].detector_count();
    let mut pixels = Array2::zeros((n, n));
    let scale = PI / projections.len() as f64;
    for (p, q) in projections.iter().zip(filtered.iter()) {
        backproject_view_into(q.view(), p.angle, scale, pixels.view_mut());
    }
    mask_to_field_of_view(&mut pixels);
    Ok(ImageFrame {
        pixels,
        pixel_spacing: projections[0].bin_spacing,
    })
}

/// First index of the `window`-long run of time indices nearest to `t`,
/// clamped so the run stays inside `[0, total)`.
pub fn sliding_window_start(t: usize, window: usize, total: usize) -> usize {
    t.saturating_sub(window / 2).min(total - window)
}

/// Dynamic baseline: frame `t` is the static reconstruction from the `P/2`
/// projections temporally nearest to `t`. Windows at the ends are clamped so
/// every frame uses the same number of views.
pub fn fbp_sliding_window(sinos: &SinogramSet) -> Result<DynamicObject> {
    let total = sinos.len();
    ensure!(total >= 4, "sliding-window FBP needs P >= 4, got {total}");
    ensure!(total % 2 == 0, "sliding-window FBP needs even P, got {total}");
    let window = total / 2;
    let n = sinos.detector_count();
    let mut frames = Array3::zeros((total, n, n));
    for t in 0..total {
        let start = sliding_window_start(t, window, total);
        let frame = fbp_static(&sinos.projections[start..start + window])?;
        frames.index_axis_mut(ndarray::Axis(0), t).assign(&frame.pixels);
    }
    DynamicObject::new(frames, "fbp-sliding-window")
}
