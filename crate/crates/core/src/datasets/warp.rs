//! Sinusoidal piecewise-affine vertical warp of a static slice.
//!
//! The image is cut into `N` horizontal bands whose boundaries sit at pixel
//! rows `n * J / N`. Boundary row `n` moves vertically by
//! `-C(t) * sin(3 pi n / N)` and the displacement is interpolated linearly
//! inside each band.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis};

use super::object::DynamicObject;
use crate::error::{ensure, Result};
use crate::tomo::ImageFrame;

#[derive(Debug, Clone)]
pub struct WarpRecipe {
    pub grid_rows: usize,
    /// `C(t)` in pixels, one entry per output frame.
    pub amplitudes: Vec<f64>,
    pub base_frame: ImageFrame,
}

impl WarpRecipe {
    /// Linear ramp `C(t) = c_max * t / (P - 1)`.
    pub fn linear(base_frame: ImageFrame, grid_rows: usize, frames: usize, c_max: f64) -> Self {
        let denom = frames.saturating_sub(1).max(1) as f64;
        Self {
            grid_rows,
            amplitudes: (0..frames).map(|t| c_max * t as f64 / denom).collect(),
            base_frame,
        }
    }

    /// Default amplitude ceiling for a `J`-pixel frame.
    pub fn default_c_max(size: usize) -> f64 {
        size as f64 / 16.0
    }

    pub fn validate(&self) -> Result<()> {
        self.base_frame.validate()?;
        let j = self.base_frame.size();
        ensure!(self.grid_rows >= 2, "warp grid needs N >= 2 rows");
        ensure!(
            j % self.grid_rows == 0,
            "frame size {j} is not divisible into {} row bands",
            self.grid_rows
        );
        ensure!(!self.amplitudes.is_empty(), "warp needs at least one frame");
        ensure!(
            self.amplitudes.iter().all(|c| c.is_finite() && *c >= 0.0),
            "warp amplitudes must be finite and nonnegative"
        );
        ensure!(self.amplitudes[0] == 0.0, "warp amplitude must start at C(0) = 0");
        Ok(())
    }

    /// Closed-form displacement of grid row `n` at amplitude `c`.
    pub fn grid_displacement(&self, n: usize, c: f64) -> f64 {
        -c * (3.0 * PI * n as f64 / self.grid_rows as f64).sin()
    }

    /// Displacement at fractional pixel row `y` (row units), piecewise linear
    /// between grid rows.
    pub fn displacement_at(&self, y: f64, c: f64) -> f64 {
        let band = self.base_frame.size() as f64 / self.grid_rows as f64;
        let pos = (y / band).clamp(0.0, self.grid_rows as f64);
        let n = (pos.floor() as usize).min(self.grid_rows - 1);
        let w = pos - n as f64;
        let lo = self.grid_displacement(n, c);
        if w == 0.0 {
            return lo;
        }
        lo * (1.0 - w) + self.grid_displacement(n + 1, c) * w
    }

    /// Displacement of every pixel row at amplitude `c`.
    pub fn displacement_field(&self, c: f64) -> Vec<f64> {
        (0..self.base_frame.size())
            .map(|r| self.displacement_at(r as f64, c))
            .collect()
    }
}

/// Samples column `col` of `img` at fractional row `y` with linear
/// interpolation and edge clamping.
fn sample_rows(img: &Array2<f64>, y: f64, col: usize) -> f64 {
    let last = img.nrows() - 1;
    let y = y.clamp(0.0, last as f64);
    let r0 = y.floor() as usize;
    let w = y - r0 as f64;
    let r1 = (r0 + 1).min(last);
    img[[r0, col]] * (1.0 - w) + img[[r1, col]] * w
}

/// Warps one frame: the content at output row `r` is taken from source row
/// `r - d(r)`.
pub fn warp_frame(recipe: &WarpRecipe, c: f64) -> Array2<f64> {
    let base = &recipe.base_frame.pixels;
    let n = base.nrows();
    let field = recipe.displacement_field(c);
    Array2::from_shape_fn((n, n), |(r, col)| {
        if field[r] == 0.0 {
            base[[r, col]]
        } else {
            sample_rows(base, r as f64 - field[r], col)
        }
    })
}

pub fn warp_sequence(recipe: &WarpRecipe) -> Result<DynamicObject> {
    recipe.validate()?;
    let n = recipe.base_frame.size();
    let mut frames = Array3::zeros((recipe.amplitudes.len(), n, n));
    for (t, &c) in recipe.amplitudes.iter().enumerate() {
        frames
            .index_axis_mut(Axis(0), t)
            .assign(&warp_frame(recipe, c));
    }
    DynamicObject::new(frames, format!("warp(N={})", recipe.grid_rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_base(n: usize) -> ImageFrame {
        let c = (n as f64 - 1.0) / 2.0;
        ImageFrame::new(Array2::from_shape_fn((n, n), |(i, j)| {
            let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            (-r2 / (2.0 * (n as f64 / 5.0).powi(2))).exp()
        }))
        .unwrap()
    }

    /// Mass of the warped frame computed on an 8x finer row grid.
    fn supersampled_mass(recipe: &WarpRecipe, c: f64) -> f64 {
        let base = &recipe.base_frame.pixels;
        let n = base.nrows();
        let sub = 8;
        let mut mass = 0.0;
        for r in 0..n {
            for k in 0..sub {
                let y = r as f64 - 0.5 + (k as f64 + 0.5) / sub as f64;
                let d = recipe.displacement_at(y.max(0.0), c);
                for col in 0..n {
                    mass += sample_rows(base, y - d, col) / sub as f64;
                }
            }
        }
        mass
    }

    #[test]
    fn first_frame_is_bit_exact() {
        let recipe = WarpRecipe::linear(gradient_base(32), 8, 5, 2.0);
        let obj = warp_sequence(&recipe).unwrap();
        assert_eq!(obj.frame_view(0), recipe.base_frame.pixels.view());
        assert_eq!(obj.n_frames(), 5);
    }

    #[test]
    fn row_zero_never_moves() {
        let recipe = WarpRecipe::linear(gradient_base(32), 8, 5, 2.0);
        for &c in &recipe.amplitudes {
            assert_eq!(recipe.displacement_at(0.0, c), 0.0);
        }
    }

    #[test]
    fn grid_rows_match_closed_form() {
        let recipe = WarpRecipe::linear(gradient_base(64), 8, 9, 4.0);
        for &c in &recipe.amplitudes {
            let field = recipe.displacement_field(c);
            for n in 0..8 {
                let expected = -c * (3.0 * PI * n as f64 / 8.0).sin();
                assert_eq!(field[n * 8], expected);
            }
        }
    }

    #[test]
    fn mass_matches_supersampled_oracle() {
        let recipe = WarpRecipe::linear(gradient_base(64), 8, 6, 4.0);
        let obj = warp_sequence(&recipe).unwrap();
        for (t, &c) in recipe.amplitudes.iter().enumerate() {
            let ours = obj.frame_view(t).sum();
            let oracle = supersampled_mass(&recipe, c);
            assert!(
                (ours - oracle).abs() <= 0.01 * oracle,
                "frame {t}: {ours} vs {oracle}"
            );
        }
    }

    #[test]
    fn rejects_bad_recipes() {
        let base = gradient_base(32);
        let mut r = WarpRecipe::linear(base.clone(), 8, 4, 1.0);
        r.amplitudes[2] = -1.0;
        assert!(warp_sequence(&r).is_err());
        assert!(warp_sequence(&WarpRecipe::linear(base.clone(), 7, 4, 1.0)).is_err());
        assert!(warp_sequence(&WarpRecipe::linear(base, 1, 4, 1.0)).is_err());
    }
}
