use ndarray::{Array1, Array2};

use crate::error::{ensure, Result};

/// A single square 2D density image.
///
/// Pixels are indexed `[row, col]`; row 0 is the top of the image. The
/// rotation axis passes through the image centre.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame {
    pub pixels: Array2<f64>,
    pub pixel_spacing: f64,
}

impl ImageFrame {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        Self::with_spacing(pixels, 1.0)
    }

    pub fn with_spacing(pixels: Array2<f64>, pixel_spacing: f64) -> Result<Self> {
        let frame = Self {
            pixels,
            pixel_spacing,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            pixels: Array2::zeros((size, size)),
            pixel_spacing: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.pixels.dim();
        ensure!(rows == cols, "frame must be square, got {rows}x{cols}");
        ensure!(rows >= 2, "frame size must be at least 2, got {rows}");
        ensure!(
            self.pixel_spacing.is_finite() && self.pixel_spacing > 0.0,
            "pixel spacing must be positive and finite"
        );
        ensure!(
            self.pixels.iter().all(|v| v.is_finite()),
            "frame contains non-finite values"
        );
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn pixel_area(&self) -> f64 {
        self.pixel_spacing * self.pixel_spacing
    }

    /// Total mass, `sum(pixels) * pixel_area`.
    pub fn mass(&self) -> f64 {
        self.pixels.sum() * self.pixel_area()
    }

    /// Physical coordinates of a pixel centre relative to the rotation axis,
    /// with `y` pointing up.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let c = (self.size() as f64 - 1.0) / 2.0;
        (
            (col as f64 - c) * self.pixel_spacing,
            (c - row as f64) * self.pixel_spacing,
        )
    }
}

/// Line integrals of one frame at one view angle.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub bins: Array1<f64>,
    pub angle: f64,
    pub time_index: usize,
    pub bin_spacing: f64,
}

impl Projection {
    pub fn new(bins: Array1<f64>, angle: f64, time_index: usize) -> Result<Self> {
        let p = Self {
            bins,
            angle,
            time_index,
            bin_spacing: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.bins.len() >= 2, "projection needs at least 2 bins");
        ensure!(self.angle.is_finite(), "projection angle must be finite");
        ensure!(
            self.bin_spacing.is_finite() && self.bin_spacing > 0.0,
            "bin spacing must be positive and finite"
        );
        ensure!(
            self.bins.iter().all(|v| v.is_finite()),
            "projection contains non-finite values"
        );
        Ok(())
    }

    pub fn detector_count(&self) -> usize {
        self.bins.len()
    }
}
