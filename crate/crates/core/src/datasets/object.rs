use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{ensure, Result};
use crate::tomo::ImageFrame;

/// A time-varying 2D object sampled on a `P x J x J` grid (time-major).
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicObject {
    pub frames: Array3<f64>,
    /// Peak value used as the PSNR reference.
    pub normalization: f64,
    pub provenance: String,
}

impl DynamicObject {
    /// Builds an object whose normalization is the maximum over all frames.
    pub fn new(frames: Array3<f64>, provenance: impl Into<String>) -> Result<Self> {
        let peak = frames.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let obj = Self {
            frames,
            normalization: if peak > 0.0 { peak } else { 1.0 },
            provenance: provenance.into(),
        };
        obj.validate()?;
        Ok(obj)
    }

    pub fn from_frames(frames: &[ImageFrame], provenance: impl Into<String>) -> Result<Self> {
        ensure!(!frames.is_empty(), "dynamic object needs at least one frame");
        let n = frames[0].size();
        let mut data = Array3::zeros((frames.len(), n, n));
        for (t, f) in frames.iter().enumerate() {
            ensure!(f.size() == n, "frames must share a common size");
            data.index_axis_mut(Axis(0), t).assign(&f.pixels);
        }
        Self::new(data, provenance)
    }

    pub fn validate(&self) -> Result<()> {
        let (p, r, c) = self.frames.dim();
        ensure!(p >= 1, "dynamic object needs at least one frame");
        ensure!(r == c, "frames must be square, got {r}x{c}");
        ensure!(
            self.frames.iter().all(|v| v.is_finite()),
            "dynamic object contains non-finite values"
        );
        ensure!(
            self.normalization.is_finite() && self.normalization > 0.0,
            "normalization must be positive"
        );
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len_of(Axis(0))
    }

    pub fn size(&self) -> usize {
        self.frames.len_of(Axis(1))
    }

    pub fn frame_view(&self, t: usize) -> ArrayView2<'_, f64> {
        self.frames.index_axis(Axis(0), t)
    }

    pub fn frame(&self, t: usize) -> ImageFrame {
        ImageFrame {
            pixels: self.frame_view(t).to_owned(),
            pixel_spacing: 1.0,
        }
    }

    /// Row `row` of every frame stacked over time, a `P x J` image.
    pub fn xt_slice(&self, row: usize) -> Array2<f64> {
        self.frames.index_axis(Axis(1), row).to_owned()
    }

    /// An object whose frames are all copies of `frame`.
    pub fn repeat_static(frame: &ImageFrame, count: usize, provenance: impl Into<String>) -> Result<Self> {
        let n = frame.size();
        let data = Array3::from_shape_fn((count, n, n), |(_, i, j)| frame.pixels[[i, j]]);
        Self::new(data, provenance)
    }
}
