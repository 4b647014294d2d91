//! The restoration operator `D` used by the spatial prior, plus simple
//! closed-form stand-ins for testing.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use super::cnn::{ConvNet, Geometry};
use crate::datasets::Container;
use crate::error::{ensure, Error, Result};
use crate::real::Real;
use crate::tomo::ImageFrame;

/// A static frame-to-frame restoration map.
pub trait Restorer: Send + Sync {
    fn restore_frame(&self, frame: ArrayView2<f64>) -> Result<Array2<f64>>;

    /// Restores each frame of a `P x J x J` stack independently.
    fn restore_frames(&self, frames: &Array3<f64>) -> Result<Array3<f64>> {
        let mut out = Array3::zeros(frames.dim());
        for (src, mut dst) in frames.outer_iter().zip(out.outer_iter_mut()) {
            dst.assign(&self.restore_frame(src)?);
        }
        Ok(out)
    }

    fn label(&self) -> String;
}

/// `D(f) = f`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRestorer;

impl Restorer for IdentityRestorer {
    fn restore_frame(&self, frame: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(frame.to_owned())
    }

    fn label(&self) -> String {
        "identity".into()
    }
}

/// `D(f) = c f`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledIdentity(pub f64);

impl Restorer for ScaledIdentity {
    fn restore_frame(&self, frame: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(&frame * self.0)
    }

    fn label(&self) -> String {
        format!("scaled-identity({})", self.0)
    }
}

/// `D(f) = A vec(f)` for a dense `J^2 x J^2` matrix, row-major vectorisation.
#[derive(Debug, Clone)]
pub struct LinearRestorer {
    pub matrix: Array2<f64>,
}

impl Restorer for LinearRestorer {
    fn restore_frame(&self, frame: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (h, w) = frame.dim();
        ensure!(
            self.matrix.dim() == (h * w, h * w),
            "linear restorer of size {:?} cannot act on a {h}x{w} frame",
            self.matrix.dim()
        );
        let v = frame.as_standard_layout().into_shape_with_order(h * w).expect("contiguous");
        Ok(self.matrix.dot(&v).into_shape_with_order((h, w)).expect("size matches"))
    }

    fn label(&self) -> String {
        "linear".into()
    }
}

/// The learned restoration network. In residual mode the network predicts
/// the degradation and `D(f) = f - net(f)`; otherwise `D(f) = net(f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestorationModel<T: Real = f32> {
    pub net: ConvNet<T>,
    pub residual: bool,
    /// Free-form training record kept with checkpoints.
    pub training: serde_json::Value,
}

/// Frames per forward call during inference, bounding im2col memory.
const INFER_CHUNK: usize = 4;

impl<T: Real> RestorationModel<T> {
    pub const DEFAULT_CHANNELS: usize = 64;
    pub const DEFAULT_DEPTH: usize = 6;

    pub fn untrained(channels: usize, depth: usize, residual: bool, seed: u64) -> Result<Self> {
        Ok(Self {
            net: ConvNet::he_uniform(channels, depth, seed)?,
            residual,
            training: serde_json::Value::Null,
        })
    }

    pub fn zeros(channels: usize, depth: usize) -> Result<Self> {
        Ok(Self {
            net: ConvNet::zeros(channels, depth)?,
            residual: false,
            training: serde_json::Value::Null,
        })
    }

    /// Restores a stack of equally sized frames.
    pub fn apply(&self, frames: &Array3<f64>) -> Result<Array3<f64>> {
        let (p, h, w) = frames.dim();
        let mut out = Array3::zeros((p, h, w));
        for start in (0..p).step_by(INFER_CHUNK) {
            let end = (start + INFER_CHUNK).min(p);
            let g = Geometry { n: end - start, h, w };
            let x = Array2::from_shape_fn((g.pixels(), 1), |(k, _)| {
                T::of(frames[[start + k / (h * w), (k / w) % h, k % w]])
            });
            let y = self.net.forward(x.view(), g)?;
            for (k, v) in y.column(0).iter().enumerate() {
                let idx = [start + k / (h * w), (k / w) % h, k % w];
                out[idx] = if self.residual {
                    frames[idx] - v.f64()
                } else {
                    v.f64()
                };
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("restoration output is not finite".into()));
        }
        Ok(out)
    }

    pub fn restore(&self, frame: &ImageFrame) -> Result<ImageFrame> {
        frame.validate()?;
        Ok(ImageFrame {
            pixels: self.restore_frame(frame.pixels.view())?,
            pixel_spacing: frame.pixel_spacing,
        })
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.set_meta("kind", "restoration_model");
        c.set_meta("channels", self.net.channels as u64);
        c.set_meta("depth", self.net.depth as u64);
        c.set_meta("residual", self.residual);
        c.set_meta("dtype", T::NAME);
        c.set_meta("training", self.training.clone());
        for (k, s) in self.net.slots().iter().enumerate() {
            c.push(
                &format!("layer{k}.weight"),
                vec![3, 3, s.fan_in / 9, s.fan_out],
                T::wrap(self.net.params[s.weight..s.bias].to_vec()),
            )?;
            c.push(
                &format!("layer{k}.bias"),
                vec![s.fan_out],
                T::wrap(self.net.params[s.bias..s.bias + s.fan_out].to_vec()),
            )?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let kind = c.meta_str("kind")?;
        ensure!(kind == "restoration_model", "container holds `{kind}`, expected a restoration model");
        let dtype = c.meta_str("dtype")?;
        ensure!(dtype == T::NAME, "checkpoint holds {dtype} weights, expected {}", T::NAME);
        let channels = c.meta_u64("channels")? as usize;
        let depth = c.meta_u64("depth")? as usize;
        let mut params = Vec::new();
        for k in 0..depth {
            for part in ["weight", "bias"] {
                let a = c.get(&format!("layer{k}.{part}"))?;
                params.extend(
                    T::unwrap(&a.data)
                        .ok_or_else(|| Error::Validation(format!("layer {k} {part} has the wrong element type")))?,
                );
            }
        }
        Ok(Self {
            net: ConvNet::from_params(channels, depth, params)?,
            residual: c
                .meta("residual")?
                .as_bool()
                .ok_or_else(|| Error::Validation("`residual` must be a boolean".into()))?,
            training: c.meta("training").cloned().unwrap_or(serde_json::Value::Null),
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

impl<T: Real> Restorer for RestorationModel<T> {
    fn restore_frame(&self, frame: ArrayView2<f64>) -> Result<Array2<f64>> {
        let stack = frame.to_owned().insert_axis(Axis(0));
        Ok(self.apply(&stack)?.index_axis_move(Axis(0), 0))
    }

    fn restore_frames(&self, frames: &Array3<f64>) -> Result<Array3<f64>> {
        self.apply(frames)
    }

    fn label(&self) -> String {
        format!(
            "cnn({}x{}{})",
            self.net.depth,
            self.net.channels,
            if self.residual { ", residual" } else { "" }
        )
    }
}
