//! The neural field: positional encoding followed by a rectifier MLP with a
//! raw linear output.

use ndarray::{Array1, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use super::mlp::{dense_param_count, InitScheme, Mlp};
use super::posenc::{encode_grid, encode_points, PosEncConfig};
use crate::datasets::{Container, DynamicObject};
use crate::error::{ensure, Error, Result};
use crate::real::Real;

/// Encoding size plus MLP shape: `h` rectifier layers of width `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NfArch {
    pub frequencies: usize,
    pub hidden_layers: usize,
    pub width: usize,
    #[serde(default)]
    pub init: InitScheme,
}

impl Default for NfArch {
    fn default() -> Self {
        Self {
            frequencies: 10,
            hidden_layers: 7,
            width: 64,
            init: InitScheme::FanIn,
        }
    }
}

impl NfArch {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.frequencies >= 1, "frequencies must be at least 1");
        ensure!(self.hidden_layers >= 1, "hidden_layers must be at least 1");
        ensure!(self.width >= 1, "width must be at least 1");
        Ok(())
    }

    pub fn posenc(&self) -> PosEncConfig {
        PosEncConfig {
            frequencies: self.frequencies,
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![6 * self.frequencies];
        sizes.extend(std::iter::repeat(self.width).take(self.hidden_layers));
        sizes.push(1);
        sizes
    }

    /// `(6L + 1) w + (h - 1)(w + 1) w + (w + 1)`.
    pub fn param_count(&self) -> usize {
        dense_param_count(&self.layer_sizes())
    }

    /// Minimum depth `log2(J pi / (L pi / 2))` for the rectifier network to
    /// reach the grid's highest frequency from the top encoding frequency.
    pub fn depth_bound(&self, size: usize) -> f64 {
        (2.0 * size as f64 / self.frequencies as f64).log2()
    }

    /// A warning when the depth is below [`NfArch::depth_bound`].
    pub fn expressivity_warning(&self, size: usize) -> Option<String> {
        let bound = self.depth_bound(size);
        ((self.hidden_layers as f64) < bound).then(|| {
            format!(
                "{} hidden layers is below the depth bound {bound:.2} for J = {size} and L = {}",
                self.hidden_layers, self.frequencies
            )
        })
    }
}

/// The field `f(x, y, t)` on normalised coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralField<T: Real> {
    pub arch: NfArch,
    pub mlp: Mlp<T>,
    pub seed: u64,
}

/// Frames rendered per forward call when rendering a whole grid.
const RENDER_CHUNK_FRAMES: usize = 4;

impl<T: Real> NeuralField<T> {
    /// Random initialisation from `seed` following `arch.init`.
    pub fn new(arch: NfArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            mlp: Mlp::init(&arch.layer_sizes(), arch.init, seed)?,
            seed,
        })
    }

    pub fn from_params(arch: NfArch, params: Vec<T>, seed: u64) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            mlp: Mlp::from_params(&arch.layer_sizes(), params)?,
            seed,
        })
    }

    pub fn param_count(&self) -> usize {
        self.mlp.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.mlp.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.mlp.params
    }

    /// Densities at arbitrary normalised coordinates.
    pub fn forward_points(&self, coords: &[[f64; 3]]) -> Result<Array1<f64>> {
        let x = encode_points::<T>(coords, &self.arch.posenc())?;
        Ok(self.mlp.forward(x.view())?.column(0).mapv(|v| v.f64()))
    }

    /// Renders the listed frames of a `size x size x frames` grid.
    pub fn render_frames(&self, size: usize, frames: usize, which: &[usize]) -> Result<Array3<f64>> {
        let mut out = Array3::zeros((which.len(), size, size));
        for (chunk_idx, chunk) in which.chunks(RENDER_CHUNK_FRAMES).enumerate() {
            let x = encode_grid::<T>(size, frames, chunk, &self.arch.posenc())?;
            let y = self.mlp.forward(x.view())?;
            for (k, v) in y.column(0).iter().enumerate() {
                let t = chunk_idx * RENDER_CHUNK_FRAMES + k / (size * size);
                let r = (k / size) % size;
                out[[t, r, k % size]] = v.f64();
            }
        }
        Ok(out)
    }

    /// Renders every frame on the pixel-centre grid.
    pub fn render_grid(&self, size: usize, frames: usize) -> Result<DynamicObject> {
        ensure!(size >= 1 && frames >= 1, "render grid must be non-empty");
        let all: Vec<usize> = (0..frames).collect();
        let data = self.render_frames(size, frames, &all)?;
        ensure!(data.iter().all(|v| v.is_finite()), "rendered field is not finite");
        Ok(DynamicObject {
            normalization: 1.0,
            frames: data,
            provenance: "neural-field".into(),
        })
    }

    /// Loss on a set of rendered frames and its parameter gradient. `loss`
    /// receives the rendered frames (`which.len() x size x size`) and returns
    /// the value and its gradient with respect to them.
    pub fn value_and_grad_frames(
        &self,
        size: usize,
        frames: usize,
        which: &[usize],
        loss: impl FnOnce(&Array3<f64>) -> Result<(f64, Array3<f64>)>,
    ) -> Result<(f64, Vec<T>)> {
        let x = encode_grid::<T>(size, frames, which, &self.arch.posenc())?;
        let shape = (which.len(), size, size);
        self.mlp.value_and_grad(x.view(), |y: ArrayView1<T>| {
            let rendered = Array3::from_shape_vec(shape, y.iter().map(|v| v.f64()).collect())
                .expect("output count matches grid");
            let (value, grad) = loss(&rendered)?;
            ensure!(grad.dim() == shape, "loss gradient shape {:?} != {:?}", grad.dim(), shape);
            Ok((value, grad.iter().map(|&g| T::of(g)).collect()))
        })
    }

    /// Loss on raw outputs at arbitrary points.
    pub fn value_and_grad_points(
        &self,
        coords: &[[f64; 3]],
        loss: impl FnOnce(ArrayView1<T>) -> Result<(f64, Array1<T>)>,
    ) -> Result<(f64, Vec<T>)> {
        let x = encode_points::<T>(coords, &self.arch.posenc())?;
        self.mlp.value_and_grad(x.view(), loss)
    }

    /// Same as [`Self::value_and_grad_points`] with a pre-encoded batch.
    pub fn value_and_grad_encoded(
        &self,
        x: &Array2<T>,
        loss: impl FnOnce(ArrayView1<T>) -> Result<(f64, Array1<T>)>,
    ) -> Result<(f64, Vec<T>)> {
        self.mlp.value_and_grad(x.view(), loss)
    }

    pub fn cast<U: Real>(&self) -> NeuralField<U> {
        NeuralField {
            arch: self.arch,
            mlp: self.mlp.cast(),
            seed: self.seed,
        }
    }

    /// Stores the architecture in metadata and one weight and one bias array
    /// per layer, all names prefixed with `prefix`.
    pub fn write_into(&self, c: &mut Container, prefix: &str) -> Result<()> {
        c.set_meta(&format!("{prefix}arch"), serde_json::to_value(self.arch)?);
        c.set_meta(&format!("{prefix}dtype"), T::NAME);
        c.set_meta(&format!("{prefix}seed"), self.seed);
        for (k, s) in self.mlp.slots().iter().enumerate() {
            c.push(
                &format!("{prefix}layer{k}.weight"),
                vec![s.fan_in, s.fan_out],
                T::wrap(self.mlp.params[s.weight..s.bias].to_vec()),
            )?;
            c.push(
                &format!("{prefix}layer{k}.bias"),
                vec![s.fan_out],
                T::wrap(self.mlp.params[s.bias..s.bias + s.fan_out].to_vec()),
            )?;
        }
        Ok(())
    }

    pub fn read_from(c: &Container, prefix: &str) -> Result<Self> {
        let arch: NfArch = serde_json::from_value(c.meta(&format!("{prefix}arch"))?.clone())?;
        arch.validate()?;
        let dtype = c.meta_str(&format!("{prefix}dtype"))?;
        ensure!(dtype == T::NAME, "checkpoint holds {dtype} parameters, expected {}", T::NAME);
        let seed = c.meta_u64(&format!("{prefix}seed"))?;
        let mut params = Vec::with_capacity(arch.param_count());
        for k in 0..arch.hidden_layers + 1 {
            for part in ["weight", "bias"] {
                let a = c.get(&format!("{prefix}layer{k}.{part}"))?;
                let v = T::unwrap(&a.data)
                    .ok_or_else(|| Error::Validation(format!("layer {k} {part} has the wrong element type")))?;
                params.extend(v);
            }
        }
        Self::from_params(arch, params, seed)
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.set_meta("kind", "nf_params");
        self.write_into(&mut c, "")?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        Self::read_from(c, "")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nf::posenc::grid_point;
    use ndarray::array;

    #[test]
    fn default_param_count_closed_form() {
        let a = NfArch::default();
        assert_eq!(a.param_count(), (60 + 1) * 64 + 6 * 65 * 64 + 65);
        assert_eq!(a.param_count(), 28929);
        let net = NeuralField::<f32>::new(a, 0).unwrap();
        let enumerated: usize = (0..net.mlp.layers())
            .map(|k| net.mlp.weight(k).len() + net.mlp.bias(k).len())
            .sum();
        assert_eq!(enumerated, a.param_count());
    }

    #[test]
    fn depth_bound_for_default() {
        let a = NfArch::default();
        assert!(a.depth_bound(128) < 5.0);
        assert!(a.expressivity_warning(128).is_none());
        let shallow = NfArch {
            hidden_layers: 3,
            ..a
        };
        assert!(shallow.expressivity_warning(128).is_some());
    }

    fn tiny() -> NfArch {
        NfArch {
            frequencies: 2,
            hidden_layers: 2,
            width: 4,
            ..Default::default()
        }
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let mut f = NeuralField::<f64>::new(tiny(), 3).unwrap();
        let last = *f.mlp.slots().last().unwrap();
        for v in &mut f.mlp.params[last.weight..] {
            *v = 0.0;
        }
        let r = f.render_grid(4, 3).unwrap();
        assert!(r.frames.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_bias_renders_constant() {
        let mut f = NeuralField::<f64>::new(tiny(), 3).unwrap();
        let last = *f.mlp.slots().last().unwrap();
        for v in &mut f.mlp.params[last.weight..last.bias] {
            *v = 0.0;
        }
        f.mlp.params[last.bias] = 0.7;
        let r = f.render_grid(5, 2).unwrap();
        assert!(r.frames.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn hand_set_two_layer_net_at_origin() {
        // L = 1 so the encoding of the origin is (0, 0, 0, 1, 1, 1).
        let arch = NfArch {
            frequencies: 1,
            hidden_layers: 2,
            width: 4,
            ..Default::default()
        };
        let mut params = Vec::new();
        // layer 0: 6 x 4, entry (i, j) = (i + 1) * 0.1 - j * 0.2, bias 0.05 j
        for i in 0..6 {
            for j in 0..4 {
                params.push((i + 1) as f64 * 0.1 - j as f64 * 0.2);
            }
        }
        params.extend((0..4).map(|j| 0.05 * j as f64));
        // layer 1: 4 x 4 identity minus 0.5, bias -0.1
        for i in 0..4 {
            for j in 0..4 {
                params.push(if i == j { 0.5 } else { -0.5 });
            }
        }
        params.extend([-0.1; 4]);
        // output: weights 1, 2, 3, 4 and bias 0.5
        params.extend([1.0, 2.0, 3.0, 4.0, 0.5]);
        let f = NeuralField::from_params(arch, params, 0).unwrap();

        let x = array![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut h1 = [0.0; 4];
        for j in 0..4 {
            let z: f64 = (0..6).map(|i| x[i] * ((i + 1) as f64 * 0.1 - j as f64 * 0.2)).sum::<f64>() + 0.05 * j as f64;
            h1[j] = z.max(0.0);
        }
        let mut h2 = [0.0; 4];
        for j in 0..4 {
            let z: f64 = (0..4).map(|i| h1[i] * if i == j { 0.5 } else { -0.5 }).sum::<f64>() - 0.1;
            h2[j] = z.max(0.0);
        }
        let expected = h2[0] + 2.0 * h2[1] + 3.0 * h2[2] + 4.0 * h2[3] + 0.5;
        let got = f.forward_points(&[[0.0; 3]]).unwrap()[0];
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn batch_equals_pointwise_and_render_is_repeatable() {
        let f = NeuralField::<f32>::new(NfArch::default(), 11).unwrap();
        let pts: Vec<[f64; 3]> = (0..37).map(|k| grid_point(k % 6, (k * 5) % 6, k % 4, 6, 4)).collect();
        let batch = f.forward_points(&pts).unwrap();
        for (k, p) in pts.iter().enumerate() {
            assert_eq!(f.forward_points(&[*p]).unwrap()[0], batch[k]);
        }
        let a = f.render_grid(6, 4).unwrap();
        let b = f.render_grid(6, 4).unwrap();
        assert_eq!(a, b);
        let one = f.forward_points(&[grid_point(2, 3, 1, 6, 4)]).unwrap()[0];
        assert_eq!(a.frames[[1, 2, 3]], one);
    }

    #[test]
    fn zero_loss_zero_gradient() {
        let f = NeuralField::<f64>::new(tiny(), 1).unwrap();
        let (v, g) = f
            .value_and_grad_frames(3, 2, &[0, 1], |r| Ok((0.0, Array3::zeros(r.dim()))))
            .unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let f = NeuralField::<f64>::new(tiny(), 1).unwrap();
        let r = f.value_and_grad_frames(3, 2, &[0], |r| Ok((f64::NAN, Array3::zeros(r.dim()))));
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let f = NeuralField::<f32>::new(tiny(), 5).unwrap();
        let c = Container::from_bytes(&f.to_container().unwrap().to_bytes().unwrap()).unwrap();
        assert_eq!(NeuralField::<f32>::from_container(&c).unwrap(), f);
        assert!(NeuralField::<f64>::from_container(&c).is_err());
    }
}
