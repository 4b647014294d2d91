//! Fully connected rectifier network with flat parameter storage.
//!
//! Parameters live in one contiguous vector, layer by layer: the
//! `fan_in x fan_out` weight matrix (row-major) followed by the bias. The
//! optimiser and checkpoints work on the flat vector directly.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: usize,
    pub bias: usize,
}

/// Offsets of every layer inside the flat vector for the given layer sizes.
pub fn layer_slots(sizes: &[usize]) -> Vec<LayerSlot> {
    let mut off = 0;
    sizes
        .windows(2)
        .map(|w| {
            let slot = LayerSlot {
                fan_in: w[0],
                fan_out: w[1],
                weight: off,
                bias: off + w[0] * w[1],
            };
            off = slot.bias + w[1];
            slot
        })
        .collect()
}

/// `sum (in + 1) * out` over layers.
pub fn dense_param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

/// Uniform fan-in scaled initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Weights and biases in `+-1 / sqrt(fan_in)`.
    #[default]
    FanIn,
    /// Weights in `+-sqrt(6 / fan_in)`, zero biases.
    He,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Real> {
    sizes: Vec<usize>,
    slots: Vec<LayerSlot>,
    pub params: Vec<T>,
}

impl<T: Real> Mlp<T> {
    /// All-zero network.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        ensure!(sizes.len() >= 2, "a network needs at least an input and an output size");
        ensure!(sizes.iter().all(|&s| s >= 1), "layer sizes must be positive");
        Ok(Self {
            sizes: sizes.to_vec(),
            slots: layer_slots(sizes),
            params: vec![T::zero(); dense_param_count(sizes)],
        })
    }

    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn he_uniform(sizes: &[usize], seed: u64) -> Result<Self> {
        Self::init(sizes, InitScheme::He, seed)
    }

    pub fn init(sizes: &[usize], scheme: InitScheme, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slot in net.slots.clone() {
            let (bound, bias) = match scheme {
                InitScheme::He => ((6.0 / slot.fan_in as f64).sqrt(), false),
                InitScheme::FanIn => ((1.0 / slot.fan_in as f64).sqrt(), true),
            };
            let end = if bias { slot.bias + slot.fan_out } else { slot.bias };
            for w in &mut net.params[slot.weight..end] {
                *w = T::of(rng.gen_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<T>) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        ensure!(
            params.len() == net.params.len(),
            "expected {} parameters, got {}",
            net.params.len(),
            params.len()
        );
        ensure!(params.iter().all(|v| v.is_finite()), "parameters must be finite");
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn slots(&self) -> &[LayerSlot] {
        &self.slots
    }

    pub fn layers(&self) -> usize {
        self.slots.len()
    }

    pub fn weight(&self, k: usize) -> ArrayView2<'_, T> {
        let s = self.slots[k];
        ArrayView2::from_shape((s.fan_in, s.fan_out), &self.params[s.weight..s.bias]).expect("slot shape")
    }

    pub fn bias(&self, k: usize) -> ArrayView1<'_, T> {
        let s = self.slots[k];
        ArrayView1::from(&self.params[s.bias..s.bias + s.fan_out])
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        ensure!(
            x.ncols() == self.sizes[0],
            "input has {} features, network expects {}",
            x.ncols(),
            self.sizes[0]
        );
        Ok(())
    }

    fn layer(&self, k: usize, x: &ArrayView2<T>) -> Array2<T> {
        let mut z = x.dot(&self.weight(k));
        z += &self.bias(k);
        if k + 1 < self.layers() {
            z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
        }
        z
    }

    /// Network outputs, one row per input row.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let mut a = self.layer(0, &x);
        for k in 1..self.layers() {
            a = self.layer(k, &a.view());
        }
        Ok(a)
    }

    /// Post-activation of every layer; the last entry is the output.
    pub fn forward_trace(&self, x: ArrayView2<T>) -> Result<Vec<Array2<T>>> {
        self.check_input(&x)?;
        let mut trace: Vec<Array2<T>> = Vec::with_capacity(self.layers());
        for k in 0..self.layers() {
            let a = match trace.last() {
                None => self.layer(k, &x),
                Some(prev) => self.layer(k, &prev.view()),
            };
            trace.push(a);
        }
        Ok(trace)
    }

    /// Parameter gradient given the gradient with respect to the outputs.
    pub fn backward(&self, x: ArrayView2<T>, trace: &[Array2<T>], d_out: ArrayView2<T>) -> Vec<T> {
        let mut grad = vec![T::zero(); self.params.len()];
        let mut delta = d_out.to_owned();
        for k in (0..self.layers()).rev() {
            let s = self.slots[k];
            let input = if k == 0 { x.view() } else { trace[k - 1].view() };
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            for (dst, &src) in grad[s.weight..s.bias].iter_mut().zip(gw.iter()) {
                *dst = src;
            }
            grad[s.bias..s.bias + s.fan_out].copy_from_slice(gb.as_slice().expect("contiguous"));
            if k > 0 {
                let mut d = delta.dot(&self.weight(k).t());
                Zip::from(&mut d).and(&trace[k - 1]).for_each(|d, &a| {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                });
                delta = d;
            }
        }
        grad
    }

    /// Value of a loss on the outputs and its gradient with respect to the
    /// parameters. `loss` receives the first output column and returns the
    /// scalar value and its gradient.
    pub fn value_and_grad(
        &self,
        x: ArrayView2<T>,
        loss: impl FnOnce(ArrayView1<T>) -> Result<(f64, Array1<T>)>,
    ) -> Result<(f64, Vec<T>)> {
        let trace = self.forward_trace(x.view())?;
        let out = trace.last().expect("at least one layer");
        let (value, d_out) = loss(out.column(0))?;
        if !value.is_finite() {
            return Err(crate::error::Error::Numerical(format!("loss is not finite: {value}")));
        }
        ensure!(d_out.len() == out.nrows(), "loss gradient has the wrong length");
        let d_out = d_out.insert_axis(Axis(1));
        Ok((value, self.backward(x, &trace, d_out.view())))
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            sizes: self.sizes.clone(),
            slots: self.slots.clone(),
            params: self.params.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hand_computed_forward() {
        // 2 -> 2 (relu) -> 1
        let params = vec![1.0, -1.0, 2.0, 0.5, 0.1, -0.2, 3.0, 4.0, 0.25];
        let net = Mlp::<f64>::from_params(&[2, 2, 1], params).unwrap();
        let x = array![[1.0, 2.0]];
        // z1 = [1 + 4 + 0.1, -1 + 1 - 0.2] = [5.1, -0.2] -> relu [5.1, 0]
        let y = net.forward(x.view()).unwrap();
        assert!((y[[0, 0]] - (5.1 * 3.0 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn slots_tile_the_vector() {
        let sizes = [6, 4, 4, 1];
        let slots = layer_slots(&sizes);
        assert_eq!(slots[0].weight, 0);
        assert_eq!(slots[1].weight, slots[0].bias + 4);
        assert_eq!(slots[2].bias + 1, dense_param_count(&sizes));
        assert_eq!(dense_param_count(&sizes), 7 * 4 + 5 * 4 + 5);
    }

    #[test]
    fn finite_difference_gradient() {
        let net = Mlp::<f64>::he_uniform(&[3, 5, 4, 1], 9).unwrap();
        let x = array![[0.3, -0.2, 0.9], [0.1, 0.4, -0.7], [-0.5, 0.6, 0.2]];
        let loss = |y: ArrayView1<f64>| Ok((y.mapv(|v| v * v).sum(), y.mapv(|v| 2.0 * v)));
        let (_, g) = net.value_and_grad(x.view(), loss).unwrap();
        let f = |p: &[f64]| {
            let n = Mlp::from_params(&[3, 5, 4, 1], p.to_vec()).unwrap();
            n.forward(x.view()).unwrap().mapv(|v| v * v).sum()
        };
        let h = 1e-6;
        for i in 0..net.params.len() {
            let mut p = net.params.clone();
            p[i] += h;
            let up = f(&p);
            p[i] -= 2.0 * h;
            let down = f(&p);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn init_bounds() {
        let sizes = [16, 9, 1];
        let he = Mlp::<f64>::init(&sizes, InitScheme::He, 1).unwrap();
        let fi = Mlp::<f64>::init(&sizes, InitScheme::FanIn, 1).unwrap();
        let s = he.slots()[0];
        assert!(he.params[s.weight..s.bias].iter().all(|w| w.abs() <= (6.0f64 / 16.0).sqrt()));
        assert!(he.params[s.bias..s.bias + 9].iter().all(|&b| b == 0.0));
        assert!(fi.params[s.weight..s.bias + 9].iter().all(|w| w.abs() <= 0.25));
        assert!(fi.params[s.bias..s.bias + 9].iter().any(|&b| b != 0.0));
    }

    #[test]
    fn rejects_wrong_input_width() {
        let net = Mlp::<f64>::zeros(&[3, 2, 1]).unwrap();
        assert!(net.forward(array![[1.0, 2.0]].view()).is_err());
    }
}
