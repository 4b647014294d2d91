//! Plain 3x3 convolutional network (DnCNN layout) via im2col and GEMM.
//!
//! Activations are stored pixel-major: an `(N H W) x C` matrix, so each
//! convolution is one matrix product of the im2col patches with a
//! `(9 C_in) x C_out` weight. Zero padding keeps the spatial size.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::nf::mlp::LayerSlot;
use crate::real::Real;

const TAPS: usize = 9;

/// Batch geometry: `n` images of `h x w` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

impl Geometry {
    pub fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }
}

/// Gathers the 3x3 neighbourhood of every pixel, zero outside the image.
/// Column index is `tap * C + channel` with `tap = 3 dy + dx`.
pub fn im2col<T: Real>(x: ArrayView2<T>, g: Geometry) -> Array2<T> {
    let c = x.ncols();
    let mut out = Array2::zeros((g.pixels(), TAPS * c));
    let src = x.as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("fresh array");
    for n in 0..g.n {
        for i in 0..g.h {
            for j in 0..g.w {
                let row = (n * g.h + i) * g.w + j;
                let base = row * TAPS * c;
                for dy in 0..3 {
                    let si = i as isize + dy as isize - 1;
                    if si < 0 || si >= g.h as isize {
                        continue;
                    }
                    for dx in 0..3 {
                        let sj = j as isize + dx as isize - 1;
                        if sj < 0 || sj >= g.w as isize {
                            continue;
                        }
                        let srow = (n * g.h + si as usize) * g.w + sj as usize;
                        let tap = dy * 3 + dx;
                        dst[base + tap * c..base + (tap + 1) * c].copy_from_slice(&src[srow * c..(srow + 1) * c]);
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto pixels.
pub fn col2im<T: Real>(cols: ArrayView2<T>, g: Geometry, c: usize) -> Array2<T> {
    let mut out = Array2::zeros((g.pixels(), c));
    let src = cols.as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("fresh array");
    for n in 0..g.n {
        for i in 0..g.h {
            for j in 0..g.w {
                let row = (n * g.h + i) * g.w + j;
                let base = row * TAPS * c;
                for dy in 0..3 {
                    let si = i as isize + dy as isize - 1;
                    if si < 0 || si >= g.h as isize {
                        continue;
                    }
                    for dx in 0..3 {
                        let sj = j as isize + dx as isize - 1;
                        if sj < 0 || sj >= g.w as isize {
                            continue;
                        }
                        let drow = (n * g.h + si as usize) * g.w + sj as usize;
                        let tap = dy * 3 + dx;
                        for ch in 0..c {
                            dst[drow * c + ch] += src[base + tap * c + ch];
                        }
                    }
                }
            }
        }
    }
    out
}

/// A stack of 3x3 convolutions with rectifiers between them and a linear
/// single-channel output.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet<T: Real> {
    pub channels: usize,
    pub depth: usize,
    slots: Vec<LayerSlot>,
    pub params: Vec<T>,
}

impl<T: Real> ConvNet<T> {
    fn layout(channels: usize, depth: usize) -> Vec<LayerSlot> {
        let mut sizes = vec![1];
        sizes.extend(std::iter::repeat(channels).take(depth - 1));
        sizes.push(1);
        let mut off = 0;
        sizes
            .windows(2)
            .map(|w| {
                let slot = LayerSlot {
                    fan_in: TAPS * w[0],
                    fan_out: w[1],
                    weight: off,
                    bias: off + TAPS * w[0] * w[1],
                };
                off = slot.bias + w[1];
                slot
            })
            .collect()
    }

    pub fn zeros(channels: usize, depth: usize) -> Result<Self> {
        ensure!(depth >= 2, "a restoration network needs at least 2 layers");
        ensure!(channels >= 1, "channel count must be positive");
        let slots = Self::layout(channels, depth);
        let len = slots.last().map_or(0, |s| s.bias + s.fan_out);
        Ok(Self {
            channels,
            depth,
            slots,
            params: vec![T::zero(); len],
        })
    }

    /// He-uniform weights, zero biases.
    pub fn he_uniform(channels: usize, depth: usize, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(channels, depth)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in net.slots.clone() {
            let bound = (6.0 / s.fan_in as f64).sqrt();
            for w in &mut net.params[s.weight..s.bias] {
                *w = T::of(rng.gen_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn from_params(channels: usize, depth: usize, params: Vec<T>) -> Result<Self> {
        let mut net = Self::zeros(channels, depth)?;
        ensure!(params.len() == net.params.len(), "expected {} parameters, got {}", net.params.len(), params.len());
        ensure!(params.iter().all(|v| v.is_finite()), "parameters must be finite");
        net.params = params;
        Ok(net)
    }

    pub fn slots(&self) -> &[LayerSlot] {
        &self.slots
    }

    /// Side length of the region that influences one output pixel.
    pub fn receptive_field(&self) -> usize {
        2 * self.depth + 1
    }

    fn weight(&self, k: usize) -> ArrayView2<'_, T> {
        let s = self.slots[k];
        ArrayView2::from_shape((s.fan_in, s.fan_out), &self.params[s.weight..s.bias]).expect("slot shape")
    }

    fn bias(&self, k: usize) -> ndarray::ArrayView1<'_, T> {
        let s = self.slots[k];
        ndarray::ArrayView1::from(&self.params[s.bias..s.bias + s.fan_out])
    }

    fn check(&self, g: Geometry, x: &ArrayView2<T>) -> Result<()> {
        ensure!(x.dim() == (g.pixels(), 1), "input must be a single-channel pixel column");
        let rf = self.receptive_field();
        ensure!(
            g.h >= rf && g.w >= rf,
            "image {}x{} is smaller than the receptive field {rf}",
            g.h,
            g.w
        );
        Ok(())
    }

    fn conv(&self, k: usize, cols: &Array2<T>) -> Array2<T> {
        let mut z = cols.dot(&self.weight(k));
        z += &self.bias(k);
        if k + 1 < self.slots.len() {
            z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
        }
        z
    }

    /// Output column for a single-channel input column.
    pub fn forward(&self, x: ArrayView2<T>, g: Geometry) -> Result<Array2<T>> {
        self.check(g, &x)?;
        let mut a = x.to_owned();
        for k in 0..self.slots.len() {
            a = self.conv(k, &im2col(a.view(), g));
        }
        Ok(a)
    }

    /// Forward pass keeping each layer's im2col matrix and post-activation.
    pub fn forward_trace(&self, x: ArrayView2<T>, g: Geometry) -> Result<(Vec<Array2<T>>, Vec<Array2<T>>)> {
        self.check(g, &x)?;
        let mut cols = Vec::with_capacity(self.slots.len());
        let mut acts: Vec<Array2<T>> = Vec::with_capacity(self.slots.len());
        for k in 0..self.slots.len() {
            let c = match acts.last() {
                None => im2col(x.view(), g),
                Some(a) => im2col(a.view(), g),
            };
            acts.push(self.conv(k, &c));
            cols.push(c);
        }
        Ok((cols, acts))
    }

    /// Parameter gradient from the output gradient.
    pub fn backward(&self, g: Geometry, cols: &[Array2<T>], acts: &[Array2<T>], d_out: ArrayView2<T>) -> Vec<T> {
        let mut grad = vec![T::zero(); self.params.len()];
        let mut delta = d_out.to_owned();
        for k in (0..self.slots.len()).rev() {
            let s = self.slots[k];
            let gw = cols[k].t().dot(&delta);
            for (dst, &src) in grad[s.weight..s.bias].iter_mut().zip(gw.iter()) {
                *dst = src;
            }
            let gb = delta.sum_axis(Axis(0));
            grad[s.bias..s.bias + s.fan_out].copy_from_slice(gb.as_slice().expect("contiguous"));
            if k > 0 {
                let d_cols = delta.dot(&self.weight(k).t());
                let mut d = col2im(d_cols.view(), g, s.fan_in / TAPS);
                Zip::from(&mut d).and(&acts[k - 1]).for_each(|d, &a| {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                });
                delta = d;
            }
        }
        grad
    }

    pub fn cast<U: Real>(&self) -> ConvNet<U> {
        ConvNet {
            channels: self.channels,
            depth: self.depth,
            slots: self.slots.clone(),
            params: self.params.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.params.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numerical("restoration network parameters are not finite".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry(n: usize, s: usize) -> Geometry {
        Geometry { n, h: s, w: s }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = geometry(2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::<f64>::from_shape_fn((g.pixels(), 3), |_| rng.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((g.pixels(), 27), |_| rng.gen_range(-1.0..1.0));
        let lhs = (&im2col(x.view(), g) * &y).sum();
        let rhs = (&x * &col2im(y.view(), g, 3)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn single_layer_matches_direct_convolution() {
        let net = ConvNet::<f64>::he_uniform(1, 2, 4).unwrap();
        // only check the first layer against a direct loop
        let g = geometry(1, 6);
        let x = Array2::from_shape_fn((36, 1), |(k, _)| (k as f64 * 0.37).sin());
        let first = net.conv(0, &im2col(x.view(), g));
        let w = net.weight(0);
        let b = net.bias(0);
        for i in 0..6 {
            for j in 0..6 {
                let mut z = b[0];
                for dy in 0..3 {
                    for dx in 0..3 {
                        let (si, sj) = (i as isize + dy as isize - 1, j as isize + dx as isize - 1);
                        if (0..6).contains(&si) && (0..6).contains(&sj) {
                            z += w[[dy * 3 + dx, 0]] * x[[(si * 6 + sj) as usize, 0]];
                        }
                    }
                }
                assert!((first[[i * 6 + j, 0]] - z.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn finite_difference_gradient() {
        let net = ConvNet::<f64>::he_uniform(3, 3, 7).unwrap();
        let g = geometry(2, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((g.pixels(), 1), |_| rng.gen_range(0.0..1.0));
        let target = Array2::from_shape_fn((g.pixels(), 1), |_| rng.gen_range(0.0..1.0));
        let loss = |n: &ConvNet<f64>| (&n.forward(x.view(), g).unwrap() - &target).mapv(|v| v * v).sum();
        let (cols, acts) = net.forward_trace(x.view(), g).unwrap();
        let d_out = (acts.last().unwrap() - &target) * 2.0;
        let grad = net.backward(g, &cols, &acts, d_out.view());
        let h = 1e-6;
        for i in (0..net.params.len()).step_by(3) {
            let mut p = net.clone();
            p.params[i] += h;
            let up = loss(&p);
            p.params[i] -= 2.0 * h;
            let fd = (up - loss(&p)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn rejects_images_below_receptive_field() {
        let net = ConvNet::<f64>::zeros(4, 6).unwrap();
        assert_eq!(net.receptive_field(), 13);
        let g = geometry(1, 12);
        assert!(net.forward(Array2::zeros((144, 1)).view(), g).is_err());
    }
}
