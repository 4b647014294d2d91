//! Fourier positional encoding of space-time coordinates.

use std::f64::consts::FRAC_PI_2;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::real::Real;

/// `L` frequencies `l * pi / 2`, `l = 1..=L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosEncConfig {
    pub frequencies: usize,
}

impl PosEncConfig {
    pub fn new(frequencies: usize) -> Result<Self> {
        ensure!(frequencies >= 1, "positional encoding needs at least one frequency");
        Ok(Self { frequencies })
    }

    #[inline]
    pub fn omega(l: usize) -> f64 {
        l as f64 * FRAC_PI_2
    }

    /// Length of the flattened encoding, `6 L`.
    pub fn feature_dim(&self) -> usize {
        6 * self.frequencies
    }
}

fn check_coords(nu: [f64; 3]) -> Result<()> {
    ensure!(
        nu.iter().all(|v| (0.0..=1.0).contains(v)),
        "coordinates must be normalised into [0, 1], got {nu:?}"
    );
    Ok(())
}

/// The `L x 6` encoding: row `l` holds the three sines then the three
/// cosines at frequency `(l + 1) pi / 2`.
pub fn posenc(nu: [f64; 3], cfg: &PosEncConfig) -> Result<Array2<f64>> {
    check_coords(nu)?;
    let mut out = Array2::zeros((cfg.frequencies, 6));
    for l in 0..cfg.frequencies {
        let w = PosEncConfig::omega(l + 1);
        for d in 0..3 {
            let (s, c) = (w * nu[d]).sin_cos();
            out[[l, d]] = s;
            out[[l, 3 + d]] = c;
        }
    }
    Ok(out)
}

/// Flattened encodings of a batch of points, one row of `6 L` features each.
pub fn encode_points<T: Real>(coords: &[[f64; 3]], cfg: &PosEncConfig) -> Result<Array2<T>> {
    let mut out = Array2::zeros((coords.len(), cfg.feature_dim()));
    for (mut row, &nu) in out.rows_mut().into_iter().zip(coords) {
        let enc = posenc(nu, cfg)?;
        for (dst, &src) in row.iter_mut().zip(enc.iter()) {
            *dst = T::of(src);
        }
    }
    Ok(out)
}

/// Pixel-centre coordinate of index `i` on a `size`-point axis.
#[inline]
pub fn grid_coordinate(i: usize, size: usize) -> f64 {
    (i as f64 + 0.5) / size as f64
}

/// Normalised time `t / (P - 1)`; a single frame sits at 0.
#[inline]
pub fn time_coordinate(t: usize, frames: usize) -> f64 {
    if frames <= 1 {
        0.0
    } else {
        t as f64 / (frames - 1) as f64
    }
}

/// The coordinate triple of pixel `(row, col)` in frame `t`.
pub fn grid_point(row: usize, col: usize, t: usize, size: usize, frames: usize) -> [f64; 3] {
    [
        grid_coordinate(row, size),
        grid_coordinate(col, size),
        time_coordinate(t, frames),
    ]
}

/// Encodings of every pixel of the listed frames, frame-major then row-major.
/// Values are identical to [`encode_points`] on the same coordinates.
pub fn encode_grid<T: Real>(size: usize, frames: usize, which: &[usize], cfg: &PosEncConfig) -> Result<Array2<T>> {
    ensure!(size >= 1 && frames >= 1, "grid must be non-empty");
    ensure!(which.iter().all(|&t| t < frames), "frame index out of range");
    let l_count = cfg.frequencies;
    // sin/cos tables per axis value and frequency
    let table = |values: &[f64]| -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(values.len() * l_count);
        for &v in values {
            for l in 0..l_count {
                out.push((PosEncConfig::omega(l + 1) * v).sin_cos());
            }
        }
        out
    };
    let axis: Vec<f64> = (0..size).map(|i| grid_coordinate(i, size)).collect();
    let space = table(&axis);
    let times: Vec<f64> = which.iter().map(|&t| time_coordinate(t, frames)).collect();
    let time = table(&times);

    let dim = cfg.feature_dim();
    let mut out = Array2::zeros((which.len() * size * size, dim));
    let data = out.as_slice_mut().expect("fresh array is contiguous");
    let mut k = 0;
    for ti in 0..which.len() {
        for r in 0..size {
            for c in 0..size {
                let row = &mut data[k * dim..(k + 1) * dim];
                for l in 0..l_count {
                    let (sr, cr) = space[r * l_count + l];
                    let (sc, cc) = space[c * l_count + l];
                    let (st, ct) = time[ti * l_count + l];
                    row[6 * l..6 * l + 6].copy_from_slice(&[
                        T::of(sr),
                        T::of(sc),
                        T::of(st),
                        T::of(cr),
                        T::of(cc),
                        T::of(ct),
                    ]);
                }
                k += 1;
            }
        }
    }
    Ok(out)
}
