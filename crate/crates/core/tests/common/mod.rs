#![allow(dead_code)]

use dynct::tomo::ImageFrame;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Disk of radius `r` (pixels) centred on the rotation axis; pixel values are
/// the covered area fraction estimated on an `s x s` sub-grid.
pub fn area_disk(size: usize, r: f64, s: usize) -> ImageFrame {
    let c = size as f64 / 2.0;
    let px = Array2::from_shape_fn((size, size), |(i, j)| {
        let mut hit = 0;
        for a in 0..s {
            for b in 0..s {
                let y = i as f64 + (a as f64 + 0.5) / s as f64 - c;
                let x = j as f64 + (b as f64 + 0.5) / s as f64 - c;
                if x * x + y * y <= r * r {
                    hit += 1;
                }
            }
        }
        hit as f64 / (s * s) as f64
    });
    ImageFrame::new(px).unwrap()
}

/// Disk with a tanh edge of the given width.
pub fn smooth_disk(size: usize, r: f64, width: f64) -> ImageFrame {
    let c = (size as f64 - 1.0) / 2.0;
    let px = Array2::from_shape_fn((size, size), |(i, j)| {
        let d = ((i as f64 - c).powi(2) + (j as f64 - c).powi(2)).sqrt();
        0.5 * (1.0 - ((d - r) / width).tanh())
    });
    ImageFrame::new(px).unwrap()
}

/// Random values inside the inscribed disc, zero outside.
pub fn random_fov_frame(size: usize, rng: &mut impl Rng) -> ImageFrame {
    let c = (size as f64 - 1.0) / 2.0;
    let lim = size as f64 / 2.0 - 1.5;
    let px = Array2::from_shape_fn((size, size), |(i, j)| {
        let d = ((i as f64 - c).powi(2) + (j as f64 - c).powi(2)).sqrt();
        if d <= lim {
            rng.gen_range(0.0..1.0)
        } else {
            0.0
        }
    });
    ImageFrame::new(px).unwrap()
}

pub fn random_stack(p: usize, j: usize, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn((p, j, j), |_| rng.gen_range(-1.0..1.0))
}

pub fn max_abs_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
