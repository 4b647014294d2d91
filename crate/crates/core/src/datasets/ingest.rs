//! Loading user-supplied static slices and volumes.

use std::path::Path;

use ndarray::{Array2, ArrayView2};

use super::container::Container;
use crate::error::{ensure, Error, Result};
use crate::tomo::ImageFrame;

/// Area-overlap weights mapping `n_in` cells onto `n_out` cells; each output
/// is the average of the input it covers.
fn overlap_weights(n_in: usize, n_out: usize) -> Array2<f64> {
    let scale = n_in as f64 / n_out as f64;
    let mut w = Array2::zeros((n_out, n_in));
    for k in 0..n_out {
        let lo = k as f64 * scale;
        let hi = lo + scale;
        let first = lo.floor() as usize;
        let last = (hi.ceil() as usize).min(n_in);
        for i in first..last {
            let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
            w[[k, i]] = overlap / scale;
        }
    }
    w
}

/// Resamples a square frame to `size x size` by exact area overlap. Pixel
/// spacing grows with the downsampling factor so mass is preserved.
pub fn resample_frame(frame: &ImageFrame, size: usize) -> Result<ImageFrame> {
    ensure!(size >= 2, "target size must be at least 2");
    let n = frame.size();
    if n == size {
        return Ok(frame.clone());
    }
    let w = overlap_weights(n, size);
    let pixels = w.dot(&frame.pixels).dot(&w.t());
    Ok(ImageFrame {
        pixels,
        pixel_spacing: frame.pixel_spacing * n as f64 / size as f64,
    })
}

/// Zero-pads a rectangular slice to a centred square.
fn pad_square(slice: ArrayView2<f64>) -> Array2<f64> {
    let (h, w) = slice.dim();
    let n = h.max(w);
    let mut out = Array2::zeros((n, n));
    let (r0, c0) = ((n - h) / 2, (n - w) / 2);
    out.slice_mut(ndarray::s![r0..r0 + h, c0..c0 + w]).assign(&slice);
    out
}

fn slices_from_container(c: &Container) -> Result<Vec<Array2<f64>>> {
    let a = c.get("volume").or_else(|_| c.get("frames"))?;
    let data = a.data.to_f64();
    match a.shape.as_slice() {
        &[h, w] => Ok(vec![Array2::from_shape_vec((h, w), data).expect("shape checked by container")]),
        &[s, h, w] => Ok((0..s)
            .map(|k| {
                Array2::from_shape_vec((h, w), data[k * h * w..(k + 1) * h * w].to_vec())
                    .expect("shape checked by container")
            })
            .collect()),
        other => Err(Error::Validation(format!(
            "volume must be rank 2 or 3, got shape {other:?}"
        ))),
    }
}

fn slices_from_images(dir: &Path) -> Result<Vec<Array2<f64>>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                Some("png")
            )
        })
        .collect();
    paths.sort();
    ensure!(!paths.is_empty(), "no PNG slices found in {}", dir.display());
    paths
        .iter()
        .map(|p| {
            let img = image::open(p)?.into_luma16();
            let (w, h) = img.dimensions();
            Ok(Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
                img.get_pixel(c as u32, r as u32).0[0] as f64 / u16::MAX as f64
            }))
        })
        .collect()
}

/// Reads a stack of static slices and resamples each to `size x size`.
///
/// `path` is either a container file holding a rank-2 or rank-3 array named
/// `volume` (or `frames`), or a directory of grayscale PNG slices read in
/// lexicographic order. Non-square slices are zero-padded to a square first.
pub fn ingest_volume(path: impl AsRef<Path>, size: usize) -> Result<Vec<ImageFrame>> {
    let path = path.as_ref();
    let slices = if path.is_dir() {
        slices_from_images(path)?
    } else {
        slices_from_container(&Container::load(path)?)?
    };
    slices
        .into_iter()
        .map(|s| {
            let frame = ImageFrame::new(pad_square(s.view()))?;
            resample_frame(&frame, size)
        })
        .collect()
}
