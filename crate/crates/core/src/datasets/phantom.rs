//! Procedural static slices and dynamic phantom families.
//!
//! All shapes are drawn with soft (tanh) edges about one pixel wide, so the
//! phantoms are band-limited enough for the discrete projector to be
//! accurate, and all values are clamped into `[0, 1]`.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::object::DynamicObject;
use super::warp::{warp_sequence, WarpRecipe};
use crate::error::{Error, Result};
use crate::tomo::ImageFrame;

const EDGE_WIDTH_PX: f64 = 0.8;

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    rot: f64,
}

impl Ellipse {
    fn circle(cx: f64, cy: f64, r: f64) -> Self {
        Self {
            cx,
            cy,
            a: r,
            b: r,
            rot: 0.0,
        }
    }

    /// Approximate signed distance in normalised units (negative inside).
    fn signed_distance(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.rot.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (c * dx + s * dy) / self.a;
        let v = (-s * dx + c * dy) / self.b;
        ((u * u + v * v).sqrt() - 1.0) * self.a.min(self.b)
    }
}

/// Normalised-coordinate canvas: `x, y` in `[-1, 1]`, `y` up.
struct Canvas {
    size: usize,
    edge: f64,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Self {
            size,
            edge: EDGE_WIDTH_PX * 2.0 / size as f64,
        }
    }

    fn coords(&self, row: usize, col: usize) -> (f64, f64) {
        let h = self.size as f64 / 2.0;
        let c = (self.size as f64 - 1.0) / 2.0;
        ((col as f64 - c) / h, (c - row as f64) / h)
    }

    fn inside(&self, e: &Ellipse, x: f64, y: f64) -> f64 {
        0.5 * (1.0 - (e.signed_distance(x, y) / self.edge).tanh())
    }

    fn render(&self, f: impl Fn(f64, f64) -> f64) -> Array2<f64> {
        Array2::from_shape_fn((self.size, self.size), |(r, c)| {
            let (x, y) = self.coords(r, c);
            f(x, y).clamp(0.0, 1.0)
        })
    }
}

/// A walnut-like static slice: dense shell, an air gap, and a lobed kernel
/// split by a septum and pierced by a few cavities. Different seeds give
/// different nuts.
pub fn walnut_slice(size: usize, seed: u64) -> ImageFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5741_4c4e_5554);
    let canvas = Canvas::new(size);
    let rot = rng.gen_range(-0.3..0.3);
    let a = rng.gen_range(0.72..0.8);
    let b = rng.gen_range(0.6..0.7);
    let thick = rng.gen_range(0.07..0.1);
    let outer = Ellipse { cx: 0.0, cy: 0.0, a, b, rot };
    let inner = Ellipse {
        a: a - thick,
        b: b - thick,
        ..outer
    };
    let shell_density = rng.gen_range(0.85..1.0);
    let kernel_density = rng.gen_range(0.4..0.55);

    let gap = rng.gen_range(0.05..0.09);
    let mut lobes = Vec::new();
    for side in [-1.0, 1.0] {
        for half in [-1.0, 1.0] {
            let la = rng.gen_range(0.22..0.3);
            let lb = rng.gen_range(0.2..0.27);
            let (s, c) = rot.sin_cos();
            let lx = side * rng.gen_range(0.2..0.27);
            let ly = half * rng.gen_range(0.14..0.22);
            lobes.push(Ellipse {
                cx: c * lx - s * ly,
                cy: s * lx + c * ly,
                a: la,
                b: lb,
                rot: rot + rng.gen_range(-0.5..0.5),
            });
        }
    }
    let mut cavities = Vec::new();
    for _ in 0..rng.gen_range(3..6) {
        let r = rng.gen_range(0.03..0.07);
        let ang = rng.gen_range(0.0..2.0 * PI);
        let rad = rng.gen_range(0.1..0.35);
        cavities.push(Ellipse::circle(rad * ang.cos(), rad * ang.sin(), r));
    }
    let (sin_r, cos_r) = rot.sin_cos();

    let pixels = canvas.render(|x, y| {
        let shell = canvas.inside(&outer, x, y) - canvas.inside(&inner, x, y);
        let lobe = lobes
            .iter()
            .map(|l| canvas.inside(l, x, y))
            .fold(0.0, f64::max);
        // septum: band along the nut's minor axis direction
        let along = cos_r * x + sin_r * y;
        let septum = 0.5 * (1.0 - ((along.abs() - gap / 2.0) / canvas.edge).tanh());
        let hole = cavities
            .iter()
            .map(|h| canvas.inside(h, x, y))
            .fold(0.0, f64::max);
        let kernel = lobe * (1.0 - 0.8 * septum) * (1.0 - hole) * canvas.inside(&inner, x, y);
        shell_density * shell + kernel_density * kernel
    });
    ImageFrame {
        pixels,
        pixel_spacing: 1.0,
    }
}

/// Two blobs that approach each other and merge (a topology change) on top
/// of a static disc.
fn merging_ellipses(size: usize, frames: usize, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x454c_4c49);
    let canvas = Canvas::new(size);
    let bg = Ellipse::circle(0.0, 0.0, rng.gen_range(0.65..0.75));
    let bg_density = rng.gen_range(0.25..0.35);
    let r0 = rng.gen_range(0.14..0.18);
    let y0 = rng.gen_range(-0.1..0.1);
    let mut out = Array3::zeros((frames, size, size));
    for t in 0..frames {
        let tau = t as f64 / frames.saturating_sub(1).max(1) as f64;
        let shift = ELLIPSE_TRAVEL * tau;
        let grow = 1.0 + ELLIPSE_GROWTH * tau;
        let e1 = Ellipse {
            cx: -0.45 + shift,
            cy: y0,
            a: r0 * grow,
            b: r0,
            rot: 0.0,
        };
        let e2 = Ellipse {
            cx: 0.45 - shift,
            ..e1
        };
        let img = canvas.render(|x, y| {
            let blobs = canvas.inside(&e1, x, y).max(canvas.inside(&e2, x, y));
            bg_density * canvas.inside(&bg, x, y) + (1.0 - bg_density) * blobs
        });
        out.index_axis_mut(Axis(0), t).assign(&img);
    }
    out
}

const ELLIPSE_TRAVEL: f64 = 0.35;
const ELLIPSE_GROWTH: f64 = 0.3;
const POROUS_SQUEEZE: f64 = 0.3;

/// A porous disc squeezed vertically toward its centre line.
fn porous_compression(size: usize, frames: usize, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x504f_524f);
    let canvas = Canvas::new(size);
    let body = Ellipse::circle(0.0, 0.0, 0.75);
    let mut pores = Vec::new();
    while pores.len() < 24 {
        let r = rng.gen_range(0.04..0.1);
        let x = rng.gen_range(-0.6..0.6);
        let y = rng.gen_range(-0.6..0.6);
        if (x * x + y * y as f64).sqrt() + r < 0.68 {
            pores.push(Ellipse::circle(x, y, r));
        }
    }
    let mut out = Array3::zeros((frames, size, size));
    for t in 0..frames {
        let tau = t as f64 / frames.saturating_sub(1).max(1) as f64;
        let squeeze = 1.0 - POROUS_SQUEEZE * tau;
        let img = canvas.render(|x, y| {
            let ys = y / squeeze;
            let hole = pores
                .iter()
                .map(|p| canvas.inside(p, x, ys))
                .fold(0.0, f64::max);
            0.9 * canvas.inside(&body, x, ys) * (1.0 - hole)
        });
        out.index_axis_mut(Axis(0), t).assign(&img);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomRecipe {
    /// Walnut-like slice under the sinusoidal row warp.
    WarpedWalnut,
    /// Two merging blobs over a static disc.
    Ellipses,
    /// Porous disc under vertical compression.
    Porous,
    /// A single walnut slice repeated over time.
    StaticWalnut,
}

impl PhantomRecipe {
    pub const ALL: [PhantomRecipe; 4] = [
        PhantomRecipe::WarpedWalnut,
        PhantomRecipe::Ellipses,
        PhantomRecipe::Porous,
        PhantomRecipe::StaticWalnut,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            PhantomRecipe::WarpedWalnut => "warped-walnut",
            PhantomRecipe::Ellipses => "ellipses",
            PhantomRecipe::Porous => "porous",
            PhantomRecipe::StaticWalnut => "static-walnut",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|r| r.id() == id)
            .ok_or_else(|| {
                let known: Vec<_> = Self::ALL.iter().map(|r| r.id()).collect();
                Error::Validation(format!("unknown phantom recipe `{id}` (known: {known:?})"))
            })
    }

    /// Declared motion bound: the largest displacement of any material point
    /// between consecutive frames (pixels), and an upper bound on the
    /// inverse Jacobian of the frame-to-frame map (captures local
    /// compression).
    pub fn declared_motion(&self, size: usize, frames: usize, opts: &PhantomOptions) -> (f64, f64) {
        let steps = frames.saturating_sub(1).max(1) as f64;
        let half = size as f64 / 2.0;
        match self {
            PhantomRecipe::StaticWalnut => (0.0, 1.0),
            PhantomRecipe::WarpedWalnut => {
                let c_max = opts.c_max.unwrap_or_else(|| WarpRecipe::default_c_max(size));
                let band = size as f64 / opts.grid_rows as f64;
                let slope = (0..opts.grid_rows)
                    .map(|n| {
                        let d = |k: usize| (3.0 * PI * k as f64 / opts.grid_rows as f64).sin();
                        (d(n + 1) - d(n)).abs() * c_max / band
                    })
                    .fold(0.0, f64::max);
                (c_max / steps, 1.0 / (1.0 - slope.min(0.9)))
            }
            PhantomRecipe::Ellipses => {
                let v = (ELLIPSE_TRAVEL + ELLIPSE_GROWTH * 0.18) * half / steps;
                (v, 1.0 + ELLIPSE_GROWTH)
            }
            PhantomRecipe::Porous => {
                let v = POROUS_SQUEEZE * 0.75 * half / steps;
                (v, 1.0 / (1.0 - POROUS_SQUEEZE))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhantomOptions {
    /// Warp amplitude ceiling in pixels; defaults to `J / 16`.
    pub c_max: Option<f64>,
    /// Warp grid rows `N`.
    pub grid_rows: usize,
}

impl Default for PhantomOptions {
    fn default() -> Self {
        Self {
            c_max: None,
            grid_rows: 8,
        }
    }
}

pub fn procedural_phantom(size: usize, frames: usize, recipe_id: &str, seed: u64) -> Result<DynamicObject> {
    procedural_phantom_with(size, frames, PhantomRecipe::from_id(recipe_id)?, seed, &PhantomOptions::default())
}

pub fn procedural_phantom_with(
    size: usize,
    frames: usize,
    recipe: PhantomRecipe,
    seed: u64,
    opts: &PhantomOptions,
) -> Result<DynamicObject> {
    if size < 2 || frames < 2 {
        return Err(Error::Validation(format!(
            "phantom needs J, P >= 2 (got J={size}, P={frames})"
        )));
    }
    let provenance = format!("phantom:{}:seed={seed}", recipe.id());
    let mut obj = match recipe {
        PhantomRecipe::WarpedWalnut => {
            let c_max = opts.c_max.unwrap_or_else(|| WarpRecipe::default_c_max(size));
            let recipe = WarpRecipe::linear(walnut_slice(size, seed), opts.grid_rows, frames, c_max);
            warp_sequence(&recipe)?
        }
        PhantomRecipe::StaticWalnut => DynamicObject::repeat_static(&walnut_slice(size, seed), frames, "")?,
        PhantomRecipe::Ellipses => DynamicObject::new(merging_ellipses(size, frames, seed), "")?,
        PhantomRecipe::Porous => DynamicObject::new(porous_compression(size, frames, seed), "")?,
    };
    obj.frames.mapv_inplace(|v| v.clamp(0.0, 1.0));
    obj.provenance = provenance;
    Ok(obj)
}

/// Static training slices for the restoration prior: walnut slices drawn from
/// seeds disjoint from `exclude_seed`, with random flips and transposes.
pub fn walnut_training_slices(size: usize, count: usize, base_seed: u64, exclude_seed: Option<u64>) -> Vec<ImageFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed ^ 0x5452_4149);
    let mut out = Vec::with_capacity(count);
    let mut seed = base_seed.wrapping_mul(1_000_003).wrapping_add(17);
    while out.len() < count {
        seed = seed.wrapping_add(1);
        if Some(seed) == exclude_seed {
            continue;
        }
        let mut f = walnut_slice(size, seed);
        if rng.gen::<bool>() {
            f.pixels.invert_axis(Axis(0));
        }
        if rng.gen::<bool>() {
            f.pixels.invert_axis(Axis(1));
        }
        if rng.gen::<bool>() {
            f.pixels = f.pixels.t().to_owned();
        }
        f.pixels = f.pixels.as_standard_layout().to_owned();
        out.push(f);
    }
    out
}

/// Anisotropic total variation in pixel units.
pub fn total_variation(img: ndarray::ArrayView2<f64>) -> f64 {
    let (r, c) = img.dim();
    let mut tv = 0.0;
    for i in 0..r {
        for j in 0..c {
            if i + 1 < r {
                tv += (img[[i + 1, j]] - img[[i, j]]).abs();
            }
            if j + 1 < c {
                tv += (img[[i, j + 1]] - img[[i, j]]).abs();
            }
        }
    }
    tv
}
