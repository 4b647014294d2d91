//! Objective terms of the dynamic reconstruction problem.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayViewMut2, Axis, Zip};

use crate::acquisition::SinogramSet;
use crate::datasets::DynamicObject;
use crate::error::{ensure, Result};
use crate::nf::NeuralField;
use crate::real::Real;
use crate::restoration::Restorer;
use crate::tomo::{backproject_view_into, project_view, ImageFrame, Projection};

/// `g - R f` for one frame.
pub(crate) fn residual(frame: ArrayView2<f64>, proj: &Projection) -> ndarray::Array1<f64> {
    let s = proj.bin_spacing;
    &proj.bins - &project_view(frame, proj.angle, s)
}

/// `||g - R f||^2` for one frame, adding `scale * grad` into `grad` when given.
pub(crate) fn frame_fidelity(frame: ArrayView2<f64>, proj: &Projection, grad: Option<(ArrayViewMut2<f64>, f64)>) -> f64 {
    let r = residual(frame, proj);
    if let Some((g, scale)) = grad {
        backproject_view_into(r.view(), proj.angle, -2.0 * scale * proj.bin_spacing, g);
    }
    r.dot(&r)
}

fn check_frames(sinos: &SinogramSet, size: usize, frames: usize) -> Result<()> {
    ensure!(
        sinos.len() == frames,
        "{} projections for {frames} frames",
        sinos.len()
    );
    ensure!(
        sinos.detector_count() == size,
        "detector has {} bins but frames are {size} pixels wide",
        sinos.detector_count()
    );
    Ok(())
}

/// Minibatch estimate of the data term: the sum over `batch` of squared
/// projection residuals, scaled by `P / |batch|`.
pub fn fidelity_loss<T: Real>(nf: &NeuralField<T>, sinos: &SinogramSet, batch: &[usize]) -> Result<f64> {
    ensure!(!batch.is_empty(), "fidelity batch is empty");
    let (p, j) = (sinos.len(), sinos.detector_count());
    ensure!(batch.iter().all(|&t| t < p), "batch index outside [0, {p})");
    let rendered = nf.render_frames(j, p, batch)?;
    fidelity_of_frames(&rendered, sinos, batch)
}

/// The same estimate for explicitly given frames, `frames[k]` at time
/// `batch[k]`.
pub fn fidelity_of_frames(frames: &Array3<f64>, sinos: &SinogramSet, batch: &[usize]) -> Result<f64> {
    ensure!(!batch.is_empty(), "fidelity batch is empty");
    ensure!(frames.len_of(Axis(0)) == batch.len(), "one frame per batch entry expected");
    let p = sinos.len();
    let sum: f64 = batch
        .iter()
        .zip(frames.outer_iter())
        .map(|(&t, f)| frame_fidelity(f, &sinos.projections[t], None))
        .sum();
    Ok(sum * p as f64 / batch.len() as f64)
}

/// Sum over interior frames of `||f_{t-1} - 2 f_t + f_{t+1}||^2`.
pub fn temporal_penalty(obj: &DynamicObject) -> f64 {
    temporal_penalty_frames(&obj.frames)
}

pub fn temporal_penalty_frames(frames: &Array3<f64>) -> f64 {
    let p = frames.len_of(Axis(0));
    if p < 3 {
        return 0.0;
    }
    let d = &frames.slice(s![..p - 2, .., ..]) - &(&frames.slice(s![1..p - 1, .., ..]) * 2.0)
        + frames.slice(s![2.., .., ..]);
    d.iter().map(|v| v * v).sum()
}

/// Gradient of [`temporal_penalty_frames`].
pub fn temporal_gradient(frames: &Array3<f64>) -> Array3<f64> {
    let p = frames.len_of(Axis(0));
    let mut g = Array3::zeros(frames.dim());
    for t in 1..p.saturating_sub(1) {
        let d = second_difference(frames, t - 1, t, t + 1);
        g.index_axis_mut(Axis(0), t - 1).scaled_add(2.0, &d);
        g.index_axis_mut(Axis(0), t).scaled_add(-4.0, &d);
        g.index_axis_mut(Axis(0), t + 1).scaled_add(2.0, &d);
    }
    g
}

fn second_difference(frames: &Array3<f64>, a: usize, b: usize, c: usize) -> Array2<f64> {
    let mut d = frames.index_axis(Axis(0), a).to_owned();
    d.scaled_add(-2.0, &frames.index_axis(Axis(0), b));
    d += &frames.index_axis(Axis(0), c);
    d
}

/// `f . (f - D(f))` with the frame vectorised.
pub fn red_penalty(frame: &ImageFrame, restorer: &dyn Restorer) -> Result<f64> {
    let r = red_gradient(frame, restorer)?;
    Ok(Zip::from(&frame.pixels).and(&r.pixels).fold(0.0, |acc, a, b| acc + a * b))
}

/// `f - D(f)`, the gradient of the prior under the RED gradient rule.
pub fn red_gradient(frame: &ImageFrame, restorer: &dyn Restorer) -> Result<ImageFrame> {
    frame.validate()?;
    let restored = restorer.restore_frame(frame.pixels.view())?;
    ensure!(restored.dim() == frame.pixels.dim(), "restorer changed the frame shape");
    Ok(ImageFrame {
        pixels: &frame.pixels - &restored,
        pixel_spacing: frame.pixel_spacing,
    })
}

/// Sum over frames of `f_t . (f_t - D_t)`, given precomputed restorations.
pub(crate) fn red_penalty_frames(frames: &Array3<f64>, restored: &Array3<f64>) -> f64 {
    Zip::from(frames).and(restored).fold(0.0, |acc, &f, &d| acc + f * (f - d))
}

/// Data of the NF subproblem of one outer iteration.
#[derive(Debug, Clone, Copy)]
pub struct InnerProblem<'a> {
    pub sinos: &'a SinogramSet,
    pub fbar: &'a Array3<f64>,
    pub dual: &'a Array3<f64>,
    pub xi: f64,
    /// Augmented penalty weight (`beta`, or zero without the prior).
    pub coupling: f64,
}

/// Value of each term of the inner objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct InnerTerms {
    pub fidelity: f64,
    pub augmented: f64,
    pub temporal: f64,
}

impl InnerTerms {
    pub fn total(&self) -> f64 {
        self.fidelity + self.augmented + self.temporal
    }
}

impl<'a> InnerProblem<'a> {
    pub fn new(sinos: &'a SinogramSet, fbar: &'a Array3<f64>, dual: &'a Array3<f64>, xi: f64, coupling: f64) -> Result<Self> {
        let (p, j, _) = fbar.dim();
        check_frames(sinos, j, p)?;
        ensure!(dual.dim() == fbar.dim(), "dual shape {:?} != {:?}", dual.dim(), fbar.dim());
        Ok(Self {
            sinos,
            fbar,
            dual,
            xi,
            coupling,
        })
    }

    pub fn frames(&self) -> usize {
        self.fbar.len_of(Axis(0))
    }

    pub fn size(&self) -> usize {
        self.fbar.len_of(Axis(1))
    }

    /// Sorted distinct frames touched by a batch: the sampled frames and the
    /// neighbours of every sampled interior frame.
    pub fn frames_needed(&self, batch: &[usize]) -> Vec<usize> {
        let p = self.frames();
        let mut v = Vec::with_capacity(3 * batch.len());
        for &t in batch {
            v.push(t);
            if self.xi > 0.0 && t >= 1 && t + 1 < p {
                v.push(t - 1);
                v.push(t + 1);
            }
        }
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Full objective on a complete `P x J x J` stack:
    /// `sum_t ||g_t - R f_t||^2 + c/2 ||f + u - fbar||^2 + xi rho_tau(f)`.
    pub fn full_terms(&self, frames: &Array3<f64>) -> Result<InnerTerms> {
        ensure!(frames.dim() == self.fbar.dim(), "frame stack has the wrong shape");
        let fidelity = frames
            .outer_iter()
            .zip(&self.sinos.projections)
            .map(|(f, proj)| frame_fidelity(f, proj, None))
            .sum();
        let augmented = if self.coupling > 0.0 {
            0.5 * self.coupling * Zip::from(frames).and(self.dual).and(self.fbar).fold(0.0, |acc, &f, &u, &b| {
                let d = f + u - b;
                acc + d * d
            })
        } else {
            0.0
        };
        Ok(InnerTerms {
            fidelity,
            augmented,
            temporal: self.xi * temporal_penalty_frames(frames),
        })
    }

    /// Unbiased minibatch estimate of [`Self::full_terms`] and its gradient
    /// with respect to the rendered frames. `rendered[k]` is frame
    /// `needed[k]`, with `needed` as returned by [`Self::frames_needed`].
    pub fn batch_terms(&self, batch: &[usize], needed: &[usize], rendered: &Array3<f64>) -> Result<(InnerTerms, Array3<f64>)> {
        ensure!(!batch.is_empty(), "inner batch is empty");
        let (p, j) = (self.frames(), self.size());
        ensure!(rendered.dim() == (needed.len(), j, j), "rendered frames do not match the needed set");
        let slot = |t: usize| needed.binary_search(&t).expect("frame was rendered");
        let scale = p as f64 / batch.len() as f64;
        let mut grad = Array3::zeros(rendered.dim());
        let mut terms = InnerTerms::default();
        for &t in batch {
            ensure!(t < p, "batch index {t} outside [0, {p})");
            let k = slot(t);
            let f = rendered.index_axis(Axis(0), k);
            terms.fidelity +=
                scale * frame_fidelity(f, &self.sinos.projections[t], Some((grad.index_axis_mut(Axis(0), k), scale)));
            if self.coupling > 0.0 {
                let mut g = grad.index_axis_mut(Axis(0), k);
                let mut acc = 0.0;
                Zip::from(&mut g)
                    .and(&f)
                    .and(self.dual.index_axis(Axis(0), t))
                    .and(self.fbar.index_axis(Axis(0), t))
                    .for_each(|g, &f, &u, &b| {
                        let d = f + u - b;
                        acc += d * d;
                        *g += scale * self.coupling * d;
                    });
                terms.augmented += 0.5 * scale * self.coupling * acc;
            }
            if self.xi > 0.0 && t >= 1 && t + 1 < p {
                let (a, b, c) = (slot(t - 1), k, slot(t + 1));
                let d = second_difference(rendered, a, b, c);
                terms.temporal += scale * self.xi * d.iter().map(|v| v * v).sum::<f64>();
                let w = 2.0 * scale * self.xi;
                grad.index_axis_mut(Axis(0), a).scaled_add(w, &d);
                grad.index_axis_mut(Axis(0), b).scaled_add(-2.0 * w, &d);
                grad.index_axis_mut(Axis(0), c).scaled_add(w, &d);
            }
        }
        Ok((terms, grad))
    }

    /// Minibatch inner loss of an NF and its parameter gradient.
    pub fn loss_and_grad<T: Real>(&self, nf: &NeuralField<T>, batch: &[usize]) -> Result<(InnerTerms, Vec<T>)> {
        let needed = self.frames_needed(batch);
        let mut terms = InnerTerms::default();
        let (_, grad) = nf.value_and_grad_frames(self.size(), self.frames(), &needed, |rendered| {
            let (t, g) = self.batch_terms(batch, &needed, rendered)?;
            terms = t;
            Ok((t.total(), g))
        })?;
        Ok((terms, grad))
    }
}
