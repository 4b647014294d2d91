//! The three ADMM updates: NF parameters, auxiliary frames, scaled dual.

use ndarray::{Array2, Array3, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::SolverConfig;
use super::solver::AdmmState;
use super::terms::InnerProblem;
use crate::acquisition::SinogramSet;
use crate::error::{ensure, Error, Result};
use crate::optim::cosine_lr;
use crate::real::Real;
use crate::restoration::Restorer;

/// Random stream for outer iteration `iteration` (1-based). Each iteration
/// gets its own stream so a resumed run draws the same batches.
pub(crate) fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

/// Runs `inner_steps` Adam updates on the minibatch NF subproblem of the
/// iteration following `state.iteration`.
pub fn nf_step<T: Real>(state: &mut AdmmState<T>, sinos: &SinogramSet, cfg: &SolverConfig) -> Result<()> {
    let iteration = state.iteration + 1;
    let p = state.fbar.len_of(Axis(0));
    let b = cfg.batch_size(p)?;
    let prob = InnerProblem::new(sinos, &state.fbar, &state.dual, cfg.xi, cfg.coupling())?;
    let mut rng = iteration_rng(cfg.seed, iteration);
    for k in 0..cfg.inner_steps {
        let batch: Vec<usize> = (0..b).map(|_| rng.gen_range(0..p)).collect();
        let (terms, grad) = prob.loss_and_grad(&state.nf, &batch).map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!(
                "inner step {k} of iteration {iteration} (batch {batch:?}): {m}"
            )),
            e => e,
        })?;
        if !terms.total().is_finite() {
            return Err(Error::Numerical(format!(
                "inner loss not finite at step {k} of iteration {iteration}: {terms:?}, batch {batch:?}"
            )));
        }
        let global = (iteration - 1) * cfg.inner_steps + k;
        let lr = cosine_lr(cfg.lr, global, cfg.total_inner_steps(), cfg.lr_floor);
        state.adam.step(state.nf.params_mut(), &grad, lr).map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("step {k} of iteration {iteration}: {m}")),
            e => e,
        })?;
    }
    Ok(())
}

/// `lambda/(lambda+beta) D(fbar_prev) + beta/(lambda+beta) (ftilde + dual)`
/// given the restored previous iterate.
pub fn fixed_point_combination(
    restored_prev: &Array3<f64>,
    ftilde: &Array3<f64>,
    dual: &Array3<f64>,
    lambda: f64,
    beta: f64,
) -> Result<Array3<f64>> {
    ensure!(lambda + beta > 0.0, "lambda + beta must be positive");
    ensure!(
        restored_prev.dim() == ftilde.dim() && dual.dim() == ftilde.dim(),
        "fixed-point inputs have mismatched shapes"
    );
    let a = lambda / (lambda + beta);
    let c = beta / (lambda + beta);
    let mut out = Array3::zeros(ftilde.dim());
    Zip::from(&mut out)
        .and(restored_prev)
        .and(ftilde)
        .and(dual)
        .for_each(|o, &d, &f, &u| *o = a * d + c * (f + u));
    Ok(out)
}

/// One restorer application per frame of the previous auxiliary iterate.
/// With `lambda = 0` the restorer is skipped and the result is `ftilde + dual`.
pub fn fbar_step_fixed_point(
    fbar_prev: &Array3<f64>,
    ftilde: &Array3<f64>,
    dual: &Array3<f64>,
    restorer: &dyn Restorer,
    lambda: f64,
    beta: f64,
) -> Result<Array3<f64>> {
    if lambda == 0.0 {
        ensure!(dual.dim() == ftilde.dim(), "dual shape does not match frames");
        return Ok(ftilde + dual);
    }
    ensure!(fbar_prev.dim() == ftilde.dim(), "previous iterate has the wrong shape");
    fixed_point_combination(&restorer.restore_frames(fbar_prev)?, ftilde, dual, lambda, beta)
}

/// Termination controls for [`fbar_step_exact`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactOptions {
    /// Stop when the gradient norm falls below `tol * max(1, ||c||)`.
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_steps: 100,
        }
    }
}

/// Consecutive objective increases tolerated before declaring divergence.
const DIVERGENCE_PATIENCE: usize = 10;

/// Gradient descent on `lambda rho(f) + beta/2 ||c - f||^2` per frame with
/// `c = ftilde + dual`, starting from `c`. The prior gradient is
/// `2 (f - D(f))`, exact for a symmetric linear `D`; the step is
/// `1 / (beta + 4 lambda)`.
pub fn fbar_step_exact(
    ftilde: &Array3<f64>,
    dual: &Array3<f64>,
    restorer: &dyn Restorer,
    lambda: f64,
    beta: f64,
    opts: ExactOptions,
) -> Result<Array3<f64>> {
    ensure!(beta > 0.0 && lambda >= 0.0, "exact update needs beta > 0 and lambda >= 0");
    ensure!(dual.dim() == ftilde.dim(), "dual shape does not match frames");
    let target = ftilde + dual;
    if lambda == 0.0 {
        return Ok(target);
    }
    let mut out = target.clone();
    for (t, mut dst) in out.outer_iter_mut().enumerate() {
        let f = exact_frame(target.index_axis(Axis(0), t), restorer, lambda, beta, opts)
            .map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("frame {t}: {m}")),
                e => e,
            })?;
        dst.assign(&f);
    }
    Ok(out)
}

fn exact_frame(c: ArrayView2<f64>, restorer: &dyn Restorer, lambda: f64, beta: f64, opts: ExactOptions) -> Result<Array2<f64>> {
    let step = 1.0 / (beta + 4.0 * lambda);
    let threshold = opts.tol * c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let mut f = c.to_owned();
    let mut prev = f64::INFINITY;
    let mut rising = 0;
    for _ in 0..opts.max_steps {
        let d = restorer.restore_frame(f.view())?;
        let mut value = 0.0;
        let mut grad = Array2::zeros(f.dim());
        Zip::from(&mut grad).and(&f).and(&d).and(&c).for_each(|g, &f, &d, &c| {
            value += lambda * f * (f - d) + 0.5 * beta * (c - f) * (c - f);
            *g = 2.0 * lambda * (f - d) + beta * (f - c);
        });
        if !value.is_finite() {
            return Err(Error::Numerical("exact auxiliary update produced a non-finite objective".into()));
        }
        rising = if value > prev { rising + 1 } else { 0 };
        if rising >= DIVERGENCE_PATIENCE {
            return Err(Error::Numerical(format!(
                "exact auxiliary update diverged: objective rose {DIVERGENCE_PATIENCE} steps in a row"
            )));
        }
        prev = value;
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < threshold {
            break;
        }
        f.scaled_add(-step, &grad);
    }
    Ok(f)
}

/// `dual += ftilde - fbar`.
pub fn dual_step(dual: &mut Array3<f64>, ftilde: &Array3<f64>, fbar: &Array3<f64>) -> Result<()> {
    ensure!(
        dual.dim() == ftilde.dim() && fbar.dim() == ftilde.dim(),
        "dual update inputs have mismatched shapes"
    );
    Zip::from(dual).and(ftilde).and(fbar).for_each(|u, &f, &b| *u += f - b);
    Ok(())
}
