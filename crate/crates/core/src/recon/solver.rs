//! Outer ADMM loop, history, and checkpoints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use super::config::{FbarUpdate, SolverConfig};
use super::steps::{dual_step, fbar_step_exact, fixed_point_combination, nf_step, ExactOptions};
use super::terms::{red_penalty_frames, temporal_penalty_frames, InnerProblem};
use crate::acquisition::SinogramSet;
use crate::datasets::{Container, DynamicObject};
use crate::embedding::{fit_nf_embedding, EmbedConfig};
use crate::error::{ensure, Error, Result};
use crate::metrics::evaluate;
use crate::nf::NeuralField;
use crate::optim::{Adam, AdamConfig};
use crate::real::Real;
use crate::restoration::{IdentityRestorer, Restorer};
use crate::tomo::fbp_sliding_window;

/// One completed outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    /// Full data term `sum_t ||g_t - R f_t||^2` of the rendered NF.
    pub fidelity: f64,
    pub rho_tau: f64,
    /// Prior value of the auxiliary iterate entering the iteration (the one
    /// the restorer was applied to).
    pub rho_red: f64,
    /// `||ftilde - fbar||_F` after the auxiliary update.
    pub primal_residual: f64,
    /// `primal_residual / ||ftilde||_F`.
    pub primal_residual_rel: f64,
    /// `fidelity + lambda rho_red + xi rho_tau`.
    pub objective: f64,
    /// Scaled-form augmented Lagrangian including the `-beta/2 ||u||^2` term.
    pub lagrangian: f64,
    pub psnr: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState<T: Real> {
    pub nf: NeuralField<T>,
    pub adam: Adam<T>,
    pub fbar: Array3<f64>,
    /// Scaled dual variable.
    pub dual: Array3<f64>,
    /// Completed outer iterations.
    pub iteration: usize,
    pub history: Vec<HistoryRow>,
}

const CHECKPOINT_KIND: &str = "admm_checkpoint";

impl<T: Real> AdmmState<T> {
    /// Fresh NF from `cfg.seed` (optionally fitted to the sliding-window
    /// FBP), `fbar` its render and a zero dual.
    pub fn initial(sinos: &SinogramSet, cfg: &SolverConfig) -> Result<Self> {
        let (p, j) = (sinos.len(), sinos.detector_count());
        ensure!(p >= 1 && j >= 1, "no measurements to reconstruct from");
        let nf = if cfg.warm_start_steps > 0 {
            let fbp = fbp_sliding_window(sinos)?;
            let embed = EmbedConfig {
                arch: cfg.arch,
                iters: cfg.warm_start_steps,
                seed: cfg.seed,
                eval_every: 0,
                ..Default::default()
            };
            let (nf, fit) = fit_nf_embedding::<T>(&fbp, &embed)?;
            log::info!("warm start: NF fitted to FBP at {:.2} dB in {:.1}s", fit.psnr_db, fit.seconds);
            nf
        } else {
            NeuralField::<T>::new(cfg.arch, cfg.seed)?
        };
        let fbar = nf.render_grid(j, p)?.frames;
        Ok(Self {
            adam: Adam::new(nf.param_count(), AdamConfig::default()),
            nf,
            dual: Array3::zeros(fbar.dim()),
            fbar,
            iteration: 0,
            history: Vec::new(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.fbar.dim() == self.dual.dim(), "auxiliary and dual shapes differ");
        ensure!(self.history.len() == self.iteration, "history does not match the iteration count");
        ensure!(self.adam.m.len() == self.nf.param_count(), "optimizer state does not match the NF");
        ensure!(
            self.fbar.iter().chain(self.dual.iter()).all(|v| v.is_finite())
                && self.nf.params().iter().all(|v| v.is_finite()),
            "state holds non-finite values"
        );
        Ok(())
    }

    pub fn to_container(&self, cfg: &SolverConfig) -> Result<Container> {
        let mut c = Container::new();
        c.set_meta("kind", CHECKPOINT_KIND);
        c.set_meta("iteration", self.iteration as u64);
        c.set_meta("config", serde_json::to_value(cfg)?);
        c.set_meta("history", serde_json::to_value(&self.history)?);
        self.nf.write_into(&mut c, "nf.")?;
        self.adam.write_into(&mut c, "nf.")?;
        let (p, j, _) = self.fbar.dim();
        c.push_f64("fbar", vec![p, j, j], self.fbar.iter().cloned().collect())?;
        c.push_f64("dual", vec![p, j, j], self.dual.iter().cloned().collect())?;
        Ok(c)
    }

    /// Restores a state and the solver configuration it was produced with.
    pub fn from_container(c: &Container) -> Result<(Self, SolverConfig)> {
        let kind = c.meta_str("kind")?;
        ensure!(kind == CHECKPOINT_KIND, "container holds `{kind}`, expected a solver checkpoint");
        let cfg: SolverConfig = serde_json::from_value(c.meta("config")?.clone())?;
        let stack = |name: &str| -> Result<Array3<f64>> {
            let (shape, data) = c.get_f64(name, 3)?;
            Array3::from_shape_vec((shape[0], shape[1], shape[2]), data)
                .map_err(|e| Error::Validation(format!("{name}: {e}")))
        };
        let state = Self {
            nf: NeuralField::read_from(c, "nf.")?,
            adam: Adam::read_from(c, "nf.")?,
            fbar: stack("fbar")?,
            dual: stack("dual")?,
            iteration: c.meta_u64("iteration")? as usize,
            history: serde_json::from_value(c.meta("history")?.clone())?,
        };
        state.validate()?;
        Ok((state, cfg))
    }

    pub fn save(&self, cfg: &SolverConfig, path: impl AsRef<Path>) -> Result<()> {
        self.to_container(cfg)?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, SolverConfig)> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Optional inputs of a reconstruction run.
#[derive(Debug, Default)]
pub struct RunOptions<'a, T: Real> {
    /// Enables the per-iteration PSNR column.
    pub ground_truth: Option<&'a DynamicObject>,
    /// Directory for periodic checkpoints (`checkpoint.dct`) and, after a
    /// numerical failure, the last good state (`last_good.dct`).
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from this state instead of a fresh initialisation.
    pub resume: Option<AdmmState<T>>,
    /// Stop after this many completed iterations even if `outer_iters` is
    /// larger. The learning-rate schedule still follows `outer_iters`.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Reconstruction<T: Real> {
    /// Render of the final NF.
    pub object: DynamicObject,
    pub state: AdmmState<T>,
    pub early_stopped: bool,
}

impl<T: Real> Reconstruction<T> {
    pub fn history(&self) -> &[HistoryRow] {
        &self.state.history
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.dct";
pub const LAST_GOOD_FILE: &str = "last_good.dct";

/// Runs the ADMM iterations `{NF update; auxiliary update; dual ascent}`.
pub fn rsr_nf_reconstruct<T: Real>(
    sinos: &SinogramSet,
    restorer: &dyn Restorer,
    cfg: &SolverConfig,
    opts: RunOptions<'_, T>,
) -> Result<Reconstruction<T>> {
    cfg.validate()?;
    sinos.validate()?;
    let (p, j) = (sinos.len(), sinos.detector_count());
    cfg.batch_size(p)?;
    if let Some(gt) = opts.ground_truth {
        ensure!(gt.frames.dim() == (p, j, j), "ground truth shape does not match the measurements");
    }
    let mut state = match opts.resume {
        Some(s) => {
            s.validate()?;
            ensure!(s.fbar.dim() == (p, j, j), "checkpoint grid does not match the measurements");
            ensure!(s.nf.arch == cfg.arch, "checkpoint NF architecture differs from the configuration");
            s
        }
        None => AdmmState::initial(sinos, cfg)?,
    };
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    if let Some(w) = cfg.arch.expressivity_warning(j) {
        log::warn!("{w}");
    }
    let last = opts.stop_after.unwrap_or(cfg.outer_iters).min(cfg.outer_iters);
    let mut early_stopped = false;
    while state.iteration < last {
        let good = state.clone();
        match outer_iteration(&mut state, sinos, restorer, cfg, opts.ground_truth) {
            Ok(()) => {}
            Err(Error::Numerical(msg)) => {
                let saved = match &opts.checkpoint_dir {
                    Some(dir) => {
                        let path = dir.join(LAST_GOOD_FILE);
                        good.save(cfg, &path)?;
                        format!("; last good state (iteration {}) saved to {}", good.iteration, path.display())
                    }
                    None => String::new(),
                };
                return Err(Error::Numerical(format!(
                    "iteration {} failed: {msg}{saved}",
                    good.iteration + 1
                )));
            }
            Err(e) => return Err(e),
        }
        if let Some(dir) = &opts.checkpoint_dir {
            if cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0 {
                state.save(cfg, dir.join(CHECKPOINT_FILE))?;
            }
        }
        if converged(&state.history, cfg) {
            early_stopped = true;
            break;
        }
    }
    let mut object = state.nf.render_grid(j, p)?;
    object.provenance = if cfg.lambda > 0.0 { "rsr-nf" } else { "temp-nf" }.into();
    if let Some(gt) = opts.ground_truth {
        object.normalization = gt.normalization;
    }
    Ok(Reconstruction {
        object,
        state,
        early_stopped,
    })
}

/// The same pipeline without the restoration prior.
pub fn temp_nf_reconstruct<T: Real>(sinos: &SinogramSet, cfg: &SolverConfig, opts: RunOptions<'_, T>) -> Result<Reconstruction<T>> {
    let cfg = SolverConfig {
        lambda: 0.0,
        ..cfg.clone()
    };
    rsr_nf_reconstruct(sinos, &IdentityRestorer, &cfg, opts)
}

fn converged(history: &[HistoryRow], cfg: &SolverConfig) -> bool {
    let w = cfg.early_stop_window;
    if cfg.early_stop_tol <= 0.0 || w == 0 || history.len() <= w {
        return false;
    }
    let now = history[history.len() - 1].objective;
    let then = history[history.len() - 1 - w].objective;
    (now - then).abs() <= cfg.early_stop_tol * then.abs().max(f64::MIN_POSITIVE)
}

fn frob(a: &Array3<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn outer_iteration<T: Real>(
    state: &mut AdmmState<T>,
    sinos: &SinogramSet,
    restorer: &dyn Restorer,
    cfg: &SolverConfig,
    gt: Option<&DynamicObject>,
) -> Result<()> {
    let start = Instant::now();
    let (p, j, _) = state.fbar.dim();
    nf_step(state, sinos, cfg)?;
    let ftilde = state.nf.render_grid(j, p).map_err(|e| Error::Numerical(e.to_string()))?.frames;

    let (fbar, rho_red) = if cfg.lambda == 0.0 {
        (&ftilde + &state.dual, 0.0)
    } else {
        match cfg.fbar_update {
            FbarUpdate::FixedPoint => {
                let restored = restorer.restore_frames(&state.fbar)?;
                let rho = red_penalty_frames(&state.fbar, &restored);
                (fixed_point_combination(&restored, &ftilde, &state.dual, cfg.lambda, cfg.beta)?, rho)
            }
            FbarUpdate::Exact => {
                let opts = ExactOptions {
                    tol: cfg.exact_tol,
                    max_steps: cfg.exact_max_steps,
                };
                let rho = red_penalty_frames(&state.fbar, &restorer.restore_frames(&state.fbar)?);
                (fbar_step_exact(&ftilde, &state.dual, restorer, cfg.lambda, cfg.beta, opts)?, rho)
            }
        }
    };

    let prob = InnerProblem::new(sinos, &fbar, &state.dual, cfg.xi, cfg.beta)?;
    let terms = prob.full_terms(&ftilde)?;
    let rho_tau = temporal_penalty_frames(&ftilde);
    let dual_sq = state.dual.iter().map(|v| v * v).sum::<f64>();
    let objective = terms.fidelity + cfg.lambda * rho_red + cfg.xi * rho_tau;
    let lagrangian = objective + terms.augmented - 0.5 * cfg.beta * dual_sq;
    let mut diff = ftilde.clone();
    Zip::from(&mut diff).and(&fbar).for_each(|d, &b| *d -= b);
    let primal = frob(&diff);
    let norm = frob(&ftilde);

    dual_step(&mut state.dual, &ftilde, &fbar)?;
    state.fbar = fbar;
    if !(objective.is_finite() && state.fbar.iter().chain(state.dual.iter()).all(|v| v.is_finite())) {
        return Err(Error::Numerical(format!("non-finite state (objective {objective})")));
    }
    let psnr = match gt {
        Some(gt) => {
            let est = DynamicObject {
                frames: ftilde,
                normalization: gt.normalization,
                provenance: String::new(),
            };
            Some(evaluate(&est, gt, None, None)?.psnr_db)
        }
        None => None,
    };
    state.iteration += 1;
    state.history.push(HistoryRow {
        iter: state.iteration,
        fidelity: terms.fidelity,
        rho_tau,
        rho_red,
        primal_residual: primal,
        primal_residual_rel: if norm > 0.0 { primal / norm } else { 0.0 },
        objective,
        lagrangian,
        psnr,
        seconds: start.elapsed().as_secs_f64(),
    });
    log::debug!(
        "iter {}: objective {:.4e}, primal {:.3e}, psnr {:?}",
        state.iteration,
        objective,
        primal,
        psnr
    );
    Ok(())
}

/// Writes the history as CSV with one row per outer iteration.
pub fn write_history_csv(history: &[HistoryRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for row in history {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
