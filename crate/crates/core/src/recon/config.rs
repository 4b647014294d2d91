use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nf::NfArch;

/// How the static-prior variable is updated each outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FbarUpdate {
    /// One restorer application per frame, blended with the NF frame.
    #[default]
    FixedPoint,
    /// Gradient descent on the per-frame subproblem.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Weight of the restoration prior.
    pub lambda: f64,
    /// Weight of the temporal second-difference penalty.
    pub xi: f64,
    /// Augmented Lagrangian weight.
    pub beta: f64,
    pub outer_iters: usize,
    pub inner_steps: usize,
    /// Adam learning rate for the NF parameters.
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`, cosine decay over all
    /// inner steps.
    pub lr_floor: f64,
    /// Frames per inner step; `None` means `max(1, P / 8)`.
    pub batch: Option<usize>,
    pub seed: u64,
    pub arch: NfArch,
    pub fbar_update: FbarUpdate,
    pub exact_tol: f64,
    pub exact_max_steps: usize,
    /// Stop once the objective changes by less than this fraction over
    /// `early_stop_window` outer iterations. Zero disables early exit.
    pub early_stop_tol: f64,
    pub early_stop_window: usize,
    /// Write a checkpoint every this many outer iterations (0: never).
    pub checkpoint_every: usize,
    /// Embedding steps fitting the initial NF to the sliding-window FBP of
    /// the data (0: start from the random initialisation).
    pub warm_start_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            xi: 1e2,
            beta: 1.0,
            outer_iters: 200,
            inner_steps: 20,
            lr: 1e-3,
            lr_floor: 0.1,
            batch: None,
            seed: 0,
            arch: NfArch::default(),
            fbar_update: FbarUpdate::FixedPoint,
            exact_tol: 1e-8,
            exact_max_steps: 100,
            early_stop_tol: 1e-5,
            early_stop_window: 10,
            checkpoint_every: 0,
            warm_start_steps: 0,
        }
    }
}

impl SolverConfig {
    /// The reduced schedule used for desk-scale comparisons.
    pub fn desk_preset() -> Self {
        Self {
            outer_iters: 60,
            inner_steps: 10,
            warm_start_steps: 1000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("xi", self.xi), ("beta", self.beta)] {
            ensure!(v.is_finite() && v >= 0.0, "{name} must be finite and >= 0, got {v}");
        }
        ensure!(self.lambda == 0.0 || self.beta > 0.0, "beta must be positive when lambda > 0");
        ensure!(self.lr.is_finite() && self.lr > 0.0, "lr must be positive");
        ensure!((0.0..=1.0).contains(&self.lr_floor), "lr_floor must lie in [0, 1]");
        ensure!(self.batch != Some(0), "batch must be at least 1");
        ensure!(self.exact_tol > 0.0, "exact_tol must be positive");
        ensure!(self.early_stop_tol >= 0.0, "early_stop_tol must be >= 0");
        self.arch.validate()
    }

    pub fn batch_size(&self, frames: usize) -> Result<usize> {
        let b = self.batch.unwrap_or((frames / 8).max(1));
        ensure!((1..=frames).contains(&b), "batch {b} outside [1, {frames}]");
        Ok(b)
    }

    /// Weight of the augmented penalty in the NF subproblem. Without the
    /// prior the NF is not tied to the auxiliary variable at all.
    pub fn coupling(&self) -> f64 {
        if self.lambda > 0.0 {
            self.beta
        } else {
            0.0
        }
    }

    pub fn total_inner_steps(&self) -> usize {
        self.outer_iters * self.inner_steps
    }
}
