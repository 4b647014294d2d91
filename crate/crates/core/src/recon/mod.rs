//! Dynamic reconstruction by ADMM over a neural field, a static restoration
//! prior, and a temporal smoothness penalty.

mod config;
mod solver;
mod steps;
mod terms;

pub use config::{FbarUpdate, SolverConfig};
pub use solver::{
    rsr_nf_reconstruct, temp_nf_reconstruct, write_history_csv, AdmmState, HistoryRow, Reconstruction, RunOptions,
    CHECKPOINT_FILE, LAST_GOOD_FILE,
};
pub use steps::{dual_step, fbar_step_exact, fbar_step_fixed_point, fixed_point_combination, nf_step, ExactOptions};
pub use terms::{
    fidelity_loss, fidelity_of_frames, red_gradient, red_penalty, temporal_gradient, temporal_penalty,
    temporal_penalty_frames, InnerProblem, InnerTerms,
};
