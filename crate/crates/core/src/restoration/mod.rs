//! The learned static restoration prior.

pub mod cnn;
mod degrade;
mod model;
mod train;

pub use degrade::{degrade, degrade_array, degrade_mean, gaussian_blur, gaussian_kernel, DegradationSample, BLUR_MAX, SIGMA_MAX};
pub use model::{IdentityRestorer, LinearRestorer, RestorationModel, Restorer, ScaledIdentity};
pub use train::{evaluate_restorer, train_restorer, RestorationEval, TrainConfig, TrainReport};
