//! Parallel-beam Radon transform, its adjoint, and filtered backprojection.

mod fbp;
mod frame;
mod radon;

pub use fbp::{fbp_sliding_window, fbp_static, ramp_filter, sliding_window_start};
pub use frame::{ImageFrame, Projection};
pub use radon::{radon_adjoint, radon_project};

pub(crate) use radon::{backproject_view_into, project_view};
