//! Dynamic tomographic reconstruction with neural fields and learned
//! restoration priors.

pub mod acquisition;
pub mod datasets;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nf;
pub mod optim;
pub mod real;
pub mod recon;
pub mod restoration;
pub mod tomo;

pub use error::{Error, ErrorKind, Result};
