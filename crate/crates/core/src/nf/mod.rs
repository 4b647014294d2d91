//! Neural-field representation of the dynamic object.

mod field;
pub mod mlp;
mod posenc;

pub use field::{NeuralField, NfArch};
pub use mlp::{InitScheme, Mlp};
pub use posenc::{encode_grid, encode_points, grid_coordinate, grid_point, posenc, time_coordinate, PosEncConfig};
