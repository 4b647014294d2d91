//! Phantoms, user data ingestion, and on-disk persistence.

pub mod container;
mod ingest;
mod io;
mod object;
mod phantom;
mod warp;

pub use container::{ArrayData, Container};
pub use ingest::{ingest_volume, resample_frame};
pub use io::{
    load_object, load_sinograms, object_from_container, object_to_container, save_object,
    save_sinograms, sinograms_from_container, sinograms_to_container,
};
pub use object::DynamicObject;
pub use phantom::{
    procedural_phantom, procedural_phantom_with, total_variation, walnut_slice,
    walnut_training_slices, PhantomOptions, PhantomRecipe,
};
pub use warp::{warp_frame, warp_sequence, WarpRecipe};
