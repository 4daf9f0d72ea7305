//! Factorized p·q·r motif posteriors for fragment-wise molecular elaboration.

pub mod augment;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod gnn2d;
pub mod gnn3d;
pub mod molio;
pub mod pipeline;
pub mod posterior;
pub mod recon;
pub mod rng;
pub mod sampling;
pub mod shred;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
