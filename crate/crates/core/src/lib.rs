//! Near-field nulling-control beam focusing for extremely large linear arrays.
//!
//! The pipeline partitions the radiative near field into correlation-sampled
//! polar sectors, labels random multi-user scenarios with closed-form LCMV
//! weights, trains a phase and a magnitude MLP per sector, and evaluates the
//! resulting codebook's interference suppression against LCMV.

pub mod array;
pub mod codebook;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fresnel;
pub mod lcmv;
pub mod linalg;
pub mod mlp;
pub mod partition;

pub use error::{Error, Result};
