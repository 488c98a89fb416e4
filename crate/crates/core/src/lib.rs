//! Latent-space diffusability metrics.
//!
//! Reconstruction FID, interpolated FID (nearest-neighbor interpolation in
//! latent space), gFID(t) under a closed-form empirical score, toy
//! Gaussian-mixture experiments, and Pearson/Spearman correlation over metric
//! tables.

pub mod diffusion;
pub mod error;
pub mod frechet;
pub mod interp;
pub mod knn;
pub mod report;
pub mod rng;
pub mod stats;
pub mod svg;
pub mod tensorio;
pub mod toygmm;

pub use error::{Error, Result};
pub use tensorio::TensorSet;
