//! Novelty detection with an adversarial autoencoder whose latent space is
//! orthogonalized per class, scored by the angle between an input's latent
//! code and the latent code of its reconstruction.

pub mod check;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod nn;
pub mod ole;
pub mod rng;
pub mod scoring;
pub mod training;

pub use error::{Error, Result};
