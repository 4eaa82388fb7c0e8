//! Instance-conditioned GANs at desk scale.
//!
//! The crate models a data distribution as a mixture of conditionals
//! `p(x | h_i)` around every training instance. Each instance is embedded by a
//! frozen feature map, its k nearest neighbours under cosine similarity form
//! the "real" pool for that conditioning, and a generator/discriminator pair is
//! trained adversarially on (instance, neighbour) pairs.
//!
//! Modules, bottom-up:
//!
//! - [`diffcore`]: dense tensors, a define-by-run tape and Adam.
//! - [`embedding`]: identity / random-projection / PCA feature maps.
//! - [`neighborhoods`]: exact cosine k-NN, k-means and instance selection.
//! - [`models`]: conditional generator and projection discriminator.
//! - [`training`]: the adversarial loop, losses and class balancing.
//! - [`eval`]: Fréchet distance, precision/recall, stratified FID, KDE.
//! - [`harness`]: datasets, checkpoints, records and experiment drivers.

pub mod diffcore;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod harness;
pub mod models;
pub mod neighborhoods;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
