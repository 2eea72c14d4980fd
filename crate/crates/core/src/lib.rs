//! Discriminative optimization: learn a sequence of linear update maps from
//! training data and run them to a stationary point.
//!
//! Task packs cover 1D estimation under unknown penalties, rigid point-cloud
//! registration, camera pose inlier estimation and impulse-noise denoising.

mod error;
pub mod denoise;
pub mod feature;
pub mod penalty1d;
pub mod pnp;
pub mod registration;
pub mod rng;
pub mod sum;

pub use error::{Error, Result};
