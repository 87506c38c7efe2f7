//! Spatially-variant blind super-resolution: a texture-driven mixture of
//! anisotropic Gaussian blur kernels, a U-Net image prior, and Monte Carlo
//! EM inference with Langevin sampling of the latent input.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod degradation;
pub mod error;
pub mod generator;
pub mod imageops;
pub mod io;
pub mod mcem;
pub mod metrics;
pub mod synth;

pub use error::{CoreError, Result};
