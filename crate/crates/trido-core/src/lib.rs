//! Direct PET reconstruction from low-dose sinograms.
//!
//! The pipeline pairs a phantom-based acquisition simulator (parallel-beam
//! projector, Poisson dose thinning, OSEM reconstruction) with a two-stage
//! transformer: a sinogram-domain denoiser over projection-row tokens and a
//! windowed-attention U-shaped reconstructor carrying learnable frequency
//! filters. Training optimizes a joint sinogram + image objective; metrics
//! and a CLI round out the toolchain.

pub mod error;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
