//! Super-resolution of grayscale images and video by turning a black-box
//! denoiser into the regularizer of an ADMM loop, either as a plug-and-play
//! prior (one denoiser call per iteration) or through the
//! regularization-by-denoising fixed point. The same loop handles the single
//! image and the multi-frame case; the video path needs no motion estimation.
//!
//! Modules:
//! - [`volume`]: the image/video tensor and its vectorization convention
//! - [`io`]: PGM and lossless float-dump serialization
//! - [`operators`]: blur, decimation, their adjoints, the normal operator,
//!   and Gaussian noise simulation
//! - [`denoisers`]: pluggable denoisers and the RED prior/probes
//! - [`solver`]: the ADMM loop with its rho schedule and convergence trace
//! - [`metrics`]: PSNR and bicubic resampling
//! - [`harness`]: config parsing and the experiment commands behind the CLI

pub mod denoisers;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod operators;
pub mod solver;
pub mod volume;

pub use error::{Error, Result};
