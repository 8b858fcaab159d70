//! Correspondence-aware multi-view diffusion at desk scale.
//!
//! Multiple views of one scene are denoised in parallel by a weight-sharing
//! UNet; correspondence-aware attention (CAA) blocks inserted after each UNet
//! block exchange information along geometry-derived pixel correspondences.
//! Everything runs from scratch on CPU: a small tensor/autodiff substrate,
//! pinhole and equirectangular geometry, synthetic scene generators, DDIM
//! sampling, and the overlap-PSNR consistency metric.

pub mod autodiff;
pub mod caa;
pub mod camera;
pub mod correspondence;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod parallel;
pub mod pipelines;
pub mod rng;
pub mod scalar;
pub mod synthdata;
pub mod tensor;
pub mod unet;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
