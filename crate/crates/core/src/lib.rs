//! Desk-scale diffusion engine with cross-step feature caching.
//!
//! Everything numeric lives here: a small NCHW tensor type with reverse-mode
//! differentiation over the fixed op set a skip-branched U-Net needs, the
//! denoiser itself with full/partial execution modes, DDPM/DDIM sampling,
//! cache schedules, per-step similarity analysis, and a pixel-space Fréchet
//! quality metric. The crate is `no_std` (alloc only); IO, file formats and
//! wall-clock benchmarking live in the companion CLI crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod autodiff;
pub mod cache;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod macs;
pub mod ops;
pub mod quality;
pub mod rng;
pub mod tensor;
pub mod unet;

mod kernels;
mod mathf;

pub use error::{Error, Result};
pub use tensor::Tensor;
