//! Desk-scale single-image super-resolution laboratory.
//!
//! The crate trains and evaluates ×4 super-resolution GANs built from
//! residual-in-residual dense blocks (the RRDB family, plus the RRDRB
//! variant with intra-block residuals and optional learned noise injection),
//! using a relativistic-average discriminator. Everything runs on a small
//! self-contained `f64` reverse-mode autodiff engine so training, metrics,
//! and file formats are exactly reproducible on a CPU.
//!
//! Module map:
//! - [`tensor`]: 4-D tensors, autodiff primitives, Adam.
//! - [`models`]: generator / discriminator construction and weight files.
//! - [`losses`]: pixel, perceptual, and relativistic-average GAN objectives.
//! - [`data`]: PNG I/O, bicubic ×4 degradation, crops, augmentation, batching.
//! - [`metrics`]: Y-channel PSNR, NIQE, and the perceptual index.
//! - [`training`]: two-phase training loop with checkpoint/resume.

mod bytes;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
