//! Frequency-constrained adversarial attacks, defences and spectral analysis
//! for small image classifiers.
//!
//! The frequency coordinate system throughout is the blockwise 8×8 DCT with
//! zigzag indices `0..64` ([`dct`]). Attack budgets are in raw pixel units;
//! models see normalised inputs, and [`PixelModel`] bridges the two.

// Range checks are written `!(x >= 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod attacks;
pub mod data;
pub mod dct;
mod error;
pub mod io;
pub mod nn;
mod pixel;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use pixel::PixelModel;
pub use tensor::Tensor;
