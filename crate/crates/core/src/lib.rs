//! Wavelet-guided attention U-Net for binary nuclei segmentation.
//!
//! The crate is organised bottom-up:
//!
//! * [`nn`]: tape-based reverse-mode tensor ops and the Adam optimiser;
//! * [`wavelet`]: single-level orthonormal Haar DWT as a layer;
//! * [`attention`]: the wavelet-guided channel attention module and its
//!   learnable weighted global average pooling;
//! * [`decoder`]: fixed Gaussian/Lanczos anti-aliased upsampling, the
//!   upsample block and the multi-receptive-field convolution block;
//! * [`model`]: DenseNet-style encoder, the four ablation variants,
//!   checkpoints and feature dumps;
//! * [`losses`], [`metrics`], [`data`], [`train`]: training and evaluation.

pub mod attention;
pub mod cli;
pub mod data;
pub mod decoder;
pub mod error;
pub mod kv;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod reference;
pub mod selftest;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
