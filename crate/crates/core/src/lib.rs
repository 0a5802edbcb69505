//! Arbitrary-resolution image steganography.
//!
//! A secret image of any size is split into a cover-aligned global basis and
//! a compact detail latent, hidden together with an in-band resolution map
//! by an invertible coupling network, and recovered blindly at its original
//! resolution by a latent-conditioned implicit decoder.

pub mod error;
pub mod fda;
pub mod gradcheck;
pub mod ihn;
pub mod imaging;
pub mod irc;
pub mod lgir;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod selftest;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
