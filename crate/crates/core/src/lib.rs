//! Desk-scale masked-diffusion decoding over synthetic video + text token
//! sequences, with three interchangeable denoising engines:
//!
//! - **vanilla**: full bidirectional forward over the whole sequence every step
//! - **dual_cache**: context K/V cached per block, only the active block recomputed
//! - **mars**: modality- and depth-wise asynchronous context refreshing with
//!   frame-wise chunk attention and anchor tokens found by proxy scoring
//!
//! Everything is deterministic given a seed, and every engine reports attention
//! score entries so costs can be checked against closed-form accounting.

pub mod analysis;
pub mod diffusion;
pub mod error;
pub mod mars;
pub mod model;
pub mod numeric;
pub mod workload;

pub use error::{Error, Result};
