//! Contrastive texture learning core.
//!
//! `no_std` (with `alloc`) building blocks: rotation-invariant LBP texture
//! maps, a small CNN substrate with reverse-mode gradients, the contrastive
//! pretext loss, five-class classification with risk aggregation,
//! cross-shaped volume voting, class activation maps and evaluation
//! statistics. File formats and the command-line tool live in the `ctl`
//! crate.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod cam;
pub mod checkpoint;
pub mod classifier;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod lbp;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod vote;

pub use error::{Error, Result};
pub use tensor::Tensor;
