//! Semi-supervised contrastive training with margin-sampling active learning.
//!
//! The crate is `no_std` (it needs `alloc`) and carries every algorithmic piece
//! of a training run: augmentation, a small differentiable encoder with a
//! projection head and a classification head, the contrastive, cross-entropy
//! and pseudo-label losses, the margin sampler and its scheduler, and the
//! training loop itself. File formats, the CLI and the HTTP labeling service
//! live in the `ssal` companion crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod active;
pub mod augment;
pub mod datasets;
pub mod error;
pub mod image;
pub mod losses;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use image::Image;
