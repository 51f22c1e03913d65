//! Free-form 3D tumor inpainting for CT volumes.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors with reverse-mode differentiation and the 3D
//!   kernels (convolution, trilinear resampling) every layer needs.
//! * [`nn`]: gated and dilated-gated convolutions, batch normalization, and
//!   a fixed-seed 2D feature extractor for the perceptual and style terms.
//! * [`model`]: the generator with its side-output branch, and the
//!   patch discriminator.
//! * [`losses`]: adversarial, multi-mask, perceptual, and style losses and
//!   their weighted combination.
//! * [`data`]: CT windowing, normalization, tumor cube extraction, boundary
//!   masks, augmentation, and a procedural phantom generator.
//! * [`train`]: Adam, the boundary-weight ramp, the adversarial training
//!   loop with checkpoints, and mask-driven synthesis.
//! * [`eval`]: overlap and distance metrics and the real versus
//!   real-plus-synthetic segmentation protocol.
//! * [`io`]: volume files, checkpoint archives, run configuration, and
//!   slice montages.
//!
//! The guide in `book/` walks through each part; its code listings are
//! compiled as doc-tests of this crate.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/tensors.md")]
    pub struct Tensors;
    #[doc = include_str!("../../../book/src/layers.md")]
    pub struct Layers;
    #[doc = include_str!("../../../book/src/models.md")]
    pub struct Models;
    #[doc = include_str!("../../../book/src/losses.md")]
    pub struct Losses;
    #[doc = include_str!("../../../book/src/data.md")]
    pub struct Data;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub struct Evaluation;
    #[doc = include_str!("../../../book/src/files.md")]
    pub struct Files;
}
