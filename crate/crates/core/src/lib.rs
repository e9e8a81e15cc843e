//! Convolutional neural pyramid for image-to-image regression.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`autodiff`]),
//! the pyramid network and its baselines ([`model`]), receptive-field and
//! cost analysis ([`analysis`]), training and synthetic data ([`training`]),
//! and file formats ([`io`]).

pub mod ablation;
pub mod analysis;
pub mod autodiff;
pub mod checks;
pub mod cli;
mod error;
pub mod io;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Real, Shape, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/autodiff.md")]
    pub struct Autodiff;
    #[doc = include_str!("../../../book/src/pyramid.md")]
    pub struct Pyramid;
    #[doc = include_str!("../../../book/src/analysis.md")]
    pub struct Analysis;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/files.md")]
    pub struct Files;
    #[doc = include_str!("../../../book/src/ablation.md")]
    pub struct Ablation;
}
