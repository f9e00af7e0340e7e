//! Self-attention ResNet GAN toolkit for small class-labeled image sets:
//! loading and affine expansion of training data, hinge-loss training,
//! FID/IS evaluation, and a catalog of trained models and generated images.

pub mod catalog;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod training;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/dataset.md")]
    mod dataset {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/catalog.md")]
    mod catalog {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
