//! Minimal tensor layers with explicit forward and backward passes.
//!
//! Every layer records what its backward pass needs when the forward runs
//! with [`Mode::record`] set; one recorded forward pairs with exactly one
//! backward. Summation orders are fixed, so repeated runs are bit-identical.

mod adam;
mod batchnorm;
mod conv;
pub mod init;
mod linear;
pub mod ops;
mod param;
mod scalar;
mod spectral;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use batchnorm::BatchNorm2d;
pub use conv::{Conv2d, ConvGeometry};
pub use linear::Dense;
pub use param::{join, Module, Param, Visitor};
pub use scalar::{axpy, dot, gemm, max, sum, DType, Scalar};
pub use spectral::SpectralNorm;
pub use tensor::Tensor;

/// Forward-pass behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    /// Batch statistics in normalization layers and power-iteration updates.
    pub train: bool,
    /// Keep the activations required by `backward`.
    pub record: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode { train: true, record: true };
    pub const TRAIN_NO_GRAD: Mode = Mode { train: true, record: false };
    pub const EVAL: Mode = Mode { train: false, record: false };
    /// Inference statistics, but recorded for gradient checks.
    pub const EVAL_WITH_GRAD: Mode = Mode { train: false, record: true };
}

#[cfg(test)]
pub(crate) mod gradcheck;
