//! Generator and discriminator networks.
//!
//! Both are residual networks with one gated self-attention stage at half
//! the output resolution. All convolution and dense weights are spectrally
//! normalized.

mod attention;
mod blocks;
mod discriminator;
mod generator;

pub use attention::SelfAttention;
pub use blocks::{DiscBlock, GenBlock};
pub use discriminator::Discriminator;
pub use generator::Generator;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::nn::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unsupported resolution {0}: must be a power of two >= 16")]
    UnsupportedResolution(usize),
    #[error("attention needs a channel count divisible by 8, got {channels}")]
    ChannelMismatch { channels: usize },
    #[error("shape mismatch: expected {expected}, got {got:?}")]
    ShapeMismatch { expected: String, got: Vec<usize> },
}

/// Architecture hyperparameters shared by both networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub z_dim: usize,
    pub base_channels: usize,
    pub resolution: usize,
    /// Power iterations per training forward pass of each normalized weight.
    pub power_iterations: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { z_dim: 128, base_channels: 64, resolution: 64, power_iterations: 1 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.resolution < 16 || !self.resolution.is_power_of_two() {
            return Err(ModelError::UnsupportedResolution(self.resolution));
        }
        if self.z_dim == 0 {
            return Err(ModelError::ShapeMismatch { expected: "z_dim > 0".into(), got: vec![0] });
        }
        if self.base_channels == 0 || self.base_channels % 8 != 0 {
            return Err(ModelError::ChannelMismatch { channels: self.base_channels });
        }
        Ok(())
    }

    /// Number of 2x resampling blocks between 4x4 and the output resolution.
    pub fn num_blocks(&self) -> usize {
        (self.resolution / 4).trailing_zeros() as usize
    }

    /// Generator feature widths: `[4x4 input, after block 0, ...]`.
    pub fn generator_channels(&self) -> Vec<usize> {
        (0..=self.num_blocks()).map(|i| self.base_channels * (8usize >> i.min(3))).collect()
    }

    /// Discriminator block output widths, one per block.
    pub fn discriminator_channels(&self) -> Vec<usize> {
        (0..self.num_blocks()).map(|i| self.base_channels * (1usize << i.min(3))).collect()
    }
}

/// `(batch, z_dim)` standard-normal latent vectors.
pub fn sample_latent<R: Rng + ?Sized>(batch: usize, z_dim: usize, rng: &mut R) -> Tensor<f32> {
    Tensor::from_vec(&[batch, z_dim], (0..batch * z_dim).map(|_| rng.sample(StandardNormal)).collect())
}

pub(crate) fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
