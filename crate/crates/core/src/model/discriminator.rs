use rand::Rng;

use super::{rng_for, DiscBlock, ModelConfig, ModelError, SelfAttention};
use crate::nn::{join, ops, Dense, Mode, Module, Scalar, Tensor, Visitor};

/// Maps `(B, 3, R, R)` images to `B` unbounded realness scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    config: ModelConfig,
    pub blocks: Vec<DiscBlock<T>>,
    pub attention: SelfAttention<T>,
    pub head: Dense<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng_for(seed);
        Self::with_rng(config, &mut rng)
    }

    pub fn with_rng<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let sn = Some(config.power_iterations);
        let ch = config.discriminator_channels();
        let mut blocks = Vec::with_capacity(ch.len());
        let mut inputs = 3;
        for (i, &out) in ch.iter().enumerate() {
            blocks.push(DiscBlock::new(inputs, out, i == 0, sn, rng));
            inputs = out;
        }
        let attention = SelfAttention::new(ch[0], sn, rng)?;
        let head = Dense::new(inputs, 1, true, sn, rng);
        Ok(Discriminator { config, blocks, attention, head, cache: None })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, ModelError> {
        let r = self.config.resolution;
        if x.shape().len() != 4 || x.shape()[1..] != [3, r, r] || x.shape()[0] == 0 {
            return Err(ModelError::ShapeMismatch { expected: format!("(B, 3, {r}, {r})"), got: x.shape().to_vec() });
        }
        let b = x.shape()[0];
        let mut h = self.blocks[0].forward(x, mode);
        h = self.attention.forward(&h, mode)?;
        for block in self.blocks.iter_mut().skip(1) {
            h = block.forward(&h, mode);
        }
        let pooled = ops::global_sum_pool(&ops::relu(&h));
        let scores = self.head.forward(&pooled, mode).reshape(&[b]);
        self.cache = mode.record.then_some(h);
        Ok(scores)
    }

    /// Backpropagates score gradients `(B,)`; returns the image gradient.
    pub fn backward(&mut self, grad_scores: &Tensor<T>) -> Tensor<T> {
        let h = self.cache.take().expect("discriminator backward without recorded forward");
        let (b, _, hh, ww) = h.dims4();
        let dpool = self.head.backward(&grad_scores.clone().reshape(&[b, 1]));
        let mut dh = ops::relu_backward(&h, &ops::global_sum_pool_backward(&dpool, hh, ww));
        for block in self.blocks.iter_mut().skip(1).rev() {
            dh = block.backward(&dh);
        }
        dh = self.attention.backward(&dh);
        self.blocks[0].backward(&dh)
    }
}

impl<T: Scalar> Module<T> for Discriminator<T> {
    fn visit(&mut self, prefix: &str, visitor: &mut dyn Visitor<T>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), visitor);
        }
        self.attention.visit(&join(prefix, "attention"), visitor);
        self.head.visit(&join(prefix, "head"), visitor);
    }
}
