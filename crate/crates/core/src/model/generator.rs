use rand::Rng;

use super::{rng_for, GenBlock, ModelConfig, ModelError, SelfAttention};
use crate::nn::{join, ops, BatchNorm2d, Conv2d, ConvGeometry, Dense, Mode, Module, Scalar, Tensor, Visitor};

/// Maps `(B, z_dim)` latent batches to `(B, 3, R, R)` images in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    config: ModelConfig,
    pub input_proj: Dense<T>,
    pub blocks: Vec<GenBlock<T>>,
    pub attention: SelfAttention<T>,
    attention_after: usize,
    pub head_bn: BatchNorm2d<T>,
    pub head_conv: Conv2d<T>,
    cache: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Generator<T> {
    /// Fresh parameters drawn deterministically from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng_for(seed);
        Self::with_rng(config, &mut rng)
    }

    pub fn with_rng<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let sn = Some(config.power_iterations);
        let ch = config.generator_channels();
        let input_proj = Dense::new(config.z_dim, 16 * ch[0], true, sn, rng);
        let blocks: Vec<_> = ch.windows(2).map(|w| GenBlock::new(w[0], w[1], sn, rng)).collect();
        let attention_after = blocks.len() - 2;
        let attention = SelfAttention::new(ch[attention_after + 1], sn, rng)?;
        let last = *ch.last().expect("nonempty");
        Ok(Generator {
            config,
            input_proj,
            blocks,
            attention,
            attention_after,
            head_bn: BatchNorm2d::new(last),
            head_conv: Conv2d::new(ConvGeometry::same(last, 3, 3), true, sn, rng),
            cache: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn forward(&mut self, z: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, ModelError> {
        let zd = self.config.z_dim;
        if z.shape().len() != 2 || z.shape()[1] != zd || z.shape()[0] == 0 {
            return Err(ModelError::ShapeMismatch { expected: format!("(B, {zd})"), got: z.shape().to_vec() });
        }
        let b = z.shape()[0];
        let c0 = self.config.generator_channels()[0];
        let mut h = self.input_proj.forward(z, mode).reshape(&[b, c0, 4, 4]);
        for i in 0..self.blocks.len() {
            h = self.blocks[i].forward(&h, mode);
            if i == self.attention_after {
                h = self.attention.forward(&h, mode)?;
            }
        }
        let hb = self.head_bn.forward(&h, mode);
        let y = ops::tanh(&self.head_conv.forward(&ops::relu(&hb), mode));
        self.cache = mode.record.then(|| (hb, y.clone()));
        Ok(y)
    }

    /// Backpropagates an image gradient; returns the latent gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let (hb, y) = self.cache.take().expect("generator backward without recorded forward");
        let dc = ops::tanh_backward(&y, grad_out);
        let da = self.head_conv.backward(&dc);
        let mut dh = self.head_bn.backward(&ops::relu_backward(&hb, &da));
        for i in (0..self.blocks.len()).rev() {
            if i == self.attention_after {
                dh = self.attention.backward(&dh);
            }
            dh = self.blocks[i].backward(&dh);
        }
        let b = dh.shape()[0];
        let flat = dh.reshape(&[b, self.input_proj.outputs()]);
        self.input_proj.backward(&flat)
    }
}

impl<T: Scalar> Module<T> for Generator<T> {
    fn visit(&mut self, prefix: &str, visitor: &mut dyn Visitor<T>) {
        self.input_proj.visit(&join(prefix, "input_proj"), visitor);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), visitor);
        }
        self.attention.visit(&join(prefix, "attention"), visitor);
        self.head_bn.visit(&join(prefix, "head_bn"), visitor);
        self.head_conv.visit(&join(prefix, "head_conv"), visitor);
    }
}
