use rand::Rng;

use crate::nn::{join, ops, BatchNorm2d, Conv2d, ConvGeometry, Mode, Module, Scalar, Tensor, Visitor};

/// Upsampling residual block of the generator.
///
/// Residual branch: BN, ReLU, 2x nearest upsample, 3x3 conv, BN, ReLU, 3x3
/// conv. Shortcut: 2x upsample then 1x1 conv. The shortcut is evaluated as
/// conv-then-upsample, which yields the same values because a pointwise
/// convolution commutes with nearest-neighbour replication.
#[derive(Debug, Clone, PartialEq)]
pub struct GenBlock<T> {
    pub bn1: BatchNorm2d<T>,
    pub conv1: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub shortcut: Conv2d<T>,
    cache: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> GenBlock<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, spectral: Option<usize>, rng: &mut R) -> Self {
        GenBlock {
            bn1: BatchNorm2d::new(inputs),
            conv1: Conv2d::new(ConvGeometry::same(inputs, outputs, 3), true, spectral, rng),
            bn2: BatchNorm2d::new(outputs),
            conv2: Conv2d::new(ConvGeometry::same(outputs, outputs, 3), true, spectral, rng),
            shortcut: Conv2d::new(ConvGeometry::same(inputs, outputs, 1), true, spectral, rng),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let h1 = self.bn1.forward(x, mode);
        let c1 = self.conv1.forward(&ops::upsample2(&ops::relu(&h1)), mode);
        let h2 = self.bn2.forward(&c1, mode);
        let mut y = self.conv2.forward(&ops::relu(&h2), mode);
        y.add_assign(&self.shortcut_forward(x, mode));
        self.cache = mode.record.then_some((h1, h2));
        y
    }

    /// Shortcut path alone.
    pub fn shortcut_forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        ops::upsample2(&self.shortcut.forward(x, mode))
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let (h1, h2) = self.cache.take().expect("gen block backward without recorded forward");
        let da2 = self.conv2.backward(grad_out);
        let dc1 = self.bn2.backward(&ops::relu_backward(&h2, &da2));
        let du = self.conv1.backward(&dc1);
        let da1 = ops::upsample2_backward(&du);
        let mut dx = self.bn1.backward(&ops::relu_backward(&h1, &da1));
        dx.add_assign(&self.shortcut.backward(&ops::upsample2_backward(grad_out)));
        dx
    }
}

impl<T: Scalar> Module<T> for GenBlock<T> {
    fn visit(&mut self, prefix: &str, visitor: &mut dyn Visitor<T>) {
        self.bn1.visit(&join(prefix, "bn1"), visitor);
        self.conv1.visit(&join(prefix, "conv1"), visitor);
        self.bn2.visit(&join(prefix, "bn2"), visitor);
        self.conv2.visit(&join(prefix, "conv2"), visitor);
        self.shortcut.visit(&join(prefix, "shortcut"), visitor);
    }
}

/// Downsampling residual block of the discriminator.
///
/// Residual branch: ReLU, 3x3 conv, ReLU, 3x3 conv, 2x2 average pool.
/// Shortcut: 1x1 conv then pool. The first block sees raw pixels, so it
/// skips the leading ReLU and pools before projecting.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscBlock<T> {
    first: bool,
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub shortcut: Conv2d<T>,
    cache: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> DiscBlock<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, first: bool, spectral: Option<usize>, rng: &mut R) -> Self {
        DiscBlock {
            first,
            conv1: Conv2d::new(ConvGeometry::same(inputs, outputs, 3), true, spectral, rng),
            conv2: Conv2d::new(ConvGeometry::same(outputs, outputs, 3), true, spectral, rng),
            shortcut: Conv2d::new(ConvGeometry::same(inputs, outputs, 1), true, spectral, rng),
            cache: None,
        }
    }

    pub fn is_first(&self) -> bool {
        self.first
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let c1 = if self.first {
            self.conv1.forward(x, mode)
        } else {
            self.conv1.forward(&ops::relu(x), mode)
        };
        let mut y = ops::avg_pool2(&self.conv2.forward(&ops::relu(&c1), mode));
        let s = if self.first {
            self.shortcut.forward(&ops::avg_pool2(x), mode)
        } else {
            ops::avg_pool2(&self.shortcut.forward(x, mode))
        };
        y.add_assign(&s);
        self.cache = mode.record.then(|| (x.clone(), c1));
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let (x, c1) = self.cache.take().expect("disc block backward without recorded forward");
        let dpool = ops::avg_pool2_backward(grad_out);
        let da1 = self.conv2.backward(&dpool);
        let dc1 = ops::relu_backward(&c1, &da1);
        let da0 = self.conv1.backward(&dc1);
        let mut dx = if self.first { da0 } else { ops::relu_backward(&x, &da0) };
        let ds = if self.first {
            ops::avg_pool2_backward(&self.shortcut.backward(grad_out))
        } else {
            self.shortcut.backward(&dpool)
        };
        dx.add_assign(&ds);
        dx
    }
}

impl<T: Scalar> Module<T> for DiscBlock<T> {
    fn visit(&mut self, prefix: &str, visitor: &mut dyn Visitor<T>) {
        self.conv1.visit(&join(prefix, "conv1"), visitor);
        self.conv2.visit(&join(prefix, "conv2"), visitor);
        self.shortcut.visit(&join(prefix, "shortcut"), visitor);
    }
}
