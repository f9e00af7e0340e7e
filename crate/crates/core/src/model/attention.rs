use rand::Rng;

use super::ModelError;
use crate::nn::{dot, gemm, join, max, sum, Conv2d, ConvGeometry, Mode, Module, Param, Scalar, Tensor, Visitor};

/// Gated self-attention over all spatial positions of a feature map.
///
/// `y = gamma * W_o (V softmax(Q^T K)^T) + x`, with query and key projected
/// to `C / 8` channels and value to `C`. `gamma` starts at zero, so a fresh
/// layer is the identity map.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention<T> {
    channels: usize,
    pub query: Conv2d<T>,
    pub key: Conv2d<T>,
    pub value: Conv2d<T>,
    pub output: Conv2d<T>,
    pub gamma: Param<T>,
    cache: Option<AttentionCache<T>>,
    spare: Scratch<T>,
}

/// Attention maps are large (`B * N^2`); reusing the allocation across steps
/// avoids paging in fresh memory every call. Not part of the layer's state.
#[derive(Default)]
struct Scratch<T>(Vec<T>);

impl<T> Clone for Scratch<T> {
    fn clone(&self) -> Self {
        Scratch(Vec::new())
    }
}

impl<T> PartialEq for Scratch<T> {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl<T> std::fmt::Debug for Scratch<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Scratch({})", self.0.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct AttentionCache<T> {
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    attn: Vec<T>,
    projected: Tensor<T>,
}

impl<T: Scalar> SelfAttention<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, spectral: Option<usize>, rng: &mut R) -> Result<Self, ModelError> {
        if channels == 0 || channels % 8 != 0 {
            return Err(ModelError::ChannelMismatch { channels });
        }
        let inner = channels / 8;
        Ok(SelfAttention {
            channels,
            query: Conv2d::new(ConvGeometry::same(channels, inner, 1), false, spectral, rng),
            key: Conv2d::new(ConvGeometry::same(channels, inner, 1), false, spectral, rng),
            value: Conv2d::new(ConvGeometry::same(channels, channels, 1), false, spectral, rng),
            output: Conv2d::new(ConvGeometry::same(channels, channels, 1), false, spectral, rng),
            gamma: Param::zeros(&[1]),
            cache: None,
            spare: Scratch(Vec::new()),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn gamma(&self) -> T {
        self.gamma.value.data()[0]
    }

    fn check(&self, x: &Tensor<T>) -> Result<(), ModelError> {
        if x.shape().len() != 4 || x.shape()[1] != self.channels {
            return Err(ModelError::ShapeMismatch {
                expected: format!("(B, {}, H, W)", self.channels),
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Row-stochastic attention matrices `(B, N, N)`, `N = H * W`; row `i`
    /// holds the weights query position `i` puts on every key position.
    pub fn attention_maps(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        self.check(x)?;
        let (b, _, h, w) = x.dims4();
        let n = h * w;
        let q = self.query.forward(x, Mode::EVAL);
        let k = self.key.forward(x, Mode::EVAL);
        let attn = self.scores(&q, &k, b, n, Vec::new());
        Ok(Tensor::from_vec(&[b, n, n], attn))
    }

    fn scores(&self, q: &Tensor<T>, k: &Tensor<T>, b: usize, n: usize, mut attn: Vec<T>) -> Vec<T> {
        let inner = self.channels / 8;
        attn.resize(b * n * n, T::zero());
        for i in 0..b {
            let a = &mut attn[i * n * n..(i + 1) * n * n];
            gemm(true, false, n, n, inner, T::one(), q.item(i), k.item(i), T::zero(), a);
            a.chunks_mut(n).for_each(softmax_row);
        }
        attn
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, ModelError> {
        self.check(x)?;
        let (b, c, h, w) = x.dims4();
        let n = h * w;
        let q = self.query.forward(x, mode);
        let k = self.key.forward(x, mode);
        let v = self.value.forward(x, mode);
        let spare = std::mem::take(&mut self.spare.0);
        let attn = self.scores(&q, &k, b, n, spare);
        let mut mixed = Tensor::zeros(&[b, c, h, w]);
        for i in 0..b {
            let a = &attn[i * n * n..(i + 1) * n * n];
            gemm(false, true, c, n, n, T::one(), v.item(i), a, T::zero(), mixed.item_mut(i));
        }
        let projected = self.output.forward(&mixed, mode);
        let gamma = self.gamma();
        let mut y = x.clone();
        for (yv, &p) in y.data_mut().iter_mut().zip(projected.data()) {
            *yv += gamma * p;
        }
        if mode.record {
            self.cache = Some(AttentionCache { q, k, v, attn, projected });
        } else {
            self.spare.0 = attn;
        }
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("attention backward without recorded forward");
        let (b, c, h, w) = grad_out.dims4();
        let n = h * w;
        let inner = self.channels / 8;
        let gamma = self.gamma();
        let dgamma: T = grad_out.data().iter().zip(cache.projected.data()).map(|(&g, &p)| g * p).sum();
        self.gamma.grad.data_mut()[0] += dgamma;

        let d_projected = grad_out.map(|g| g * gamma);
        let d_mixed = self.output.backward(&d_projected);
        let mut dq = Tensor::zeros(&[b, inner, h, w]);
        let mut dk = Tensor::zeros(&[b, inner, h, w]);
        let mut dv = Tensor::zeros(&[b, c, h, w]);
        let mut ds = vec![T::zero(); n * n];
        for i in 0..b {
            let a = &cache.attn[i * n * n..(i + 1) * n * n];
            let dm = d_mixed.item(i);
            let (v, q, k) = (cache.v.item(i), cache.q.item(i), cache.k.item(i));
            gemm(false, false, c, n, n, T::one(), dm, a, T::zero(), dv.item_mut(i));
            // dA = dM^T V, then the row-wise softmax adjoint gives dS.
            gemm(true, false, n, n, c, T::one(), dm, v, T::zero(), &mut ds);
            for (drow, arow) in ds.chunks_mut(n).zip(a.chunks(n)) {
                let inner_dot = dot(drow, arow);
                for (d, &p) in drow.iter_mut().zip(arow) {
                    *d = p * (*d - inner_dot);
                }
            }
            gemm(false, true, inner, n, n, T::one(), k, &ds, T::zero(), dq.item_mut(i));
            gemm(false, false, inner, n, n, T::one(), q, &ds, T::zero(), dk.item_mut(i));
        }
        self.spare.0 = cache.attn;
        let mut dx = grad_out.clone();
        dx.add_assign(&self.query.backward(&dq));
        dx.add_assign(&self.key.backward(&dk));
        dx.add_assign(&self.value.backward(&dv));
        dx
    }
}

/// In-place softmax of one row of scores.
fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = max(row);
    row.iter_mut().for_each(|v| *v -= max);
    T::exp_slice(row);
    let inv = T::one() / sum(row);
    row.iter_mut().for_each(|v| *v *= inv);
}

impl<T: Scalar> Module<T> for SelfAttention<T> {
    fn visit(&mut self, prefix: &str, visitor: &mut dyn Visitor<T>) {
        self.query.visit(&join(prefix, "query"), visitor);
        self.key.visit(&join(prefix, "key"), visitor);
        self.value.visit(&join(prefix, "value"), visitor);
        self.output.visit(&join(prefix, "output"), visitor);
        visitor.param(&join(prefix, "gamma"), &mut self.gamma);
    }
}
