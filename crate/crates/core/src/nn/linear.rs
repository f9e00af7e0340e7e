use rand::Rng;

use super::{gemm, init, join, Mode, Module, Param, Scalar, SpectralNorm, Tensor, Visitor};

/// Effective weight plus the spectral-norm bookkeeping needed to route its
/// gradient back to the raw weight.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NormedWeight<T> {
    pub weight: Param<T>,
    pub sn: Option<SpectralNorm<T>>,
    rows: usize,
    cols: usize,
    effective: Option<Vec<T>>,
}

impl<T: Scalar> NormedWeight<T> {
    pub fn new<R: Rng + ?Sized>(rows: usize, cols: usize, shape: &[usize], spectral: Option<usize>, rng: &mut R) -> Self {
        let values = init::orthogonal(rows, cols, rng);
        Self::from_values(rows, cols, shape, values, spectral, rng)
    }

    pub fn from_values<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        shape: &[usize],
        values: Vec<T>,
        spectral: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let weight = Param::new(Tensor::from_vec(shape, values));
        let sn = spectral.map(|iters| SpectralNorm::new(weight.value.data(), rows, cols, iters, rng));
        NormedWeight { weight, sn, rows, cols, effective: None }
    }

    /// Computes and caches the effective weight for this forward pass.
    pub fn effective(&mut self, mode: Mode) -> &[T] {
        let eff = match &mut self.sn {
            Some(sn) => sn.normalize_weight(self.weight.value.data(), mode.train),
            None => self.weight.value.data().to_vec(),
        };
        self.effective = Some(eff);
        self.effective.as_deref().expect("just set")
    }

    pub fn cached(&self) -> &[T] {
        self.effective.as_deref().expect("backward called before forward")
    }

    /// Accumulates `grad_effective` into the raw weight gradient.
    pub fn backward(&mut self, grad_effective: &[T]) {
        match &self.sn {
            Some(sn) => {
                let eff = self.effective.as_deref().expect("backward called before forward");
                sn.backward(grad_effective, eff, self.weight.grad.data_mut());
            }
            None => {
                for (g, &d) in self.weight.grad.data_mut().iter_mut().zip(grad_effective) {
                    *g += d;
                }
            }
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn visit(&mut self, prefix: &str, visitor: &mut dyn Visitor<T>) {
        visitor.param(&join(prefix, "weight"), &mut self.weight);
        if let Some(sn) = &mut self.sn {
            sn.visit(prefix, visitor);
        }
    }
}

/// Fully connected layer `y = x W^T + b` on `(batch, in)` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub(crate) w: NormedWeight<T>,
    pub bias: Option<Param<T>>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    /// Orthogonal weight, zero bias. `spectral` gives the power iterations
    /// per training forward when spectral normalization is enabled.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, bias: bool, spectral: Option<usize>, rng: &mut R) -> Self {
        Dense {
            w: NormedWeight::new(outputs, inputs, &[outputs, inputs], spectral, rng),
            bias: bias.then(|| Param::zeros(&[outputs])),
            input: None,
        }
    }

    /// Layer with explicit weights, no spectral normalization.
    pub fn from_weights<R: Rng + ?Sized>(inputs: usize, outputs: usize, weight: Vec<T>, bias: Option<Vec<T>>, rng: &mut R) -> Self {
        Dense {
            w: NormedWeight::from_values(outputs, inputs, &[outputs, inputs], weight, None, rng),
            bias: bias.map(|b| Param::new(Tensor::from_vec(&[outputs], b))),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.dims().1
    }

    pub fn outputs(&self) -> usize {
        self.w.dims().0
    }

    pub fn weight(&self) -> &Param<T> {
        &self.w.weight
    }

    pub fn weight_mut(&mut self) -> &mut Param<T> {
        &mut self.w.weight
    }

    pub fn spectral_norm(&self) -> Option<&SpectralNorm<T>> {
        self.w.sn.as_ref()
    }

    pub fn spectral_norm_mut(&mut self) -> Option<&mut SpectralNorm<T>> {
        self.w.sn.as_mut()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let (outs, ins) = self.w.dims();
        assert_eq!(x.shape().len(), 2, "dense input must be (batch, features)");
        assert_eq!(x.shape()[1], ins, "dense input width mismatch");
        let batch = x.shape()[0];
        let mut y = Tensor::zeros(&[batch, outs]);
        let w = self.w.effective(mode);
        gemm(false, true, batch, outs, ins, T::one(), x.data(), w, T::zero(), y.data_mut());
        if let Some(b) = &self.bias {
            for row in y.data_mut().chunks_mut(outs) {
                for (v, &bb) in row.iter_mut().zip(b.value.data()) {
                    *v += bb;
                }
            }
        }
        self.input = mode.record.then(|| x.clone());
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let (outs, ins) = self.w.dims();
        let x = self.input.take().expect("dense backward without recorded forward");
        let batch = x.shape()[0];
        let mut grad_w = vec![T::zero(); outs * ins];
        gemm(true, false, outs, ins, batch, T::one(), grad_out.data(), x.data(), T::zero(), &mut grad_w);
        self.w.backward(&grad_w);
        if let Some(b) = &mut self.bias {
            let g = b.grad.data_mut();
            for row in grad_out.data().chunks(outs) {
                for (gb, &r) in g.iter_mut().zip(row) {
                    *gb += r;
                }
            }
        }
        let mut dx = Tensor::zeros(&[batch, ins]);
        gemm(false, false, batch, ins, outs, T::one(), grad_out.data(), self.w.cached(), T::zero(), dx.data_mut());
        dx
    }
}

impl<T: Scalar> Module<T> for Dense<T> {
    fn visit(&mut self, prefix: &str, visitor: &mut dyn Visitor<T>) {
        self.w.visit(prefix, visitor);
        if let Some(b) = &mut self.bias {
            visitor.param(&join(prefix, "bias"), b);
        }
    }
}
