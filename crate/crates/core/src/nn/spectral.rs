use rand::Rng;

use super::{gemm, init, join, Scalar, Tensor, Visitor};

const SIGMA_EPS: f64 = 1e-12;
const WARMUP_ITERATIONS: usize = 15;

/// Power-iteration state for dividing a weight matrix by its largest
/// singular value.
///
/// The weight is viewed as `rows x cols` with `rows` the output dimension.
/// The backward pass treats `u` and `v` as constants.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralNorm<T> {
    rows: usize,
    cols: usize,
    pub u: Tensor<T>,
    pub v: Tensor<T>,
    pub power_iterations: usize,
    sigma: T,
}

impl<T: Scalar> SpectralNorm<T> {
    /// Random `u`, followed by warm-up iterations against `weight`.
    pub fn new<R: Rng + ?Sized>(weight: &[T], rows: usize, cols: usize, power_iterations: usize, rng: &mut R) -> Self {
        let mut sn = SpectralNorm {
            rows,
            cols,
            u: Tensor::from_vec(&[rows], init::random_unit(rows, rng)),
            v: Tensor::zeros(&[cols]),
            power_iterations,
            sigma: T::one(),
        };
        sn.iterate(weight, WARMUP_ITERATIONS);
        sn.sigma = sn.estimate(weight);
        sn
    }

    fn iterate(&mut self, weight: &[T], steps: usize) {
        let (rows, cols) = (self.rows, self.cols);
        for _ in 0..steps {
            // v = normalize(W^T u)
            gemm(true, false, cols, 1, rows, T::one(), weight, self.u.data(), T::zero(), self.v.data_mut());
            normalize(self.v.data_mut());
            // u = normalize(W v)
            gemm(false, false, rows, 1, cols, T::one(), weight, self.v.data(), T::zero(), self.u.data_mut());
            normalize(self.u.data_mut());
        }
    }

    fn estimate(&self, weight: &[T]) -> T {
        let mut wv = vec![T::zero(); self.rows];
        gemm(false, false, self.rows, 1, self.cols, T::one(), weight, self.v.data(), T::zero(), &mut wv);
        wv.iter().zip(self.u.data()).map(|(&a, &b)| a * b).sum()
    }

    /// Current spectral estimate; updated by [`SpectralNorm::normalize_weight`].
    pub fn sigma(&self) -> T {
        self.sigma
    }

    /// Returns `weight / sigma`, first advancing the power iteration when
    /// `update` is set.
    pub fn normalize_weight(&mut self, weight: &[T], update: bool) -> Vec<T> {
        assert_eq!(weight.len(), self.rows * self.cols);
        if update {
            self.iterate(weight, self.power_iterations);
        }
        self.sigma = self.estimate(weight);
        let denom = self.sigma.max(T::lit(SIGMA_EPS));
        weight.iter().map(|&w| w / denom).collect()
    }

    /// Maps the gradient w.r.t. the normalized weight onto the raw weight and
    /// accumulates it into `grad`.
    pub fn backward(&self, grad_normalized: &[T], normalized: &[T], grad: &mut [T]) {
        let clamped = self.sigma < T::lit(SIGMA_EPS);
        let denom = self.sigma.max(T::lit(SIGMA_EPS));
        let inner: T = if clamped {
            T::zero()
        } else {
            grad_normalized.iter().zip(normalized).map(|(&g, &w)| g * w).sum()
        };
        let (u, v) = (self.u.data(), self.v.data());
        for i in 0..self.rows {
            let coef = inner * u[i];
            let row = i * self.cols;
            for j in 0..self.cols {
                grad[row + j] += (grad_normalized[row + j] - coef * v[j]) / denom;
            }
        }
    }

    pub fn visit(&mut self, prefix: &str, visitor: &mut dyn Visitor<T>) {
        visitor.buffer(&join(prefix, "sn_u"), &mut self.u);
        visitor.buffer(&join(prefix, "sn_v"), &mut self.v);
    }
}

fn normalize<T: Scalar>(x: &mut [T]) {
    let norm = x.iter().map(|&a| a * a).sum::<T>().sqrt().max(T::lit(SIGMA_EPS));
    x.iter_mut().for_each(|a| *a /= norm);
}
