use super::{join, Mode, Module, Param, Scalar, Tensor, Visitor};

const MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization with learned affine output.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    eps: f64,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone, PartialEq)]
struct BnCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self::with_eps(channels, 1e-5)
    }

    pub fn with_eps(channels: usize, eps: f64) -> Self {
        BatchNorm2d {
            gamma: Param::new(Tensor::filled(&[channels], T::one())),
            beta: Param::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            eps,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Batch statistics when training, running statistics otherwise.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let (b, c, h, w) = x.dims4();
        assert_eq!(c, self.channels(), "batch norm channel mismatch");
        let hw = h * w;
        let count = (b * hw) as f64;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        if mode.train {
            for i in 0..b {
                let xi = x.item(i);
                for ch in 0..c {
                    mean[ch] += xi[ch * hw..(ch + 1) * hw].iter().map(|v| v.as_f64()).sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for i in 0..b {
                let xi = x.item(i);
                for ch in 0..c {
                    let m = mean[ch];
                    var[ch] += xi[ch * hw..(ch + 1) * hw].iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            for ch in 0..c {
                let rm = &mut self.running_mean.data_mut()[ch];
                *rm = T::lit((1.0 - MOMENTUM) * rm.as_f64() + MOMENTUM * mean[ch]);
                let rv = &mut self.running_var.data_mut()[ch];
                *rv = T::lit((1.0 - MOMENTUM) * rv.as_f64() + MOMENTUM * var[ch] * unbias);
            }
        } else {
            for ch in 0..c {
                mean[ch] = self.running_mean.data()[ch].as_f64();
                var[ch] = self.running_var.data()[ch].as_f64();
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut normalized = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for i in 0..b {
            let xi = x.item(i);
            let ni = normalized.item_mut(i);
            for ch in 0..c {
                let (m, s) = (mean[ch], inv_std[ch]);
                for k in ch * hw..(ch + 1) * hw {
                    ni[k] = T::lit((xi[k].as_f64() - m) * s);
                }
            }
            let yi = y.item_mut(i);
            for ch in 0..c {
                let (gm, bt) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
                for k in ch * hw..(ch + 1) * hw {
                    yi[k] = normalized.item(i)[k] * gm + bt;
                }
            }
        }
        self.cache = mode.record.then(|| BnCache { normalized, inv_std, batch_stats: mode.train });
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("batch norm backward without recorded forward");
        let (b, c, h, w) = grad_out.dims4();
        let hw = h * w;
        let count = (b * hw) as f64;
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for i in 0..b {
            let gy = grad_out.item(i);
            let xn = cache.normalized.item(i);
            for ch in 0..c {
                for k in ch * hw..(ch + 1) * hw {
                    let d = gy[k].as_f64();
                    sum_dy[ch] += d;
                    sum_dy_xhat[ch] += d * xn[k].as_f64();
                }
            }
        }
        for ch in 0..c {
            self.gamma.grad.data_mut()[ch] += T::lit(sum_dy_xhat[ch]);
            self.beta.grad.data_mut()[ch] += T::lit(sum_dy[ch]);
        }
        let mut dx = Tensor::zeros(grad_out.shape());
        for i in 0..b {
            let gy = grad_out.item(i);
            let xn = cache.normalized.item(i);
            let di = dx.item_mut(i);
            for ch in 0..c {
                let gm = self.gamma.value.data()[ch].as_f64();
                let s = cache.inv_std[ch];
                for k in ch * hw..(ch + 1) * hw {
                    let d = gy[k].as_f64() * gm;
                    di[k] = if cache.batch_stats {
                        // Gradient through the batch mean and variance.
                        let mean_dxhat = sum_dy[ch] * gm / count;
                        let mean_dxhat_xhat = sum_dy_xhat[ch] * gm / count;
                        T::lit(s * (d - mean_dxhat - xn[k].as_f64() * mean_dxhat_xhat))
                    } else {
                        T::lit(s * d)
                    };
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn visit(&mut self, prefix: &str, visitor: &mut dyn Visitor<T>) {
        visitor.param(&join(prefix, "gamma"), &mut self.gamma);
        visitor.param(&join(prefix, "beta"), &mut self.beta);
        visitor.buffer(&join(prefix, "running_mean"), &mut self.running_mean);
        visitor.buffer(&join(prefix, "running_var"), &mut self.running_var);
    }
}
