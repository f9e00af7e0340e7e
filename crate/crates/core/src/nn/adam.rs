use super::{Module, Param, Scalar, Tensor, Visitor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam with bias correction. Moments are keyed by parameter visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: Vec<(String, Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, moments: Vec::new() }
    }

    /// Applies one update from the accumulated gradients.
    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &mut M) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let mut updater = Updater { adam: self, index: 0, bias1, bias2 };
        module.visit("", &mut updater);
    }
}

struct Updater<'a, T> {
    adam: &'a mut Adam<T>,
    index: usize,
    bias1: f64,
    bias2: f64,
}

impl<T: Scalar> Visitor<T> for Updater<'_, T> {
    fn param(&mut self, name: &str, p: &mut Param<T>) {
        let c = self.adam.config;
        if self.index == self.adam.moments.len() {
            self.adam.moments.push((name.to_string(), Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
        }
        let (_, m, v) = &mut self.adam.moments[self.index];
        self.index += 1;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let step = T::lit(c.lr / self.bias1);
        let inv_bias2 = T::lit(1.0 / self.bias2);
        let eps = T::lit(c.eps);
        let values = p.value.data_mut().iter_mut();
        for (((w, &g), m), v) in values.zip(p.grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *w -= step * *m / ((*v * inv_bias2).sqrt() + eps);
        }
    }

    fn buffer(&mut self, _: &str, _: &mut Tensor<T>) {}
}
