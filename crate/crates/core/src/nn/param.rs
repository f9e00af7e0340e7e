use super::{Scalar, Tensor};

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Param::new(Tensor::zeros(shape))
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Walks the named tensors of a module tree.
pub trait Visitor<T> {
    fn param(&mut self, name: &str, param: &mut Param<T>);

    /// Non-trainable state: normalization statistics and power-iteration vectors.
    fn buffer(&mut self, name: &str, buffer: &mut Tensor<T>);
}

pub trait Module<T: Scalar> {
    fn visit(&mut self, prefix: &str, visitor: &mut dyn Visitor<T>);

    fn zero_grad(&mut self) {
        struct Z;
        impl<T: Scalar> Visitor<T> for Z {
            fn param(&mut self, _: &str, p: &mut Param<T>) {
                p.zero_grad();
            }
            fn buffer(&mut self, _: &str, _: &mut Tensor<T>) {}
        }
        self.visit("", &mut Z);
    }

    /// Number of trainable scalars.
    fn num_params(&mut self) -> usize {
        struct Count(usize);
        impl<T: Scalar> Visitor<T> for Count {
            fn param(&mut self, _: &str, p: &mut Param<T>) {
                self.0 += p.len();
            }
            fn buffer(&mut self, _: &str, _: &mut Tensor<T>) {}
        }
        let mut c = Count(0);
        self.visit("", &mut c);
        c.0
    }

    /// Copies of all trainable values, in visit order.
    fn param_values(&mut self) -> Vec<(String, Tensor<T>)> {
        struct Collect<T>(Vec<(String, Tensor<T>)>);
        impl<T: Scalar> Visitor<T> for Collect<T> {
            fn param(&mut self, name: &str, p: &mut Param<T>) {
                self.0.push((name.to_string(), p.value.clone()));
            }
            fn buffer(&mut self, _: &str, _: &mut Tensor<T>) {}
        }
        let mut c = Collect(Vec::new());
        self.visit("", &mut c);
        c.0
    }
}

/// Dotted child name.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
