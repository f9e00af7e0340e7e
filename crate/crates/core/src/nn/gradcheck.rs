//! Central finite-difference checks shared by layer tests.

use super::{Module, Param, Tensor, Visitor};

pub const STEP: f64 = 1e-5;

/// Relative error `|a - b| / max(|a|, |b|, 1e-4)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Finite-difference gradient of `f` with respect to every element of `x`.
pub fn numeric_input_grad(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[k] += STEP;
        let mut xm = x.clone();
        xm.data_mut()[k] -= STEP;
        out.push((f(&xp) - f(&xm)) / (2.0 * STEP));
    }
    out
}

/// Flattened parameter gradients, in visit order.
pub fn analytic_param_grads<M: Module<f64>>(m: &mut M) -> Vec<f64> {
    struct G(Vec<f64>);
    impl Visitor<f64> for G {
        fn param(&mut self, _: &str, p: &mut Param<f64>) {
            self.0.extend_from_slice(p.grad.data());
        }
        fn buffer(&mut self, _: &str, _: &mut Tensor<f64>) {}
    }
    let mut g = G(Vec::new());
    m.visit("", &mut g);
    g.0
}

/// Nudges the `index`-th trainable scalar (visit order) by `delta`.
pub fn perturb_param<M: Module<f64>>(m: &mut M, index: usize, delta: f64) {
    struct P {
        target: usize,
        seen: usize,
        delta: f64,
    }
    impl Visitor<f64> for P {
        fn param(&mut self, _: &str, p: &mut Param<f64>) {
            let n = p.len();
            if self.target >= self.seen && self.target < self.seen + n {
                p.value.data_mut()[self.target - self.seen] += self.delta;
            }
            self.seen += n;
        }
        fn buffer(&mut self, _: &str, _: &mut Tensor<f64>) {}
    }
    m.visit("", &mut P { target: index, seen: 0, delta });
}

/// Finite-difference gradients for every trainable scalar of `m`.
pub fn numeric_param_grads<M: Module<f64>>(m: &mut M, mut loss: impl FnMut(&mut M) -> f64) -> Vec<f64> {
    let n = m.num_params();
    (0..n)
        .map(|k| {
            perturb_param(m, k, STEP);
            let up = loss(m);
            perturb_param(m, k, -2.0 * STEP);
            let down = loss(m);
            perturb_param(m, k, STEP);
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

pub fn assert_close(analytic: &[f64], numeric: &[f64], tol: f64, what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length mismatch");
    for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_err(*a, *n);
        assert!(e < tol, "{what}[{k}]: analytic {a} vs numeric {n} (rel err {e})");
    }
}
