//! Parameter-free tensor operations with their adjoints.

use super::{Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU given the forward input.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Gradient of tanh given the forward output.
pub fn tanh_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * (T::one() - y * y))
        .collect();
    Tensor::from_vec(output.shape(), data)
}

/// 2x nearest-neighbour upsampling.
pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    let (h2, w2) = (2 * h, 2 * w);
    let mut y = Tensor::zeros(&[b, c, h2, w2]);
    for (src, dst) in x.data().chunks(h * w).zip(y.data_mut().chunks_mut(h2 * w2)) {
        for yy in 0..h2 {
            let srow = &src[(yy / 2) * w..(yy / 2 + 1) * w];
            let drow = &mut dst[yy * w2..(yy + 1) * w2];
            for (xx, v) in drow.iter_mut().enumerate() {
                *v = srow[xx / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward<T: Scalar>(grad_out: &Tensor<T>) -> Tensor<T> {
    let (b, c, h2, w2) = grad_out.dims4();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(&[b, c, h, w]);
    for (src, dst) in grad_out.data().chunks(h2 * w2).zip(dx.data_mut().chunks_mut(h * w)) {
        for yy in 0..h2 {
            for xx in 0..w2 {
                dst[(yy / 2) * w + xx / 2] += src[yy * w2 + xx];
            }
        }
    }
    dx
}

/// 2x2 average pooling with stride 2.
pub fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    let (h2, w2) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut y = Tensor::zeros(&[b, c, h2, w2]);
    for (src, dst) in x.data().chunks(h * w).zip(y.data_mut().chunks_mut(h2 * w2)) {
        for yy in 0..h2 {
            for xx in 0..w2 {
                let i = 2 * yy * w + 2 * xx;
                dst[yy * w2 + xx] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
            }
        }
    }
    y
}

pub fn avg_pool2_backward<T: Scalar>(grad_out: &Tensor<T>) -> Tensor<T> {
    let (b, c, h2, w2) = grad_out.dims4();
    let (h, w) = (2 * h2, 2 * w2);
    let quarter = T::lit(0.25);
    let mut dx = Tensor::zeros(&[b, c, h, w]);
    for (src, dst) in grad_out.data().chunks(h2 * w2).zip(dx.data_mut().chunks_mut(h * w)) {
        for yy in 0..h2 {
            for xx in 0..w2 {
                let g = src[yy * w2 + xx] * quarter;
                let i = 2 * yy * w + 2 * xx;
                dst[i] = g;
                dst[i + 1] = g;
                dst[i + w] = g;
                dst[i + w + 1] = g;
            }
        }
    }
    dx
}

/// Sums each channel over its spatial extent: `(B, C, H, W) -> (B, C)`.
pub fn global_sum_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    let data = x.data().chunks(h * w).map(|p| p.iter().copied().sum()).collect();
    Tensor::from_vec(&[b, c], data)
}

pub fn global_sum_pool_backward<T: Scalar>(grad_out: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (b, c) = (grad_out.shape()[0], grad_out.shape()[1]);
    let mut dx = Tensor::zeros(&[b, c, h, w]);
    for (plane, &g) in dx.data_mut().chunks_mut(h * w).zip(grad_out.data()) {
        plane.iter_mut().for_each(|v| *v = g);
    }
    dx
}

/// `(B, C, H, W) -> (B, C)` spatial mean.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (_, _, h, w) = x.dims4();
    let scale = T::lit(1.0 / (h * w) as f64);
    global_sum_pool(x).map(|v| v * scale)
}

/// Max pooling with a square window and no padding.
pub fn max_pool<T: Scalar>(x: &Tensor<T>, window: usize, stride: usize) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    let ho = (h - window) / stride + 1;
    let wo = (w - window) / stride + 1;
    let mut y = Tensor::zeros(&[b, c, ho, wo]);
    for (src, dst) in x.data().chunks(h * w).zip(y.data_mut().chunks_mut(ho * wo)) {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut m = T::neg_infinity();
                for i in 0..window {
                    for j in 0..window {
                        m = m.max(src[(oy * stride + i) * w + ox * stride + j]);
                    }
                }
                dst[oy * wo + ox] = m;
            }
        }
    }
    y
}

/// Average pooling, stride 1, zero padding counted in the divisor.
pub fn avg_pool_same<T: Scalar>(x: &Tensor<T>, window: usize) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    let pad = (window / 2) as isize;
    let norm = T::lit(1.0 / (window * window) as f64);
    let mut y = Tensor::zeros(&[b, c, h, w]);
    for (src, dst) in x.data().chunks(h * w).zip(y.data_mut().chunks_mut(h * w)) {
        for oy in 0..h as isize {
            for ox in 0..w as isize {
                let mut s = T::zero();
                for iy in (oy - pad).max(0)..(oy + pad + 1).min(h as isize) {
                    for ix in (ox - pad).max(0)..(ox + pad + 1).min(w as isize) {
                        s += src[iy as usize * w + ix as usize];
                    }
                }
                dst[oy as usize * w + ox as usize] = s * norm;
            }
        }
    }
    y
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (b, c, h, w) = x.dims4();
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(inp - 1);
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ty = taps(out_h, h);
    let tx = taps(out_w, w);
    let mut y = Tensor::zeros(&[b, c, out_h, out_w]);
    for (src, dst) in x.data().chunks(h * w).zip(y.data_mut().chunks_mut(out_h * out_w)) {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = (1.0 - fy) * ((1.0 - fx) * src[y0 * w + x0].as_f64() + fx * src[y0 * w + x1].as_f64())
                    + fy * ((1.0 - fx) * src[y1 * w + x0].as_f64() + fx * src[y1 * w + x1].as_f64());
                dst[oy * out_w + ox] = T::lit(v);
            }
        }
    }
    y
}

/// Concatenate rank-4 tensors along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[Tensor<T>]) -> Tensor<T> {
    let (b, _, h, w) = parts[0].dims4();
    let total: usize = parts.iter().map(|p| p.dims4().1).sum();
    let mut data = Vec::with_capacity(b * total * h * w);
    for i in 0..b {
        for p in parts {
            assert_eq!((p.dims4().0, p.dims4().2, p.dims4().3), (b, h, w), "concat spatial mismatch");
            data.extend_from_slice(p.item(i));
        }
    }
    Tensor::from_vec(&[b, total, h, w], data)
}
