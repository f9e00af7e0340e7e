use rand::Rng;

use super::linear::NormedWeight;
use super::{gemm, join, Mode, Module, Param, Scalar, SpectralNorm, Tensor, Visitor};

/// Kernel geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: (usize, usize),
}

impl ConvGeometry {
    /// Square kernel, stride 1, "same" padding.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvGeometry {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: 1,
            padding: (kernel / 2, kernel / 2),
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let (kh, kw) = self.kernel;
        let (ph, pw) = self.padding;
        assert!(h + 2 * ph >= kh && w + 2 * pw >= kw, "input smaller than kernel");
        ((h + 2 * ph - kh) / self.stride + 1, (w + 2 * pw - kw) / self.stride + 1)
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == 1 && self.padding == (0, 0)
    }

    /// Unfolds one `(C, H, W)` image into a `(C*kh*kw, Ho*Wo)` patch matrix.
    fn im2col<T: Scalar>(&self, x: &[T], h: usize, w: usize, col: &mut [T]) {
        let (ho, wo) = self.output_size(h, w);
        let (kh, kw) = self.kernel;
        let (ph, pw) = (self.padding.0 as isize, self.padding.1 as isize);
        let s = self.stride as isize;
        let n = ho * wo;
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = ((c * kh + ki) * kw + kj) * n;
                    let dst = &mut col[row..row + n];
                    for oy in 0..ho {
                        let iy = oy as isize * s + ki as isize - ph;
                        let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            out_row.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let (lo, hi) = valid_range(kj as isize - pw, s, w, wo);
                        out_row[..lo].iter_mut().for_each(|v| *v = T::zero());
                        out_row[hi..].iter_mut().for_each(|v| *v = T::zero());
                        let first = (lo as isize * s + kj as isize - pw) as usize;
                        if s == 1 {
                            out_row[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (v, &x) in out_row[lo..hi].iter_mut().zip(src[first..].iter().step_by(s as usize)) {
                                *v = x;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeometry::im2col`]: scatters patch gradients back.
    fn col2im<T: Scalar>(&self, col: &[T], h: usize, w: usize, dx: &mut [T]) {
        let (ho, wo) = self.output_size(h, w);
        let (kh, kw) = self.kernel;
        let (ph, pw) = (self.padding.0 as isize, self.padding.1 as isize);
        let s = self.stride as isize;
        let n = ho * wo;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = ((c * kh + ki) * kw + kj) * n;
                    let src = &col[row..row + n];
                    for oy in 0..ho {
                        let iy = oy as isize * s + ki as isize - ph;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let (lo, hi) = valid_range(kj as isize - pw, s, w, wo);
                        let first = (lo as isize * s + kj as isize - pw) as usize;
                        let grads = &src[oy * wo + lo..oy * wo + hi];
                        if s == 1 {
                            for (d, &g) in dst[first..first + hi - lo].iter_mut().zip(grads) {
                                *d += g;
                            }
                        } else {
                            for (d, &g) in dst[first..].iter_mut().step_by(s as usize).zip(grads) {
                                *d += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `[lo, hi)` whose input column `ox * stride + offset` lies in `[0, w)`.
fn valid_range(offset: isize, stride: isize, w: usize, wo: usize) -> (usize, usize) {
    let ceil_div = |a: isize, b: isize| if a >= 0 { (a + b - 1) / b } else { a / b };
    let lo = ceil_div(-offset, stride).clamp(0, wo as isize);
    let hi = ceil_div(w as isize - offset, stride).clamp(lo, wo as isize);
    (lo as usize, hi as usize)
}

/// 2-D convolution over `(batch, channels, height, width)` tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub geometry: ConvGeometry,
    pub(crate) w: NormedWeight<T>,
    pub bias: Option<Param<T>>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Orthogonal weight (viewed as `out x in*kh*kw`), zero bias.
    pub fn new<R: Rng + ?Sized>(geometry: ConvGeometry, bias: bool, spectral: Option<usize>, rng: &mut R) -> Self {
        let g = geometry;
        let shape = [g.out_channels, g.in_channels, g.kernel.0, g.kernel.1];
        Conv2d {
            geometry,
            w: NormedWeight::new(g.out_channels, g.patch_len(), &shape, spectral, rng),
            bias: bias.then(|| Param::zeros(&[g.out_channels])),
            input: None,
        }
    }

    /// Convolution with given weights and no spectral normalization.
    pub fn from_weights<R: Rng + ?Sized>(geometry: ConvGeometry, weight: Vec<T>, bias: Option<Vec<T>>, rng: &mut R) -> Self {
        let g = geometry;
        let shape = [g.out_channels, g.in_channels, g.kernel.0, g.kernel.1];
        Conv2d {
            geometry,
            w: NormedWeight::from_values(g.out_channels, g.patch_len(), &shape, weight, None, rng),
            bias: bias.map(|b| Param::new(Tensor::from_vec(&[g.out_channels], b))),
            input: None,
        }
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

    /// The weight actually applied in the last forward pass.
    pub fn effective_weight(&self) -> &[T] {
        self.w.cached()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let g = self.geometry;
        let (b, c, h, w) = x.dims4();
        assert_eq!(c, g.in_channels, "conv input channel mismatch");
        let (ho, wo) = g.output_size(h, w);
        let n = ho * wo;
        let k = g.patch_len();
        let oc = g.out_channels;
        let weight = self.w.effective(mode).to_vec();
        let mut y = Tensor::zeros(&[b, oc, ho, wo]);
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * n] };
        for i in 0..b {
            let xi = x.item(i);
            let patches: &[T] = if g.is_pointwise() {
                xi
            } else {
                g.im2col(xi, h, w, &mut col);
                &col
            };
            let yi = y.item_mut(i);
            gemm(false, false, oc, n, k, T::one(), &weight, patches, T::zero(), yi);
            if let Some(bias) = &self.bias {
                for (o, &bv) in bias.value.data().iter().enumerate() {
                    yi[o * n..(o + 1) * n].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        self.input = mode.record.then(|| x.clone());
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let g = self.geometry;
        let x = self.input.take().expect("conv backward without recorded forward");
        let (b, c, h, w) = x.dims4();
        let (ho, wo) = g.output_size(h, w);
        let n = ho * wo;
        let k = g.patch_len();
        let oc = g.out_channels;
        let weight = self.w.cached().to_vec();
        let mut grad_w = vec![T::zero(); oc * k];
        let mut dx = Tensor::zeros(&[b, c, h, w]);
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * n] };
        let mut dcol = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * n] };
        for i in 0..b {
            let gy = grad_out.item(i);
            if g.is_pointwise() {
                gemm(false, true, oc, k, n, T::one(), gy, x.item(i), T::one(), &mut grad_w);
                gemm(true, false, k, n, oc, T::one(), &weight, gy, T::zero(), dx.item_mut(i));
            } else {
                g.im2col(x.item(i), h, w, &mut col);
                gemm(false, true, oc, k, n, T::one(), gy, &col, T::one(), &mut grad_w);
                gemm(true, false, k, n, oc, T::one(), &weight, gy, T::zero(), &mut dcol);
                g.col2im(&dcol, h, w, dx.item_mut(i));
            }
        }
        self.w.backward(&grad_w);
        if let Some(bias) = &mut self.bias {
            let gb = bias.grad.data_mut();
            for i in 0..b {
                let gy = grad_out.item(i);
                for (o, acc) in gb.iter_mut().enumerate() {
                    *acc += gy[o * n..(o + 1) * n].iter().copied().sum::<T>();
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit(&mut self, prefix: &str, visitor: &mut dyn Visitor<T>) {
        self.w.visit(prefix, visitor);
        if let Some(b) = &mut self.bias {
            visitor.param(&join(prefix, "bias"), b);
        }
    }
}
