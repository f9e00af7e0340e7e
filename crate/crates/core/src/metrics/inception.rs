use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::{Dtype, SafeTensors};
use sha2::{Digest, Sha256};

use super::extractor::softmax;
use super::{Extracted, FeatureExtractor, MetricsError};
use crate::nn::{gemm, ops, Conv2d, ConvGeometry, Mode, Tensor};

/// Environment variable naming the reference extractor's weights file.
pub const WEIGHTS_ENV: &str = "SYNTHFORGE_EXTRACTOR_WEIGHTS";

const INPUT_SIZE: usize = 299;
const BN_EPS: f64 = 1e-3;
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

struct Weights<'a> {
    file: SafeTensors<'a>,
}

impl Weights<'_> {
    fn get(&self, name: &str, shape: &[usize]) -> Result<Vec<f32>, MetricsError> {
        let t = self.file.tensor(name).map_err(|e| MetricsError::Weights(format!("{name}: {e}")))?;
        if t.shape() != shape {
            return Err(MetricsError::Weights(format!("{name}: shape {:?}, expected {shape:?}", t.shape())));
        }
        let bytes = t.data();
        let values = match t.dtype() {
            Dtype::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
            Dtype::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as f32)
                .collect(),
            other => return Err(MetricsError::Weights(format!("{name}: unsupported dtype {other:?}"))),
        };
        Ok(values)
    }
}

/// Convolution followed by inference-mode batch norm and ReLU. The norm is
/// folded into the convolution weights at load time.
struct BasicConv {
    conv: Conv2d<f32>,
}

impl BasicConv {
    fn load(
        w: &Weights,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
    ) -> Result<Self, MetricsError> {
        let mut weight = w.get(&format!("{name}.conv.weight"), &[outputs, inputs, kernel.0, kernel.1])?;
        let gamma = w.get(&format!("{name}.bn.weight"), &[outputs])?;
        let beta = w.get(&format!("{name}.bn.bias"), &[outputs])?;
        let mean = w.get(&format!("{name}.bn.running_mean"), &[outputs])?;
        let var = w.get(&format!("{name}.bn.running_var"), &[outputs])?;
        let per_out = inputs * kernel.0 * kernel.1;
        let mut bias = vec![0.0f32; outputs];
        for o in 0..outputs {
            let scale = gamma[o] as f64 / (var[o] as f64 + BN_EPS).sqrt();
            weight[o * per_out..(o + 1) * per_out].iter_mut().for_each(|v| *v = (*v as f64 * scale) as f32);
            bias[o] = (beta[o] as f64 - mean[o] as f64 * scale) as f32;
        }
        let geometry = ConvGeometry { in_channels: inputs, out_channels: outputs, kernel, stride, padding };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(BasicConv { conv: Conv2d::from_weights(geometry, weight, Some(bias), &mut rng) })
    }

    fn square(w: &Weights, name: &str, inputs: usize, outputs: usize, k: usize, stride: usize, pad: usize) -> Result<Self, MetricsError> {
        Self::load(w, name, inputs, outputs, (k, k), stride, (pad, pad))
    }

    fn forward(&mut self, x: &Tensor<f32>) -> Tensor<f32> {
        let mut y = self.conv.forward(x, Mode::EVAL);
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        y
    }
}

fn chain(convs: &mut [BasicConv], x: &Tensor<f32>) -> Tensor<f32> {
    let mut h = convs[0].forward(x);
    for c in &mut convs[1..] {
        h = c.forward(&h);
    }
    h
}

enum Mixed {
    /// 35x35 stage: 1x1, 5x5, double 3x3 and pooled branches.
    A { b1: BasicConv, b5: Vec<BasicConv>, b3: Vec<BasicConv>, pool: BasicConv },
    /// 35 -> 17 reduction.
    B { b3: BasicConv, b3dbl: Vec<BasicConv> },
    /// 17x17 stage with factorized 7x7 branches.
    C { b1: BasicConv, b7: Vec<BasicConv>, b7dbl: Vec<BasicConv>, pool: BasicConv },
    /// 17 -> 8 reduction.
    D { b3: Vec<BasicConv>, b7x3: Vec<BasicConv> },
    /// 8x8 stage with split 1x3 / 3x1 heads.
    E { b1: BasicConv, b3: BasicConv, b3a: BasicConv, b3b: BasicConv, dbl: Vec<BasicConv>, dbla: BasicConv, dblb: BasicConv, pool: BasicConv },
}

impl Mixed {
    fn a(w: &Weights, n: &str, inputs: usize, pool_features: usize) -> Result<Self, MetricsError> {
        Ok(Mixed::A {
            b1: BasicConv::square(w, &format!("{n}.branch1x1"), inputs, 64, 1, 1, 0)?,
            b5: vec![
                BasicConv::square(w, &format!("{n}.branch5x5_1"), inputs, 48, 1, 1, 0)?,
                BasicConv::square(w, &format!("{n}.branch5x5_2"), 48, 64, 5, 1, 2)?,
            ],
            b3: vec![
                BasicConv::square(w, &format!("{n}.branch3x3dbl_1"), inputs, 64, 1, 1, 0)?,
                BasicConv::square(w, &format!("{n}.branch3x3dbl_2"), 64, 96, 3, 1, 1)?,
                BasicConv::square(w, &format!("{n}.branch3x3dbl_3"), 96, 96, 3, 1, 1)?,
            ],
            pool: BasicConv::square(w, &format!("{n}.branch_pool"), inputs, pool_features, 1, 1, 0)?,
        })
    }

    fn b(w: &Weights, n: &str, inputs: usize) -> Result<Self, MetricsError> {
        Ok(Mixed::B {
            b3: BasicConv::square(w, &format!("{n}.branch3x3"), inputs, 384, 3, 2, 0)?,
            b3dbl: vec![
                BasicConv::square(w, &format!("{n}.branch3x3dbl_1"), inputs, 64, 1, 1, 0)?,
                BasicConv::square(w, &format!("{n}.branch3x3dbl_2"), 64, 96, 3, 1, 1)?,
                BasicConv::square(w, &format!("{n}.branch3x3dbl_3"), 96, 96, 3, 2, 0)?,
            ],
        })
    }

    fn c(w: &Weights, n: &str, inputs: usize, c7: usize) -> Result<Self, MetricsError> {
        let row = |name: &str, i, o| BasicConv::load(w, &format!("{n}.{name}"), i, o, (1, 7), 1, (0, 3));
        let col = |name: &str, i, o| BasicConv::load(w, &format!("{n}.{name}"), i, o, (7, 1), 1, (3, 0));
        Ok(Mixed::C {
            b1: BasicConv::square(w, &format!("{n}.branch1x1"), inputs, 192, 1, 1, 0)?,
            b7: vec![
                BasicConv::square(w, &format!("{n}.branch7x7_1"), inputs, c7, 1, 1, 0)?,
                row("branch7x7_2", c7, c7)?,
                col("branch7x7_3", c7, 192)?,
            ],
            b7dbl: vec![
                BasicConv::square(w, &format!("{n}.branch7x7dbl_1"), inputs, c7, 1, 1, 0)?,
                col("branch7x7dbl_2", c7, c7)?,
                row("branch7x7dbl_3", c7, c7)?,
                col("branch7x7dbl_4", c7, c7)?,
                row("branch7x7dbl_5", c7, 192)?,
            ],
            pool: BasicConv::square(w, &format!("{n}.branch_pool"), inputs, 192, 1, 1, 0)?,
        })
    }

    fn d(w: &Weights, n: &str, inputs: usize) -> Result<Self, MetricsError> {
        Ok(Mixed::D {
            b3: vec![
                BasicConv::square(w, &format!("{n}.branch3x3_1"), inputs, 192, 1, 1, 0)?,
                BasicConv::square(w, &format!("{n}.branch3x3_2"), 192, 320, 3, 2, 0)?,
            ],
            b7x3: vec![
                BasicConv::square(w, &format!("{n}.branch7x7x3_1"), inputs, 192, 1, 1, 0)?,
                BasicConv::load(w, &format!("{n}.branch7x7x3_2"), 192, 192, (1, 7), 1, (0, 3))?,
                BasicConv::load(w, &format!("{n}.branch7x7x3_3"), 192, 192, (7, 1), 1, (3, 0))?,
                BasicConv::square(w, &format!("{n}.branch7x7x3_4"), 192, 192, 3, 2, 0)?,
            ],
        })
    }

    fn e(w: &Weights, n: &str, inputs: usize) -> Result<Self, MetricsError> {
        let name = |s: &str| format!("{n}.{s}");
        Ok(Mixed::E {
            b1: BasicConv::square(w, &name("branch1x1"), inputs, 320, 1, 1, 0)?,
            b3: BasicConv::square(w, &name("branch3x3_1"), inputs, 384, 1, 1, 0)?,
            b3a: BasicConv::load(w, &name("branch3x3_2a"), 384, 384, (1, 3), 1, (0, 1))?,
            b3b: BasicConv::load(w, &name("branch3x3_2b"), 384, 384, (3, 1), 1, (1, 0))?,
            dbl: vec![
                BasicConv::square(w, &name("branch3x3dbl_1"), inputs, 448, 1, 1, 0)?,
                BasicConv::square(w, &name("branch3x3dbl_2"), 448, 384, 3, 1, 1)?,
            ],
            dbla: BasicConv::load(w, &name("branch3x3dbl_3a"), 384, 384, (1, 3), 1, (0, 1))?,
            dblb: BasicConv::load(w, &name("branch3x3dbl_3b"), 384, 384, (3, 1), 1, (1, 0))?,
            pool: BasicConv::square(w, &name("branch_pool"), inputs, 192, 1, 1, 0)?,
        })
    }

    fn forward(&mut self, x: &Tensor<f32>) -> Tensor<f32> {
        match self {
            Mixed::A { b1, b5, b3, pool } => ops::concat_channels(&[
                b1.forward(x),
                chain(b5, x),
                chain(b3, x),
                pool.forward(&ops::avg_pool_same(x, 3)),
            ]),
            Mixed::B { b3, b3dbl } => ops::concat_channels(&[b3.forward(x), chain(b3dbl, x), ops::max_pool(x, 3, 2)]),
            Mixed::C { b1, b7, b7dbl, pool } => ops::concat_channels(&[
                b1.forward(x),
                chain(b7, x),
                chain(b7dbl, x),
                pool.forward(&ops::avg_pool_same(x, 3)),
            ]),
            Mixed::D { b3, b7x3 } => ops::concat_channels(&[chain(b3, x), chain(b7x3, x), ops::max_pool(x, 3, 2)]),
            Mixed::E { b1, b3, b3a, b3b, dbl, dbla, dblb, pool } => {
                let h3 = b3.forward(x);
                let hd = chain(dbl, x);
                ops::concat_channels(&[
                    b1.forward(x),
                    b3a.forward(&h3),
                    b3b.forward(&h3),
                    dbla.forward(&hd),
                    dblb.forward(&hd),
                    pool.forward(&ops::avg_pool_same(x, 3)),
                ])
            }
        }
    }
}

/// Pretrained Inception-v3 classifier in the torchvision parameter layout
/// (`Conv2d_1a_3x3.conv.weight`, `Mixed_5b.branch1x1.bn.running_var`, ...,
/// `fc.weight`), read from a safetensors file. The auxiliary head is unused.
///
/// Features are the 2048-wide pooled activations; probabilities are the
/// softmax of the 1000-way classifier. Inputs in `[-1, 1]` are quantized to
/// 8 bits, resized bilinearly to 299x299 and normalized with the ImageNet
/// statistics, followed by the input re-centering torchvision applies for
/// these weights.
pub struct InceptionV3 {
    stem: Vec<BasicConv>,
    mixed: Vec<Mixed>,
    fc_weight: Vec<f32>,
    fc_bias: Vec<f32>,
    id: String,
}

impl InceptionV3 {
    pub const FEATURES: usize = 2048;
    pub const CLASSES: usize = 1000;

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let bytes = std::fs::read(path).map_err(|e| MetricsError::Weights(format!("{}: {e}", path.display())))?;
        let file = SafeTensors::deserialize(&bytes).map_err(|e| MetricsError::Weights(format!("{}: {e}", path.display())))?;
        let w = Weights { file };
        let stem = vec![
            BasicConv::square(&w, "Conv2d_1a_3x3", 3, 32, 3, 2, 0)?,
            BasicConv::square(&w, "Conv2d_2a_3x3", 32, 32, 3, 1, 0)?,
            BasicConv::square(&w, "Conv2d_2b_3x3", 32, 64, 3, 1, 1)?,
            BasicConv::square(&w, "Conv2d_3b_1x1", 64, 80, 1, 1, 0)?,
            BasicConv::square(&w, "Conv2d_4a_3x3", 80, 192, 3, 1, 0)?,
        ];
        let mixed = vec![
            Mixed::a(&w, "Mixed_5b", 192, 32)?,
            Mixed::a(&w, "Mixed_5c", 256, 64)?,
            Mixed::a(&w, "Mixed_5d", 288, 64)?,
            Mixed::b(&w, "Mixed_6a", 288)?,
            Mixed::c(&w, "Mixed_6b", 768, 128)?,
            Mixed::c(&w, "Mixed_6c", 768, 160)?,
            Mixed::c(&w, "Mixed_6d", 768, 160)?,
            Mixed::c(&w, "Mixed_6e", 768, 192)?,
            Mixed::d(&w, "Mixed_7a", 768)?,
            Mixed::e(&w, "Mixed_7b", 1280)?,
            Mixed::e(&w, "Mixed_7c", 2048)?,
        ];
        let fc_weight = w.get("fc.weight", &[Self::CLASSES, Self::FEATURES])?;
        let fc_bias = w.get("fc.bias", &[Self::CLASSES])?;
        let digest = Sha256::digest(&bytes);
        let short: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        let id = format!("inception-v3(torchvision layout, sha256={short}, 8-bit, bilinear-299)");
        Ok(InceptionV3 { stem, mixed, fc_weight, fc_bias, id })
    }

    /// Weights path from an explicit setting, falling back to
    /// [`WEIGHTS_ENV`].
    pub fn resolve_weights(explicit: Option<&Path>) -> Result<PathBuf, MetricsError> {
        if let Some(p) = explicit {
            return Ok(p.to_path_buf());
        }
        match std::env::var_os(WEIGHTS_ENV) {
            Some(p) if !p.is_empty() => Ok(PathBuf::from(p)),
            _ => Err(MetricsError::Weights(format!("no weights path given and {WEIGHTS_ENV} is unset"))),
        }
    }

    fn preprocess(images: &Tensor<f32>) -> Tensor<f32> {
        let quantized = images.map(|v| (((v as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) / 255.0) as f32);
        let mut x = ops::resize_bilinear(&quantized, INPUT_SIZE, INPUT_SIZE);
        let plane = INPUT_SIZE * INPUT_SIZE;
        for item in x.data_mut().chunks_mut(3 * plane) {
            for (c, ch) in item.chunks_mut(plane).enumerate() {
                let (m, s) = (IMAGENET_MEAN[c], IMAGENET_STD[c]);
                for v in ch {
                    let normalized = (*v as f64 - m) / s;
                    *v = (normalized * (s / 0.5) + (m - 0.5) / 0.5) as f32;
                }
            }
        }
        x
    }
}

impl FeatureExtractor for InceptionV3 {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn feature_dim(&self) -> usize {
        Self::FEATURES
    }

    fn num_classes(&self) -> usize {
        Self::CLASSES
    }

    fn extract(&mut self, images: &Tensor<f32>) -> Result<Extracted, MetricsError> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 3 || s[0] == 0 {
            return Err(MetricsError::InputShape { expected: "(n, 3, H, W)".into(), got: s.to_vec() });
        }
        let n = s[0];
        let x = Self::preprocess(images);
        let mut h = self.stem[0].forward(&x);
        h = self.stem[1].forward(&h);
        h = self.stem[2].forward(&h);
        h = ops::max_pool(&h, 3, 2);
        h = self.stem[3].forward(&h);
        h = self.stem[4].forward(&h);
        h = ops::max_pool(&h, 3, 2);
        for m in &mut self.mixed {
            h = m.forward(&h);
        }
        let pooled = ops::global_avg_pool(&h);
        let feats = pooled.data();
        let mut logits = vec![0.0f32; n * Self::CLASSES];
        for i in 0..n {
            logits[i * Self::CLASSES..(i + 1) * Self::CLASSES].copy_from_slice(&self.fc_bias);
        }
        gemm(false, true, n, Self::CLASSES, Self::FEATURES, 1.0, feats, &self.fc_weight, 1.0, &mut logits);
        Ok(Extracted {
            features: DMatrix::from_row_iterator(n, Self::FEATURES, feats.iter().map(|&v| v as f64)),
            probabilities: DMatrix::from_row_iterator(n, Self::CLASSES, logits.chunks(Self::CLASSES).flat_map(softmax)),
        })
    }
}
