use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::MetricsError;
use crate::nn::{gemm, Tensor};

/// Per-image features and class probabilities from one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    /// `n x d`.
    pub features: DMatrix<f64>,
    /// `n x K`, rows sum to 1.
    pub probabilities: DMatrix<f64>,
}

/// Maps images in `[-1, 1]` to feature vectors and class probabilities.
///
/// Implementations hold layer caches, so inference takes `&mut self`; use
/// one extractor per thread.
pub trait FeatureExtractor {
    /// Provenance string recorded with every metric report.
    fn id(&self) -> String;
    fn feature_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// `images` is `(n, 3, H, W)`.
    fn extract(&mut self, images: &Tensor<f32>) -> Result<Extracted, MetricsError>;

    fn features(&mut self, images: &Tensor<f32>) -> Result<DMatrix<f64>, MetricsError> {
        Ok(self.extract(images)?.features)
    }

    fn probabilities(&mut self, images: &Tensor<f32>) -> Result<DMatrix<f64>, MetricsError> {
        Ok(self.extract(images)?.probabilities)
    }
}

/// Fixed random projection of raw pixels plus a random softmax head.
///
/// Deterministic in `(resolution, seed)`. Meant for tests and small runs
/// where the pretrained network is unavailable; its numbers are not
/// comparable to published FID/IS values.
#[derive(Debug, Clone)]
pub struct ToyExtractor {
    resolution: usize,
    seed: u64,
    projection: Vec<f32>,
    head: Vec<f32>,
}

impl ToyExtractor {
    pub const FEATURES: usize = 64;
    pub const CLASSES: usize = 10;

    pub fn new(resolution: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = 3 * resolution * resolution;
        let scale = 1.0 / (inputs as f64).sqrt();
        let projection = (0..Self::FEATURES * inputs)
            .map(|_| (scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)) as f32)
            .collect();
        let head_scale = 4.0 / (Self::FEATURES as f64).sqrt();
        let head = (0..Self::CLASSES * Self::FEATURES)
            .map(|_| (head_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)) as f32)
            .collect();
        ToyExtractor { resolution, seed, projection, head }
    }
}

impl FeatureExtractor for ToyExtractor {
    fn id(&self) -> String {
        format!("toy-projection(res={},d={},k={},seed={})", self.resolution, Self::FEATURES, Self::CLASSES, self.seed)
    }

    fn feature_dim(&self) -> usize {
        Self::FEATURES
    }

    fn num_classes(&self) -> usize {
        Self::CLASSES
    }

    fn extract(&mut self, images: &Tensor<f32>) -> Result<Extracted, MetricsError> {
        let r = self.resolution;
        let s = images.shape();
        if s.len() != 4 || s[1] != 3 || s[2] != r || s[3] != r {
            return Err(MetricsError::InputShape { expected: format!("(n, 3, {r}, {r})"), got: s.to_vec() });
        }
        let n = s[0];
        let (d, k) = (Self::FEATURES, Self::CLASSES);
        let mut feats = vec![0.0f32; n * d];
        gemm(false, true, n, d, 3 * r * r, 1.0, images.data(), &self.projection, 0.0, &mut feats);
        let mut logits = vec![0.0f32; n * k];
        gemm(false, true, n, k, d, 1.0, &feats, &self.head, 0.0, &mut logits);
        let features = DMatrix::from_row_iterator(n, d, feats.iter().map(|&v| v as f64));
        let probabilities = DMatrix::from_row_iterator(n, k, logits.chunks(k).flat_map(softmax));
        Ok(Extracted { features, probabilities })
    }
}

pub(crate) fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
