//! Sample-quality metrics: Fréchet distance between feature Gaussians (FID)
//! and the Inception Score (IS).
//!
//! Both are computed from a pluggable [`FeatureExtractor`]. Lower FID is
//! better; higher IS indicates more diverse, confidently classified samples.

mod extractor;
mod inception;
mod stats;

pub use extractor::{Extracted, FeatureExtractor, ToyExtractor};
pub use inception::{InceptionV3, WEIGHTS_ENV};
pub use stats::{default_splits, feature_stats, frechet_distance, inception_score, GaussianStats, PSD_TOLERANCE};

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::dataset::Dataset;
use crate::model::{sample_latent, Generator, ModelError};
use crate::nn::{Mode, Tensor};

/// Images pushed through the generator and extractor at once.
const CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least 2 samples for covariance, got {n}")]
    InsufficientSamples { n: usize },
    #[error("feature dimensions differ: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("covariance is not positive semi-definite (eigenvalue {0})")]
    NonPSDInput(f64),
    #[error("row {row} is not a probability distribution (sum {sum})")]
    NotStochastic { row: usize, sum: f64 },
    #[error("{n} samples cannot fill {splits} splits")]
    TooFewSamples { n: usize, splits: usize },
    #[error("extractor input must be {expected}, got {got:?}")]
    InputShape { expected: String, got: Vec<usize> },
    #[error("extractor weights: {0}")]
    Weights(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One evaluation of a generator against a real image set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub fid: f64,
    pub is_mean: f64,
    pub is_std: f64,
    pub n_real: usize,
    pub n_generated: usize,
    pub extractor_id: String,
    pub iteration: Option<u64>,
}

impl MetricReport {
    /// Flat `(key, value)` form used in logs and metadata files.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("fid", format!("{:?}", self.fid)),
            ("is_mean", format!("{:?}", self.is_mean)),
            ("is_std", format!("{:?}", self.is_std)),
            ("n_real", self.n_real.to_string()),
            ("n_generated", self.n_generated.to_string()),
            ("extractor_id", self.extractor_id.clone()),
            ("iteration", self.iteration.map(|i| i.to_string()).unwrap_or_default()),
        ]
    }

    /// Inverse of [`MetricReport::to_pairs`].
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Option<Self> {
        let mut r = MetricReport {
            fid: f64::NAN,
            is_mean: f64::NAN,
            is_std: f64::NAN,
            n_real: 0,
            n_generated: 0,
            extractor_id: String::new(),
            iteration: None,
        };
        let mut seen = 0;
        for (k, v) in pairs {
            match k {
                "fid" => r.fid = v.parse().ok()?,
                "is_mean" => r.is_mean = v.parse().ok()?,
                "is_std" => r.is_std = v.parse().ok()?,
                "n_real" => r.n_real = v.parse().ok()?,
                "n_generated" => r.n_generated = v.parse().ok()?,
                "extractor_id" => r.extractor_id = v.to_string(),
                "iteration" => r.iteration = if v.is_empty() { None } else { Some(v.parse().ok()?) },
                _ => return None,
            }
            seen += 1;
        }
        (seen == 7).then_some(r)
    }
}

/// Features and probabilities of every image in `ds`, in record order.
pub fn extract_dataset(ds: &Dataset, extractor: &mut dyn FeatureExtractor) -> Result<Extracted, MetricsError> {
    let indices: Vec<usize> = (0..ds.len()).collect();
    let mut parts = Vec::new();
    for chunk in indices.chunks(CHUNK) {
        parts.push(extractor.extract(&ds.batch(chunk))?);
    }
    Ok(stack(parts, extractor))
}

/// Extracts `images` chunk by chunk.
pub fn extract_images(images: &Tensor<f32>, extractor: &mut dyn FeatureExtractor) -> Result<Extracted, MetricsError> {
    let n = images.shape()[0];
    let mut parts = Vec::new();
    for start in (0..n).step_by(CHUNK) {
        parts.push(extractor.extract(&images.slice_items(start, (start + CHUNK).min(n)))?);
    }
    Ok(stack(parts, extractor))
}

fn stack(parts: Vec<Extracted>, extractor: &dyn FeatureExtractor) -> Extracted {
    let n: usize = parts.iter().map(|p| p.features.nrows()).sum();
    let (d, k) = (extractor.feature_dim(), extractor.num_classes());
    let mut features = DMatrix::zeros(n, d);
    let mut probabilities = DMatrix::zeros(n, k);
    let mut row = 0;
    for p in parts {
        let m = p.features.nrows();
        features.rows_mut(row, m).copy_from(&p.features);
        probabilities.rows_mut(row, m).copy_from(&p.probabilities);
        row += m;
    }
    Extracted { features, probabilities }
}

/// FID against precomputed real statistics plus IS of the generated set.
pub fn score_generated(
    real: &GaussianStats,
    generated: &Extracted,
    splits: usize,
    extractor_id: String,
) -> Result<MetricReport, MetricsError> {
    let gen_stats = feature_stats(&generated.features)?;
    let fid = frechet_distance(real, &gen_stats)?;
    let splits = if splits == 0 { default_splits(gen_stats.n) } else { splits };
    let (is_mean, is_std) = inception_score(&generated.probabilities, splits)?;
    Ok(MetricReport {
        fid,
        is_mean,
        is_std,
        n_real: real.n,
        n_generated: gen_stats.n,
        extractor_id,
        iteration: None,
    })
}

/// Draws `n_samples` images from `gen` in inference mode and extracts them.
pub fn extract_generated<R: Rng + ?Sized>(
    gen: &mut Generator<f32>,
    extractor: &mut dyn FeatureExtractor,
    n_samples: usize,
    rng: &mut R,
) -> Result<Extracted, MetricsError> {
    let z_dim = gen.config().z_dim;
    let mut parts = Vec::new();
    for start in (0..n_samples).step_by(CHUNK) {
        let z = sample_latent(CHUNK.min(n_samples - start), z_dim, rng);
        parts.push(extractor.extract(&gen.forward(&z, Mode::EVAL)?)?);
    }
    Ok(stack(parts, extractor))
}

/// Full evaluation of a generator against a real dataset. `splits = 0`
/// selects [`default_splits`].
pub fn evaluate_model<R: Rng + ?Sized>(
    gen: &mut Generator<f32>,
    real: &Dataset,
    extractor: &mut dyn FeatureExtractor,
    n_samples: usize,
    splits: usize,
    rng: &mut R,
) -> Result<MetricReport, MetricsError> {
    if n_samples < 2 {
        return Err(MetricsError::InsufficientSamples { n: n_samples });
    }
    let real_stats = feature_stats(&extract_dataset(real, extractor)?.features)?;
    let generated = extract_generated(gen, extractor, n_samples, rng)?;
    score_generated(&real_stats, &generated, splits, extractor.id())
}
