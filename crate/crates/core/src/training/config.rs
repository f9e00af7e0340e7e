use std::fmt::Write as _;
use std::path::PathBuf;

use super::TrainingError;
use crate::model::ModelConfig;
use crate::nn::AdamConfig;

const ADAM_EPS: f64 = 1e-8;

/// Which feature extractor drives FID/IS during training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorKind {
    /// Pretrained Inception-v3 from a weights file.
    Inception,
    /// Seeded random projection; needs no external files.
    Toy,
}

impl ExtractorKind {
    pub fn name(self) -> &'static str {
        match self {
            ExtractorKind::Inception => "inception",
            ExtractorKind::Toy => "toy",
        }
    }
}

/// Every tunable of a training run. Serialized as flat `key = value` lines
/// using the field names below.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub g_lr: f64,
    pub d_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub total_iters: u64,
    /// Evaluation period; 0 disables evaluation.
    pub eval_every_m: u64,
    pub eval_sample_count: usize,
    pub d_steps_per_g_step: usize,
    pub seed: u64,
    /// Checkpoint period; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub z_dim: usize,
    pub base_ch: usize,
    pub resolution: usize,
    /// Inception Score splits; 0 picks 10 for >= 1000 samples, else 1.
    pub is_splits: usize,
    pub extractor: ExtractorKind,
    pub extractor_weights: Option<PathBuf>,
    pub catalog_path: Option<PathBuf>,
    /// Size the training set is expanded to before training; 0 skips
    /// expansion.
    pub augment_target: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            g_lr: 1e-4,
            d_lr: 4e-4,
            adam_beta1: 0.0,
            adam_beta2: 0.9,
            batch_size: 96,
            total_iters: 100_000,
            eval_every_m: 1000,
            eval_sample_count: 2048,
            d_steps_per_g_step: 1,
            seed: 0,
            checkpoint_every: 10_000,
            z_dim: 128,
            base_ch: 64,
            resolution: 64,
            is_splits: 0,
            extractor: ExtractorKind::Inception,
            extractor_weights: None,
            catalog_path: None,
            augment_target: 700,
        }
    }
}

/// Key order used when writing a config back out.
pub const KEYS: &[&str] = &[
    "g_lr",
    "d_lr",
    "adam_beta1",
    "adam_beta2",
    "batch_size",
    "total_iters",
    "eval_every_M",
    "eval_sample_count",
    "d_steps_per_g_step",
    "seed",
    "checkpoint_every",
    "z_dim",
    "base_ch",
    "resolution",
    "is_splits",
    "extractor",
    "extractor_weights",
    "catalog_path",
    "augment_target",
];

/// Keys naming locations on the host rather than training behaviour; they
/// are left out of checkpoints so identical runs in different directories
/// produce identical files.
pub const PATH_KEYS: &[&str] = &["extractor_weights", "catalog_path"];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, TrainingError> {
    value.parse().map_err(|_| TrainingError::Config(format!("{key}: cannot parse {value:?}")))
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl TrainingConfig {
    /// Sets one field by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainingError> {
        let v = value.trim();
        match key {
            "g_lr" => self.g_lr = parse_num(key, v)?,
            "d_lr" => self.d_lr = parse_num(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "total_iters" => self.total_iters = parse_num(key, v)?,
            "eval_every_M" => self.eval_every_m = parse_num(key, v)?,
            "eval_sample_count" => self.eval_sample_count = parse_num(key, v)?,
            "d_steps_per_g_step" => self.d_steps_per_g_step = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "z_dim" => self.z_dim = parse_num(key, v)?,
            "base_ch" => self.base_ch = parse_num(key, v)?,
            "resolution" => self.resolution = parse_num(key, v)?,
            "is_splits" => self.is_splits = parse_num(key, v)?,
            "extractor" => {
                self.extractor = match v {
                    "inception" => ExtractorKind::Inception,
                    "toy" => ExtractorKind::Toy,
                    _ => return Err(TrainingError::Config(format!("extractor: expected inception or toy, got {v:?}"))),
                }
            }
            "extractor_weights" => self.extractor_weights = optional_path(v),
            "catalog_path" => self.catalog_path = optional_path(v),
            "augment_target" => self.augment_target = parse_num(key, v)?,
            _ => return Err(TrainingError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Some(match key {
            "g_lr" => format!("{:?}", self.g_lr),
            "d_lr" => format!("{:?}", self.d_lr),
            "adam_beta1" => format!("{:?}", self.adam_beta1),
            "adam_beta2" => format!("{:?}", self.adam_beta2),
            "batch_size" => self.batch_size.to_string(),
            "total_iters" => self.total_iters.to_string(),
            "eval_every_M" => self.eval_every_m.to_string(),
            "eval_sample_count" => self.eval_sample_count.to_string(),
            "d_steps_per_g_step" => self.d_steps_per_g_step.to_string(),
            "seed" => self.seed.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "z_dim" => self.z_dim.to_string(),
            "base_ch" => self.base_ch.to_string(),
            "resolution" => self.resolution.to_string(),
            "is_splits" => self.is_splits.to_string(),
            "extractor" => self.extractor.name().to_string(),
            "extractor_weights" => path(&self.extractor_weights),
            "catalog_path" => path(&self.catalog_path),
            "augment_target" => self.augment_target.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored; unknown keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<(), TrainingError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainingError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, TrainingError> {
        let mut cfg = TrainingConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("known key"));
        }
        out
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: String| Err(TrainingError::Config(m));
        for (name, lr) in [("g_lr", self.g_lr), ("d_lr", self.d_lr)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {lr}"));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.d_steps_per_g_step == 0 {
            return bad("d_steps_per_g_step must be at least 1".into());
        }
        if self.eval_every_m > 0 && self.eval_every_m <= self.total_iters && self.eval_sample_count < 2 {
            return bad(format!("eval_sample_count must be at least 2, got {}", self.eval_sample_count));
        }
        self.model_config().validate().map_err(|e| TrainingError::Config(e.to_string()))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { z_dim: self.z_dim, base_channels: self.base_ch, resolution: self.resolution, power_iterations: 1 }
    }

    pub fn g_adam(&self) -> AdamConfig {
        AdamConfig { lr: self.g_lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: ADAM_EPS }
    }

    pub fn d_adam(&self) -> AdamConfig {
        AdamConfig { lr: self.d_lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: ADAM_EPS }
    }
}
