use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{checkpoint_dir, Archive, Meta, FORMAT_VERSION};
use super::{hinge_d_grad, hinge_d_loss, hinge_g_grad, hinge_g_loss, TrainingConfig, TrainingError, KEYS, PATH_KEYS};
use crate::catalog::{Catalog, NewModel};
use crate::dataset::Dataset;
use crate::metrics::{
    extract_dataset, extract_generated, feature_stats, score_generated, FeatureExtractor, GaussianStats, MetricReport,
};
use crate::model::{sample_latent, Discriminator, Generator, ModelError};
use crate::nn::{Adam, Mode, Module, Scalar, Tensor};

const G_FILE: &str = "generator.sfp";
const D_FILE: &str = "discriminator.sfp";
const META_FILE: &str = "meta.txt";
const METRICS_FILE: &str = "metrics.csv";

/// Stream ids carved out of one seed.
const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

/// Anything that maps a batch to one score per item and can backpropagate
/// score gradients into its parameters.
pub trait Critic<T: Scalar>: Module<T> {
    fn score(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, ModelError>;
    fn backprop(&mut self, grad_scores: &Tensor<T>) -> Tensor<T>;
}

impl<T: Scalar> Critic<T> for Discriminator<T> {
    fn score(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, ModelError> {
        self.forward(x, mode)
    }

    fn backprop(&mut self, grad_scores: &Tensor<T>) -> Tensor<T> {
        self.backward(grad_scores)
    }
}

/// Scores `real` and `fake` in one recorded pass, accumulates the gradient
/// of [`hinge_d_loss`] into the critic's parameters and returns the loss.
pub fn critic_hinge_backward<T: Scalar, C: Critic<T> + ?Sized>(
    critic: &mut C,
    real: &Tensor<T>,
    fake: &Tensor<T>,
) -> Result<f64, TrainingError> {
    let n_real = real.shape()[0];
    let scores = critic.score(&Tensor::concat(&[real, fake]), Mode::TRAIN)?;
    let s: Vec<f64> = scores.data().iter().map(|v| v.as_f64()).collect();
    let (r, f) = s.split_at(n_real);
    let loss = hinge_d_loss(r, f)?;
    let (gr, gf) = hinge_d_grad(r, f)?;
    critic.backprop(&Tensor::from_vec(&[s.len()], gr.into_iter().chain(gf).map(T::lit).collect()));
    Ok(loss)
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub g_opt: Adam<f32>,
    pub d_opt: Adam<f32>,
    /// Completed generator updates.
    pub iteration: u64,
    /// Drives batch indices and latent samples.
    pub rng: ChaCha8Rng,
    /// One report per evaluation, in order.
    pub history: Vec<MetricReport>,
}

impl TrainState {
    /// Fresh networks and optimizers; fully determined by `cfg`.
    pub fn new(cfg: &TrainingConfig) -> Result<Self, TrainingError> {
        cfg.validate()?;
        let model = cfg.model_config();
        let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
        let generator = Generator::with_rng(model, &mut init)?;
        let discriminator = Discriminator::with_rng(model, &mut init)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(TRAIN_STREAM);
        Ok(TrainState {
            generator,
            discriminator,
            g_opt: Adam::new(cfg.g_adam()),
            d_opt: Adam::new(cfg.d_adam()),
            iteration: 0,
            rng,
            history: Vec::new(),
        })
    }
}

/// Losses of one [`train_step`]; `d_loss` is from the last discriminator
/// update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub d_loss: f64,
    pub g_loss: f64,
}

/// `d_steps_per_g_step` discriminator updates against `real`, each with
/// fresh latents, then one generator update.
pub fn train_step(state: &mut TrainState, real: &Tensor<f32>, cfg: &TrainingConfig) -> Result<StepLosses, TrainingError> {
    let b = cfg.batch_size;
    if real.shape().first() != Some(&b) {
        return Err(TrainingError::Config(format!("real batch has shape {:?}, expected {b} images", real.shape())));
    }
    let z_dim = state.generator.config().z_dim;
    let nonfinite = |iteration, d_loss, g_loss| TrainingError::NonFiniteLoss { iteration, d_loss, g_loss };
    let mut d_loss = f64::NAN;
    for _ in 0..cfg.d_steps_per_g_step {
        let z = sample_latent(b, z_dim, &mut state.rng);
        let fake = state.generator.forward(&z, Mode::TRAIN_NO_GRAD)?;
        state.discriminator.zero_grad();
        d_loss = critic_hinge_backward(&mut state.discriminator, real, &fake)?;
        if !d_loss.is_finite() {
            return Err(nonfinite(state.iteration + 1, d_loss, f64::NAN));
        }
        state.d_opt.step(&mut state.discriminator);
    }

    let z = sample_latent(b, z_dim, &mut state.rng);
    state.generator.zero_grad();
    let fake = state.generator.forward(&z, Mode::TRAIN)?;
    let scores: Vec<f64> = state.discriminator.forward(&fake, Mode::TRAIN)?.data().iter().map(|&s| s as f64).collect();
    let g_loss = hinge_g_loss(&scores)?;
    if !g_loss.is_finite() {
        return Err(nonfinite(state.iteration + 1, d_loss, g_loss));
    }
    let grad = hinge_g_grad(&scores)?;
    let grad_images = state.discriminator.backward(&Tensor::from_vec(&[b], grad.into_iter().map(|g| g as f32).collect()));
    state.generator.backward(&grad_images);
    state.g_opt.step(&mut state.generator);
    state.iteration += 1;
    Ok(StepLosses { d_loss, g_loss })
}

/// Progress notifications from [`train`] and [`resume`].
#[derive(Debug)]
pub enum Event<'a> {
    Step { iteration: u64, losses: StepLosses },
    Evaluated(&'a MetricReport),
    Checkpoint(&'a Path),
}

/// Where a run writes its outputs.
pub struct Sinks<'a> {
    /// Receives `checkpoints/` and `metrics.csv`.
    pub out_dir: PathBuf,
    /// Registers the final model when present.
    pub catalog: Option<&'a mut Catalog>,
    pub class_label: Option<String>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub state: TrainState,
    pub final_checkpoint: PathBuf,
    pub model_id: Option<i64>,
}

/// Trains from freshly initialized networks.
pub fn train(
    cfg: &TrainingConfig,
    dataset: &Dataset,
    extractor: &mut dyn FeatureExtractor,
    sinks: Sinks<'_>,
    observer: &mut dyn FnMut(Event<'_>),
) -> Result<RunOutput, TrainingError> {
    resume(TrainState::new(cfg)?, cfg, dataset, extractor, sinks, observer)
}

/// Continues `state` until `cfg.total_iters`. Batches are drawn uniformly
/// with replacement from `dataset` using the state's RNG, so a run resumed
/// from a checkpoint follows the uninterrupted trajectory exactly.
pub fn resume(
    mut state: TrainState,
    cfg: &TrainingConfig,
    dataset: &Dataset,
    extractor: &mut dyn FeatureExtractor,
    sinks: Sinks<'_>,
    observer: &mut dyn FnMut(Event<'_>),
) -> Result<RunOutput, TrainingError> {
    cfg.validate()?;
    let r = cfg.resolution;
    if dataset.is_empty() {
        return Err(TrainingError::Config("training set is empty".into()));
    }
    if dataset.resolution() != (r, r) {
        return Err(TrainingError::Config(format!(
            "training images are {:?}, model resolution is {r}x{r}",
            dataset.resolution()
        )));
    }
    let out = sinks.out_dir.as_path();
    fs::create_dir_all(out).map_err(|source| TrainingError::Io { path: out.to_path_buf(), source })?;
    let mut real_stats: Option<GaussianStats> = None;

    while state.iteration < cfg.total_iters {
        let indices: Vec<usize> = (0..cfg.batch_size).map(|_| state.rng.random_range(0..dataset.len())).collect();
        let real = dataset.batch(&indices);
        let losses = match train_step(&mut state, &real, cfg) {
            Ok(l) => l,
            Err(e @ TrainingError::NonFiniteLoss { .. }) => {
                let dir = out.join("checkpoints").join(format!("nonfinite_iter_{:07}", state.iteration + 1));
                save_checkpoint_to(&mut state, cfg, &dir)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let it = state.iteration;
        observer(Event::Step { iteration: it, losses });

        if cfg.eval_every_m > 0 && it % cfg.eval_every_m == 0 {
            let stats = match real_stats.take() {
                Some(s) => s,
                None => feature_stats(&extract_dataset(dataset, extractor)?.features)?,
            };
            let mut eval_rng = eval_rng(cfg.seed, it);
            let generated = extract_generated(&mut state.generator, extractor, cfg.eval_sample_count, &mut eval_rng)?;
            let mut report = score_generated(&stats, &generated, cfg.is_splits, extractor.id())?;
            real_stats = Some(stats);
            report.iteration = Some(it);
            state.history.push(report);
            write_metrics_csv(&out.join(METRICS_FILE), &state.history)?;
            observer(Event::Evaluated(state.history.last().expect("just pushed")));
        }
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it < cfg.total_iters {
            let dir = save_checkpoint(&mut state, cfg, out)?;
            observer(Event::Checkpoint(&dir));
        }
    }

    let final_checkpoint = save_checkpoint(&mut state, cfg, out)?;
    observer(Event::Checkpoint(&final_checkpoint));
    write_metrics_csv(&out.join(METRICS_FILE), &state.history)?;
    let model_id = match sinks.catalog {
        Some(catalog) => {
            let last = state.history.last();
            Some(catalog.register_model(&NewModel {
                artifact_uri: final_checkpoint.display().to_string(),
                endpoint: None,
                fid_score: last.map(|r| r.fid),
                is_score: last.map(|r| r.is_mean),
                class_label: sinks.class_label.clone(),
            })?)
        }
        None => None,
    };
    Ok(RunOutput { state, final_checkpoint, model_id })
}

/// Evaluation randomness depends only on `(seed, iteration)`, never on the
/// training stream.
fn eval_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(EVAL_STREAM);
    rng
}

/// Rewrites `iteration,fid,is_mean,is_std` for the whole history.
pub fn write_metrics_csv(path: &Path, history: &[MetricReport]) -> Result<(), TrainingError> {
    let mut text = String::from("iteration,fid,is_mean,is_std\n");
    for r in history {
        let it = r.iteration.map(|i| i.to_string()).unwrap_or_default();
        text.push_str(&format!("{it},{},{},{}\n", r.fid, r.is_mean, r.is_std));
    }
    fs::write(path, text).map_err(|source| TrainingError::Io { path: path.to_path_buf(), source })
}

/// Writes `<root>/checkpoints/iter_XXXXXXX` and returns that directory.
pub fn save_checkpoint(state: &mut TrainState, cfg: &TrainingConfig, root: &Path) -> Result<PathBuf, TrainingError> {
    let dir = checkpoint_dir(root, state.iteration);
    save_checkpoint_to(state, cfg, &dir)?;
    Ok(dir)
}

fn save_checkpoint_to(state: &mut TrainState, cfg: &TrainingConfig, dir: &Path) -> Result<(), TrainingError> {
    fs::create_dir_all(dir).map_err(|source| TrainingError::Io { path: dir.to_path_buf(), source })?;
    Archive::capture(&mut state.generator, &state.g_opt).write(&dir.join(G_FILE))?;
    Archive::capture(&mut state.discriminator, &state.d_opt).write(&dir.join(D_FILE))?;

    let mut meta = Meta::default();
    meta.push("format_version", FORMAT_VERSION);
    meta.push("iteration", state.iteration);
    meta.push("rng.seed", state.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect::<String>());
    meta.push("rng.stream", state.rng.get_stream());
    meta.push("rng.word_pos", state.rng.get_word_pos());
    meta.push("g_adam_step", state.g_opt.step);
    meta.push("d_adam_step", state.d_opt.step);
    for key in KEYS.iter().filter(|k| !PATH_KEYS.contains(k)) {
        meta.push(format!("config.{key}"), cfg.get(key).expect("known key"));
    }
    meta.push("history.count", state.history.len());
    for (i, report) in state.history.iter().enumerate() {
        for (k, v) in report.to_pairs() {
            meta.push(format!("history.{i}.{k}"), v);
        }
    }
    let path = dir.join(META_FILE);
    fs::write(&path, meta.to_text()).map_err(|source| TrainingError::Io { path, source })
}

fn read_meta(dir: &Path) -> Result<(Meta, TrainingConfig), TrainingError> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| TrainingError::Checkpoint { path: path.clone(), reason: e.to_string() })?;
    let meta = Meta::parse(&text, &path)?;
    let version = meta.require("format_version", &path)?;
    if version != FORMAT_VERSION.to_string() {
        return Err(TrainingError::Checkpoint { path, reason: format!("unsupported format version {version}") });
    }
    let mut cfg = TrainingConfig::default();
    for (k, v) in &meta.pairs {
        if let Some(key) = k.strip_prefix("config.") {
            cfg.set(key, v)?;
        }
    }
    Ok((meta, cfg))
}

fn parse_field<T: std::str::FromStr>(meta: &Meta, key: &str, path: &Path) -> Result<T, TrainingError> {
    let v = meta.require(key, path)?;
    v.parse()
        .map_err(|_| TrainingError::Checkpoint { path: path.to_path_buf(), reason: format!("bad value for {key}: {v:?}") })
}

/// Restores the full training state and the configuration it was saved with.
pub fn load_checkpoint(dir: &Path) -> Result<(TrainingConfig, TrainState), TrainingError> {
    let (meta, cfg) = read_meta(dir)?;
    let path = dir.join(META_FILE);
    let mut state = TrainState::new(&cfg)?;
    let g_path = dir.join(G_FILE);
    Archive::read(&g_path)?.restore(&mut state.generator, &mut state.g_opt, &g_path)?;
    let d_path = dir.join(D_FILE);
    Archive::read(&d_path)?.restore(&mut state.discriminator, &mut state.d_opt, &d_path)?;
    state.g_opt.step = parse_field(&meta, "g_adam_step", &path)?;
    state.d_opt.step = parse_field(&meta, "d_adam_step", &path)?;
    state.iteration = parse_field(&meta, "iteration", &path)?;

    let hex = meta.require("rng.seed", &path)?;
    let mut seed = [0u8; 32];
    let bad_seed = || TrainingError::Checkpoint { path: path.clone(), reason: format!("bad rng seed {hex:?}") };
    if hex.len() != 64 {
        return Err(bad_seed());
    }
    for (i, byte) in seed.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad_seed())?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(parse_field(&meta, "rng.stream", &path)?);
    rng.set_word_pos(parse_field(&meta, "rng.word_pos", &path)?);
    state.rng = rng;

    let count: usize = parse_field(&meta, "history.count", &path)?;
    for i in 0..count {
        let prefix = format!("history.{i}.");
        let pairs = meta.pairs.iter().filter_map(|(k, v)| k.strip_prefix(&prefix).map(|k| (k, v.as_str())));
        let report = MetricReport::from_pairs(pairs)
            .ok_or_else(|| TrainingError::Checkpoint { path: path.clone(), reason: format!("bad history entry {i}") })?;
        state.history.push(report);
    }
    Ok((cfg, state))
}

/// Only the generator of a checkpoint, ready for inference.
pub fn load_generator(dir: &Path) -> Result<(Generator<f32>, TrainingConfig), TrainingError> {
    let (_, cfg) = read_meta(dir)?;
    let mut generator = Generator::new(cfg.model_config(), cfg.seed)?;
    let path = dir.join(G_FILE);
    Archive::read(&path)?.restore(&mut generator, &mut Adam::new(cfg.g_adam()), &path)?;
    Ok((generator, cfg))
}
