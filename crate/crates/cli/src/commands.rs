use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use synthforge::catalog::{Catalog, CatalogError, ObjectStore, DB_ENV, STORE_ENV};
use synthforge::dataset::{expand_dataset, load_dataset, write_dataset, write_png, AugmentConfig, Dataset, DatasetError, ImageTensor};
use synthforge::metrics::{evaluate_model, FeatureExtractor, InceptionV3, MetricReport, ToyExtractor};
use synthforge::model::sample_latent;
use synthforge::nn::Mode;
use synthforge::training::{self, Event, ExtractorKind, Sinks, TrainingConfig, TrainingError};

use crate::{AugmentArgs, EvaluateArgs, GenerateArgs, TrainArgs};

const DEFAULT_DB: &str = "synthforge.sqlite";
const DEFAULT_STORE: &str = "store";
const GEN_DIR: &str = "gen_images";
/// Stream of the training seed used for dataset expansion.
const AUGMENT_STREAM: u64 = 3;
/// Generated images per generator pass.
const GEN_CHUNK: usize = 64;
/// Seed of the toy extractor; fixed so scores are comparable across runs.
const TOY_EXTRACTOR_SEED: u64 = 0;

pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::TargetTooSmall { .. } | DatasetError::InvalidConfig(_) => Failure::Usage(e.to_string()),
            _ => runtime(e),
        }
    }
}

impl From<TrainingError> for Failure {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Config(_) => Failure::Usage(e.to_string()),
            TrainingError::Dataset(d) => d.into(),
            _ => runtime(e),
        }
    }
}

impl From<CatalogError> for Failure {
    fn from(e: CatalogError) -> Self {
        runtime(e)
    }
}

/// Catalog and store locations from flags, falling back to the
/// environment, then to files in the working directory.
pub struct Locations {
    catalog_flag: Option<PathBuf>,
    catalog_env: Option<PathBuf>,
    store: PathBuf,
}

fn env_path(key: &str) -> Option<PathBuf> {
    std::env::var_os(key).filter(|v| !v.is_empty()).map(PathBuf::from)
}

impl Locations {
    pub fn resolve(catalog: Option<PathBuf>, store: Option<PathBuf>) -> Self {
        Locations {
            catalog_flag: catalog,
            catalog_env: env_path(DB_ENV),
            store: store.or_else(|| env_path(STORE_ENV)).unwrap_or_else(|| PathBuf::from(DEFAULT_STORE)),
        }
    }

    /// Flag, then the config value, then the environment, then the default.
    fn catalog(&self, configured: Option<&Path>) -> PathBuf {
        self.catalog_flag
            .clone()
            .or_else(|| configured.map(Path::to_path_buf))
            .or_else(|| self.catalog_env.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DB))
    }
}

fn build_extractor(
    kind: ExtractorKind,
    weights: Option<&Path>,
    resolution: usize,
) -> Result<Box<dyn FeatureExtractor>, Failure> {
    Ok(match kind {
        ExtractorKind::Toy => Box::new(ToyExtractor::new(resolution, TOY_EXTRACTOR_SEED)),
        ExtractorKind::Inception => {
            let path = InceptionV3::resolve_weights(weights).map_err(runtime)?;
            Box::new(InceptionV3::load(&path).map_err(runtime)?)
        }
    })
}

fn select_class(ds: Dataset, class: Option<&str>) -> Result<Dataset, Failure> {
    match class {
        None => Ok(ds),
        Some(label) => ds.filter_class(label).ok_or_else(|| {
            let known: Vec<_> = ds.class_counts().into_keys().collect();
            Failure::Runtime(format!("class {label:?} not found; available: {}", known.join(", ")))
        }),
    }
}

fn resolve_config(a: &TrainArgs) -> Result<TrainingConfig, Failure> {
    let mut cfg = TrainingConfig::default();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    let flags = [
        ("total_iters", &a.iters),
        ("eval_every_M", &a.eval_every),
        ("batch_size", &a.batch),
        ("seed", &a.seed),
        ("g_lr", &a.g_lr),
        ("d_lr", &a.d_lr),
        ("eval_sample_count", &a.eval_samples),
        ("checkpoint_every", &a.checkpoint_every),
        ("extractor", &a.extractor),
        ("extractor_weights", &a.extractor_weights),
        ("augment_target", &a.augment_target),
        ("base_ch", &a.base_ch),
        ("resolution", &a.resolution),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v).map_err(|e| Failure::Usage(e.to_string()))?;
        }
    }
    for kv in &a.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn train(a: TrainArgs, loc: &Locations) -> Result<(), Failure> {
    let mut cfg = resolve_config(&a)?;
    let db = loc.catalog(cfg.catalog_path.as_deref());
    cfg.catalog_path = Some(db.clone());
    println!(
        "synthforge train: iters {}, batch {}, g_lr {:e}, d_lr {:e}, adam betas ({}, {})",
        cfg.total_iters, cfg.batch_size, cfg.g_lr, cfg.d_lr, cfg.adam_beta1, cfg.adam_beta2
    );
    println!("resolved configuration:");
    for line in cfg.to_text().lines() {
        println!("  {line}");
    }
    println!("  data = {}", a.data.display());
    println!("  class = {}", a.class.as_deref().unwrap_or("(all classes pooled)"));
    println!("  out = {}", a.out.display());
    if a.dry_run {
        return Ok(());
    }

    let started = Instant::now();
    let ds = select_class(load_dataset(&a.data, cfg.resolution)?, a.class.as_deref())?;
    let ds = if cfg.augment_target > ds.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(AUGMENT_STREAM);
        let expanded = expand_dataset(&ds, cfg.augment_target, &AugmentConfig::default(), &mut rng)?;
        println!("expanded {} images to {}", ds.len(), expanded.len());
        expanded
    } else {
        println!("training on {} images", ds.len());
        ds
    };

    let evaluating = cfg.eval_every_m > 0 && cfg.eval_every_m <= cfg.total_iters;
    let mut extractor: Box<dyn FeatureExtractor> = if evaluating {
        build_extractor(cfg.extractor, cfg.extractor_weights.as_deref(), cfg.resolution)?
    } else {
        Box::new(ToyExtractor::new(cfg.resolution, TOY_EXTRACTOR_SEED))
    };
    let mut catalog = Catalog::open(&db)?;
    let sinks = Sinks { out_dir: a.out.clone(), catalog: Some(&mut catalog), class_label: a.class.clone() };
    let log_every = (cfg.total_iters / 20).max(1);
    let mut observer = |event: Event<'_>| match event {
        Event::Step { iteration, losses } if iteration % log_every == 0 => {
            println!("iter {iteration:>7}  d_loss {:.4}  g_loss {:.4}", losses.d_loss, losses.g_loss)
        }
        Event::Step { .. } => {}
        Event::Evaluated(r) => println!(
            "eval {:>7}  FID {:.4}  IS {:.4} +/- {:.4}",
            r.iteration.unwrap_or_default(),
            r.fid,
            r.is_mean,
            r.is_std
        ),
        Event::Checkpoint(dir) => println!("checkpoint {}", dir.display()),
    };
    let out = training::train(&cfg, &ds, extractor.as_mut(), sinks, &mut observer)?;
    println!("metrics {}", a.out.join("metrics.csv").display());
    if let Some(id) = out.model_id {
        println!("registered model {id} in {}", db.display());
    }
    println!("done in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

/// Next free `<n>.png` number in `dir`.
fn next_image_number(dir: &Path) -> Result<usize, Failure> {
    let mut next = 1;
    for entry in fs::read_dir(dir).map_err(runtime)? {
        let name = entry.map_err(runtime)?.file_name();
        if let Some(n) = name.to_str().and_then(|s| s.strip_suffix(".png")).and_then(|s| s.parse::<usize>().ok()) {
            next = next.max(n + 1);
        }
    }
    Ok(next)
}

pub fn generate(a: GenerateArgs, loc: &Locations) -> Result<(), Failure> {
    let db = loc.catalog(None);
    if !db.exists() {
        return Err(Failure::Runtime(format!("catalog {} does not exist; train a model first", db.display())));
    }
    let mut catalog = Catalog::open(&db)?;
    let model = match a.model_id {
        Some(id) => catalog.model(id)?,
        None => catalog.latest_model()?,
    };
    let (mut generator, cfg) = training::load_generator(Path::new(&model.artifact_uri))?;
    let store = ObjectStore::new(&loc.store);
    let dir = store.resolve(GEN_DIR);
    fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    let first = next_image_number(&dir)?;
    println!("generating {} images with model {} into {}", a.count, model.id, dir.display());

    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut written: Vec<PathBuf> = Vec::with_capacity(a.count);
    let mut urls = Vec::with_capacity(a.count);
    let r = cfg.resolution;
    let mut write_all = || -> Result<(), Failure> {
        while urls.len() < a.count {
            let n = GEN_CHUNK.min(a.count - urls.len());
            let images = generator.forward(&sample_latent(n, cfg.z_dim, &mut rng), Mode::EVAL).map_err(runtime)?;
            for i in 0..n {
                let relative = format!("{GEN_DIR}/{}.png", first + urls.len());
                let url = store.url_for(&relative);
                let path = store.resolve(&url);
                write_png(&path, &ImageTensor::new(3, r, r, images.item(i).to_vec()))?;
                written.push(path);
                urls.push(url);
            }
        }
        Ok(())
    };
    let outcome = write_all().and_then(|()| catalog.record_generated_images(model.id, &urls, &store).map_err(Failure::from));
    match outcome {
        Ok(ids) => {
            println!("recorded {} images, ids {}..={}", ids.len(), ids[0], ids[ids.len() - 1]);
            Ok(())
        }
        Err(e) => {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            Err(e)
        }
    }
}

fn print_report(report: &MetricReport) {
    println!("FID {:.6}  (lower is better)", report.fid);
    println!("IS  {:.6} +/- {:.6}  (higher is better)", report.is_mean, report.is_std);
    for (k, v) in report.to_pairs() {
        println!("  {k} = {v}");
    }
}

pub fn evaluate(a: EvaluateArgs, loc: &Locations) -> Result<(), Failure> {
    let kind = match a.extractor.as_str() {
        "toy" => ExtractorKind::Toy,
        "inception" => ExtractorKind::Inception,
        other => return Err(Failure::Usage(format!("--extractor must be inception or toy, got {other:?}"))),
    };
    let db = loc.catalog(None);
    let mut catalog = Catalog::open(&db)?;
    let model = match a.model {
        Some(id) => catalog.model(id)?,
        None => catalog.latest_model()?,
    };
    let artifact = PathBuf::from(&model.artifact_uri);
    let (mut generator, cfg) = training::load_generator(&artifact)?;
    let all = load_dataset(&a.data, cfg.resolution)?;
    let class = a.class.clone().or_else(|| model.class_label.clone().filter(|c| all.class_index().contains_key(c)));
    let real = select_class(all, class.as_deref())?;
    let mut extractor = build_extractor(kind, a.extractor_weights.as_deref(), cfg.resolution)?;
    println!(
        "evaluating model {} on {} real images ({}) with {} samples, extractor {}",
        model.id,
        real.len(),
        class.as_deref().unwrap_or("all classes"),
        a.samples,
        extractor.id()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let report = evaluate_model(&mut generator, &real, extractor.as_mut(), a.samples, a.splits, &mut rng).map_err(runtime)?;
    print_report(&report);

    let log = artifact.join("evaluations.csv");
    let fresh = !log.exists();
    let mut f = fs::OpenOptions::new().create(true).append(true).open(&log).map_err(runtime)?;
    if fresh {
        writeln!(f, "model_id,fid,is_mean,is_std,n_real,n_generated,extractor_id").map_err(runtime)?;
    }
    writeln!(
        f,
        "{},{},{},{},{},{},{}",
        model.id, report.fid, report.is_mean, report.is_std, report.n_real, report.n_generated, report.extractor_id
    )
    .map_err(runtime)?;
    catalog.update_scores(model.id, report.fid, report.is_mean)?;
    println!("appended to {}; catalog scores updated", log.display());
    Ok(())
}

pub fn augment(a: AugmentArgs) -> Result<(), Failure> {
    let ds = load_dataset(&a.data, a.resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let expanded = expand_dataset(&ds, a.target, &AugmentConfig::default(), &mut rng)?;
    let written = write_dataset(&expanded, &a.out)?;
    println!("wrote {} images to {}", written.len(), a.out.display());
    for (label, n) in expanded.class_counts() {
        println!("  {label}: {n}");
    }
    Ok(())
}
