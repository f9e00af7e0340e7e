//! Class-labelled image sets: loading, pixel scaling, augmentation.
//!
//! On disk a dataset is `<root>/<class_label>/*.png`. Records are ordered by
//! label, then file name, so the same directory always loads identically.

mod augment;
mod pixels;

pub use augment::{apply_affine, class_quotas, expand_dataset, random_affine, AffineParams, AugmentConfig, FillPolicy};
pub use pixels::{denormalize_pixels, normalize_pixels, ImageTensor};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::nn::Tensor;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("no images found under {0}")]
    EmptyDataset(PathBuf),
    #[error("cannot read image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("{path} is {got_w}x{got_h}, expected {expected}x{expected}")]
    ResolutionMismatch { path: PathBuf, expected: usize, got_w: usize, got_h: usize },
    #[error("target size {target} is smaller than the dataset ({size} records)")]
    TargetTooSmall { target: usize, size: usize },
    #[error("pixel value {0} outside [-1, 1]")]
    RangeViolation(f32),
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("dataset is inconsistent: {0}")]
    Inconsistent(String),
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Where a record's pixels came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    File(PathBuf),
    /// `copy`-th distorted copy of `parent` (1-based).
    Augmented { parent: Box<Source>, copy: usize },
    Synthetic(String),
}

impl Source {
    /// File name used when the record is written back to disk.
    pub fn file_name(&self) -> String {
        match self {
            Source::File(p) => {
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                format!("{stem}.png")
            }
            Source::Augmented { parent, copy } => {
                let parent = parent.file_name();
                let stem = parent.strip_suffix(".png").unwrap_or(&parent);
                format!("{stem}_aug{copy}.png")
            }
            Source::Synthetic(name) => format!("{name}.png"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub class_label: String,
    pub pixels: ImageTensor,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<ImageRecord>,
    class_index: BTreeMap<String, Vec<usize>>,
}

impl Dataset {
    /// Builds the class index. Fails on an empty list or mixed image sizes.
    pub fn from_records(records: Vec<ImageRecord>) -> Result<Self, DatasetError> {
        let first = records.first().ok_or_else(|| DatasetError::EmptyDataset(PathBuf::new()))?;
        let dims = (first.pixels.channels(), first.pixels.height(), first.pixels.width());
        let mut class_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if (r.pixels.channels(), r.pixels.height(), r.pixels.width()) != dims {
                return Err(DatasetError::Inconsistent(format!("record {i} has a different image shape")));
            }
            class_index.entry(r.class_label.clone()).or_default().push(i);
        }
        Ok(Dataset { records, class_index })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn class_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.class_index
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        self.class_index.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }

    /// `(height, width)` shared by every record.
    pub fn resolution(&self) -> (usize, usize) {
        let p = &self.records[0].pixels;
        (p.height(), p.width())
    }

    /// Records of one class, or `None` if the label is unknown.
    pub fn filter_class(&self, label: &str) -> Option<Dataset> {
        let idx = self.class_index.get(label)?;
        let records = idx.iter().map(|&i| self.records[i].clone()).collect();
        Dataset::from_records(records).ok()
    }

    /// Stacks the given records into a `(B, 3, H, W)` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let (h, w) = self.resolution();
        let mut data = Vec::with_capacity(indices.len() * 3 * h * w);
        for &i in indices {
            data.extend_from_slice(self.records[i].pixels.data());
        }
        Tensor::from_vec(&[indices.len(), 3, h, w], data)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Reads one RGB image at exactly `resolution x resolution`.
pub fn read_image(path: &Path, resolution: usize) -> Result<ImageTensor, DatasetError> {
    let img = image::open(path)
        .map_err(|e| DatasetError::UnreadableImage { path: path.to_path_buf(), reason: e.to_string() })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w != resolution || h != resolution {
        return Err(DatasetError::ResolutionMismatch { path: path.to_path_buf(), expected: resolution, got_w: w, got_h: h });
    }
    Ok(normalize_pixels(img.as_raw(), h, w))
}

/// Writes a tensor as an 8-bit RGB PNG.
pub fn write_png(path: &Path, pixels: &ImageTensor) -> Result<(), DatasetError> {
    let raw = denormalize_pixels(pixels)?;
    let buf = image::RgbImage::from_raw(pixels.width() as u32, pixels.height() as u32, raw)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: std::io::Error::other(e.to_string()) })
}

/// Loads every image below the class subdirectories of `root`.
pub fn load_dataset(root: &Path, resolution: usize) -> Result<Dataset, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::MissingRoot(root.to_path_buf()));
    }
    let mut classes: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let path = entry.path();
        if path.is_dir() {
            classes.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    classes.sort();
    let mut records = Vec::new();
    for (label, dir) in classes {
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        files.sort();
        for path in files {
            let pixels = read_image(&path, resolution)?;
            records.push(ImageRecord { class_label: label.clone(), pixels, source: Source::File(path) });
        }
    }
    if records.is_empty() {
        return Err(DatasetError::EmptyDataset(root.to_path_buf()));
    }
    Dataset::from_records(records)
}

/// Writes `ds` as `<out>/<label>/<name>.png`; returns the written paths.
pub fn write_dataset(ds: &Dataset, out: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut written = Vec::with_capacity(ds.len());
    for r in ds.records() {
        let dir = out.join(&r.class_label);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(r.source.file_name());
        write_png(&path, &r.pixels)?;
        written.push(path);
    }
    Ok(written)
}
