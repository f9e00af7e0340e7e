use rand::Rng;

use super::{Dataset, DatasetError, ImageRecord, ImageTensor, Source};

/// Rule for sampling outside the image after a geometric transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FillPolicy {
    /// Mirror about the edge pixel (`dcb|abcd|cba`).
    Reflect,
    /// Repeat the edge pixel.
    Edge,
    Constant(f32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub p_rotate: f64,
    pub p_translate: f64,
    pub p_scale: f64,
    /// Rotation drawn from `[-rotate_degrees, rotate_degrees]`.
    pub rotate_degrees: f64,
    /// Shift drawn per axis from `[-f, f]` times the image side.
    pub translate_fraction: f64,
    /// Inclusive zoom factor interval.
    pub scale_range: (f64, f64),
    pub fill: FillPolicy,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_rotate: 0.5,
            p_translate: 0.5,
            p_scale: 0.5,
            rotate_degrees: 15.0,
            translate_fraction: 0.1,
            scale_range: (0.9, 1.1),
            fill: FillPolicy::Reflect,
        }
    }
}

impl AugmentConfig {
    /// Config that never changes an image.
    pub fn identity() -> Self {
        AugmentConfig { p_rotate: 0.0, p_translate: 0.0, p_scale: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: &str| Err(DatasetError::InvalidConfig(msg.to_string()));
        for (name, p) in [("p_rotate", self.p_rotate), ("p_translate", self.p_translate), ("p_scale", self.p_scale)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.rotate_degrees >= 0.0 && self.rotate_degrees.is_finite()) {
            return bad("rotate_degrees must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.translate_fraction) {
            return bad("translate_fraction must lie in [0, 1)");
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite()) {
            return bad("scale_range must satisfy 0 < lo <= 1 <= hi");
        }
        Ok(())
    }
}

/// One concrete distortion. Positive angles turn the content clockwise as
/// displayed (row index growing downwards); shifts are in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub angle_degrees: f64,
    pub scale: f64,
    pub shift_x: f64,
    pub shift_y: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams { angle_degrees: 0.0, scale: 1.0, shift_x: 0.0, shift_y: 0.0 };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Draws each distortion independently with its probability.
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, width: usize, height: usize, rng: &mut R) -> Self {
        let mut p = Self::IDENTITY;
        if rng.random::<f64>() < prob(cfg.p_rotate) {
            let r = finite_or_zero(cfg.rotate_degrees).abs();
            p.angle_degrees = uniform(rng, -r, r);
        }
        if rng.random::<f64>() < prob(cfg.p_translate) {
            let f = finite_or_zero(cfg.translate_fraction).abs();
            p.shift_x = uniform(rng, -f, f) * width as f64;
            p.shift_y = uniform(rng, -f, f) * height as f64;
        }
        if rng.random::<f64>() < prob(cfg.p_scale) {
            let (lo, hi) = cfg.scale_range;
            if lo > 0.0 && hi >= lo && hi.is_finite() {
                p.scale = uniform(rng, lo, hi);
            }
        }
        p
    }
}

fn prob(p: f64) -> f64 {
    if p.is_nan() {
        0.0
    } else {
        p.clamp(0.0, 1.0)
    }
}

fn finite_or_zero(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        0.0
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Snaps coordinates that are integral up to trigonometric round-off.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

fn border_index(i: isize, n: usize, fill: FillPolicy) -> Option<usize> {
    let n = n as isize;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match fill {
        FillPolicy::Constant(_) => None,
        FillPolicy::Edge => Some(i.clamp(0, n - 1) as usize),
        FillPolicy::Reflect => {
            if n == 1 {
                return Some(0);
            }
            let period = 2 * (n - 1);
            let m = i.rem_euclid(period);
            Some(if m < n { m } else { period - m } as usize)
        }
    }
}

/// Applies `params` about the image centre with bilinear resampling.
pub fn apply_affine(img: &ImageTensor, params: &AffineParams, fill: FillPolicy) -> ImageTensor {
    if params.is_identity() {
        return img.clone();
    }
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let theta = params.angle_degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let scale = if params.scale > 0.0 { params.scale } else { 1.0 };
    let mut out = vec![0.0f32; c * h * w];
    let src = img.data();
    for oy in 0..h {
        for ox in 0..w {
            // Inverse map: p = c + R(-theta) (p' - c - t) / s
            let dx = (ox as f64 - cx - params.shift_x) / scale;
            let dy = (oy as f64 - cy - params.shift_y) / scale;
            let sx = snap(cx + cos * dx + sin * dy);
            let sy = snap(cy - sin * dx + cos * dy);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1, y0, fx * (1.0 - fy)),
                (x0, y0 + 1, (1.0 - fx) * fy),
                (x0 + 1, y0 + 1, fx * fy),
            ];
            for ch in 0..c {
                let plane = &src[ch * h * w..(ch + 1) * h * w];
                let mut v = 0.0f64;
                for &(tx, ty, wt) in &taps {
                    if wt == 0.0 {
                        continue;
                    }
                    let sample = match (border_index(tx, w, fill), border_index(ty, h, fill)) {
                        (Some(xi), Some(yi)) => plane[yi * w + xi],
                        _ => match fill {
                            FillPolicy::Constant(k) => k,
                            _ => unreachable!("non-constant fill always yields an index"),
                        },
                    };
                    v += wt * sample as f64;
                }
                out[(ch * h + oy) * w + ox] = (v as f32).clamp(-1.0, 1.0);
            }
        }
    }
    ImageTensor::new(c, h, w, out)
}

/// Randomly rotates, shifts and rescales a record; label and size are kept.
pub fn random_affine<R: Rng + ?Sized>(img: &ImageRecord, cfg: &AugmentConfig, rng: &mut R) -> ImageRecord {
    let params = AffineParams::sample(cfg, img.pixels.width(), img.pixels.height(), rng);
    ImageRecord {
        class_label: img.class_label.clone(),
        pixels: apply_affine(&img.pixels, &params, cfg.fill),
        source: img.source.clone(),
    }
}

/// Per-class final sizes: proportional shares of `target`, rounded by
/// largest remainder (ties to the earlier label) so they sum to `target`.
pub fn class_quotas(counts: &[(String, usize)], target: usize) -> Vec<usize> {
    let total: usize = counts.iter().map(|(_, n)| n).sum();
    let mut quotas: Vec<usize> = counts.iter().map(|(_, n)| target * n / total).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = target * counts[a].1 % total;
        let rb = target * counts[b].1 % total;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(target - assigned) {
        quotas[i] += 1;
    }
    quotas
}

/// Grows `ds` to exactly `target` records: all originals, then augmented
/// copies drawn round-robin within each class.
pub fn expand_dataset<R: Rng + ?Sized>(
    ds: &Dataset,
    target: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Dataset, DatasetError> {
    if target < ds.len() {
        return Err(DatasetError::TargetTooSmall { target, size: ds.len() });
    }
    let counts: Vec<(String, usize)> = ds.class_counts().into_iter().collect();
    let quotas = class_quotas(&counts, target);
    let mut records = ds.records().to_vec();
    for ((label, n), quota) in counts.iter().zip(quotas) {
        let members = &ds.class_index()[label];
        for j in 0..quota - n {
            let parent = &ds.records()[members[j % n]];
            let mut aug = random_affine(parent, cfg, rng);
            aug.source = Source::Augmented { parent: Box::new(parent.source.clone()), copy: j / n + 1 };
            records.push(aug);
        }
    }
    Dataset::from_records(records)
}
