//! Supervised (crop, control) datasets: random window sampling, splitting,
//! near-zero-capped batch sampling and label-aware augmentation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geometry::{self, ControlVector, Window};
use crate::raster;
use crate::seed;
use crate::sequences::{Frame, Sequence};
use crate::simulator;

pub const LABELS_FILE: &str = "labels.csv";
pub const LABELS_HEADER: &str = "sample_id,mx,my,seq,frame,cx,cy";

/// Where a sample was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    pub sequence: String,
    pub frame: usize,
    pub window: Window,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub label: ControlVector,
    pub meta: SampleMeta,
}

impl Sample {
    /// Mirror the crop and negate the pan component.
    pub fn flipped(&self) -> Sample {
        Sample {
            image: raster::flip_horizontal(&self.image),
            label: self.label.flipped_horizontally(),
            meta: self.meta.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub crop_w: u32,
    pub crop_h: u32,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<ControlVector> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Append the samples of `other`, which must share the crop size.
    pub fn extend(&mut self, other: Dataset) -> Result<()> {
        if self.samples.is_empty() {
            self.crop_w = other.crop_w;
            self.crop_h = other.crop_h;
        } else if !other.is_empty() && (other.crop_w, other.crop_h) != (self.crop_w, self.crop_h) {
            return Err(Error::Shape(format!(
                "cannot merge {}x{} crops into a {}x{} dataset",
                other.crop_w, other.crop_h, self.crop_w, self.crop_h
            )));
        }
        self.samples.extend(other.samples);
        Ok(())
    }
}

/// `n` samples, each cut from a uniformly chosen frame under a uniformly
/// placed integer-aligned window.
pub fn generate_samples(seq: &Sequence, n: usize, crop_w: u32, crop_h: u32, seed: u64) -> Result<Dataset> {
    if crop_w == 0 || crop_h == 0 || crop_w > seq.world_w || crop_h > seq.world_h {
        return Err(Error::Domain(format!(
            "crop {crop_w}x{crop_h} does not fit in world {}x{}",
            seq.world_w, seq.world_h
        )));
    }
    if n > 0 && seq.is_empty() {
        return Err(Error::Domain(format!("sequence {} has no frames", seq.name)));
    }
    let mut rng = seed::rng(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let fi = rng.random_range(0..seq.len());
        let left = rng.random_range(0..=seq.world_w - crop_w);
        let top = rng.random_range(0..=seq.world_h - crop_h);
        let window = Window::from_origin(left as f64, top as f64, crop_w as f64, crop_h as f64)?;
        let frame = &seq.frames[fi];
        samples.push(Sample {
            image: raster::crop(&frame.image, &window)?,
            label: simulator::ground_truth_label(frame, &window),
            meta: SampleMeta {
                sequence: seq.name.clone(),
                frame: frame.index,
                window,
            },
        });
    }
    Ok(Dataset {
        samples,
        crop_w,
        crop_h,
    })
}

/// Random partition into a training part of `round(n * train_fraction)`
/// samples (halves round up) and the rest.
pub fn split_dataset(ds: Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let n = ds.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut slots: Vec<Option<Sample>> = ds.samples.into_iter().map(Some).collect();
    let mut take = |ix: &[usize]| -> Vec<Sample> {
        ix.iter()
            .map(|&i| slots[i].take().expect("each index taken once"))
            .collect()
    };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..]);
    let mk = |samples| Dataset {
        samples,
        crop_w: ds.crop_w,
        crop_h: ds.crop_h,
    };
    Ok((mk(train), mk(val)))
}

/// Whether a label counts as "near zero" under the balancing threshold.
pub fn is_near_zero(label: &ControlVector, tau: f64) -> bool {
    label.max_abs() < tau
}

/// Endless stream of index batches drawn uniformly with replacement, where
/// a near-zero draw beyond the per-batch cap is replaced by a draw from the
/// other samples.
#[derive(Debug)]
pub struct BalancedBatches {
    batch_size: usize,
    cap: usize,
    n: usize,
    near_zero: Vec<bool>,
    others: Vec<usize>,
    rng: seed::Rng,
    waived: bool,
}

impl BalancedBatches {
    pub fn new(
        labels: &[ControlVector],
        batch_size: usize,
        near_zero_tau: f64,
        max_near_zero_frac: f64,
        seed: u64,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Domain("cannot draw batches from an empty dataset".into()));
        }
        if batch_size == 0 || batch_size > labels.len() {
            return Err(Error::BatchTooLarge {
                batch_size,
                dataset_size: labels.len(),
            });
        }
        if !(0.0..=1.0).contains(&max_near_zero_frac) {
            return Err(Error::Config(format!(
                "near-zero fraction {max_near_zero_frac} outside [0, 1]"
            )));
        }
        let near_zero: Vec<bool> = labels.iter().map(|l| is_near_zero(l, near_zero_tau)).collect();
        let others: Vec<usize> = (0..labels.len()).filter(|&i| !near_zero[i]).collect();
        let cap = (batch_size as f64 * max_near_zero_frac).ceil() as usize;
        let waived = others.is_empty() && cap < batch_size;
        if waived {
            log::warn!(
                "every label is near zero (tau {near_zero_tau}); near-zero cap of {cap} per batch waived"
            );
        }
        Ok(Self {
            batch_size,
            cap,
            n: labels.len(),
            near_zero,
            others,
            rng: seed::rng(seed),
            waived,
        })
    }

    /// The near-zero cap could not be met and is not enforced.
    pub fn waived(&self) -> bool {
        self.waived
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.batch_size);
        let mut near = 0;
        while batch.len() < self.batch_size {
            let mut i = self.rng.random_range(0..self.n);
            if self.near_zero[i] {
                if near >= self.cap && !self.waived {
                    i = self.others[self.rng.random_range(0..self.others.len())];
                } else {
                    near += 1;
                }
            }
            batch.push(i);
        }
        batch
    }
}

impl Iterator for BalancedBatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}

/// Probabilities and magnitudes of the augmentation pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub p_flip: f64,
    pub p_translate: f64,
    /// Largest window shift per axis, in pixels.
    pub max_jitter: u32,
    pub p_brightness: f64,
    pub p_contrast: f64,
    pub p_color: f64,
    /// Probability of either a blur or a sharpen.
    pub p_blur_sharpen: f64,
    pub max_brightness: f32,
    pub max_contrast: f32,
    pub max_color_shift: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_flip: 0.5,
            p_translate: 0.5,
            max_jitter: 16,
            p_brightness: 0.3,
            p_contrast: 0.3,
            p_color: 0.3,
            p_blur_sharpen: 0.3,
            max_brightness: 30.0,
            max_contrast: 0.3,
            max_color_shift: 15.0,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            p_flip: 0.0,
            p_translate: 0.0,
            p_brightness: 0.0,
            p_contrast: 0.0,
            p_color: 0.0,
            p_blur_sharpen: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_flip", self.p_flip),
            ("p_translate", self.p_translate),
            ("p_brightness", self.p_brightness),
            ("p_contrast", self.p_contrast),
            ("p_color", self.p_color),
            ("p_blur_sharpen", self.p_blur_sharpen),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if !(0.0..1.0).contains(&self.max_contrast) {
            return Err(Error::Config("max_contrast must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Re-crop `s` from its source frame under a window shifted by `(dx, dy)`
/// and clamped to the world, recomputing the label.
pub fn translate_sample(s: &Sample, frame: &Frame, dx: f64, dy: f64) -> Result<Sample> {
    let (ww, wh) = (frame.image.width() as f64, frame.image.height() as f64);
    let window = geometry::clamp_window(&s.meta.window.shifted(dx, dy), ww, wh)?;
    Ok(Sample {
        image: raster::crop(&frame.image, &window)?,
        label: simulator::ground_truth_label(frame, &window),
        meta: SampleMeta {
            window,
            ..s.meta.clone()
        },
    })
}

/// Translation (needs the source frame), then horizontal flip, then
/// photometric perturbations. Only the first two change the label.
pub fn augment_sample(s: &Sample, source: Option<&Frame>, cfg: &AugmentConfig, seed: u64) -> Result<Sample> {
    let mut rng = seed::rng(seed);
    let mut out = match source {
        Some(frame) if cfg.max_jitter > 0 && rng.random_bool(cfg.p_translate) => {
            let j = cfg.max_jitter as i64;
            let dx = rng.random_range(-j..=j) as f64;
            let dy = rng.random_range(-j..=j) as f64;
            translate_sample(s, frame, dx, dy)?
        }
        _ => s.clone(),
    };
    if rng.random_bool(cfg.p_flip) {
        out = out.flipped();
    }
    if rng.random_bool(cfg.p_brightness) {
        let d = rng.random_range(-1.0..=1.0) * cfg.max_brightness;
        out.image = raster::adjust_brightness(&out.image, d);
    }
    if rng.random_bool(cfg.p_contrast) {
        let f = 1.0 + rng.random_range(-1.0..=1.0) * cfg.max_contrast;
        out.image = raster::adjust_contrast(&out.image, f);
    }
    if rng.random_bool(cfg.p_color) {
        let m = cfg.max_color_shift;
        let shift = [
            rng.random_range(-1.0..=1.0) * m,
            rng.random_range(-1.0..=1.0) * m,
            rng.random_range(-1.0..=1.0) * m,
        ];
        out.image = raster::shift_color(&out.image, shift);
    }
    if rng.random_bool(cfg.p_blur_sharpen) {
        let sigma = rng.random_range(0.4..1.2);
        out.image = if rng.random_bool(0.5) {
            raster::blur(&out.image, sigma)
        } else {
            raster::sharpen(&out.image, sigma, 2)
        };
    }
    Ok(out)
}

/// The frame a sample was cut from, if `sources` holds its sequence.
pub fn source_frame<'a>(sources: &'a [Sequence], meta: &SampleMeta) -> Option<&'a Frame> {
    sources
        .iter()
        .find(|s| s.name == meta.sequence)
        .and_then(|s| s.frames.get(meta.frame))
}

pub fn sample_file_name(i: usize) -> String {
    format!("sample_{i:06}.png")
}

/// Write crops as PNGs plus a labels file.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::from(LABELS_HEADER);
    csv.push('\n');
    for (i, s) in ds.samples.iter().enumerate() {
        if s.meta.sequence.contains([',', '\n']) {
            return Err(Error::Invalid(format!(
                "sequence name {:?} cannot be stored in a CSV field",
                s.meta.sequence
            )));
        }
        let path = dir.join(sample_file_name(i));
        s.image.save(&path).map_err(|e| Error::image(&path, e))?;
        let c = s.meta.window.center();
        writeln!(
            csv,
            "{i},{:.6},{:.6},{},{},{:.6},{:.6}",
            s.label.mx, s.label.my, s.meta.sequence, s.meta.frame, c.x, c.y
        )
        .expect("writing to a String");
    }
    let path = dir.join(LABELS_FILE);
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}

/// Read a dataset written by [`save_dataset`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(LABELS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |line: usize, message: String| Error::Annotation {
        path: path.clone(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == LABELS_HEADER => {}
        _ => return Err(bad(1, format!("expected header `{LABELS_HEADER}`"))),
    }
    let mut ds = Dataset::default();
    for (ln, line) in lines {
        let ln = ln + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(ln, format!("expected 7 fields, got {}", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(ln, format!("`{s}` is not a number")))
        };
        let id: usize = f[0]
            .trim()
            .parse()
            .map_err(|_| bad(ln, format!("bad sample id `{}`", f[0])))?;
        let frame: usize = f[4]
            .trim()
            .parse()
            .map_err(|_| bad(ln, format!("bad frame index `{}`", f[4])))?;
        let label = ControlVector::new(num(f[1])?, num(f[2])?).map_err(|e| bad(ln, e.to_string()))?;
        let img_path = dir.join(sample_file_name(id));
        let image = image::open(&img_path)
            .map_err(|e| Error::image(&img_path, e))?
            .to_rgb8();
        if ds.samples.is_empty() {
            ds.crop_w = image.width();
            ds.crop_h = image.height();
        } else if (image.width(), image.height()) != (ds.crop_w, ds.crop_h) {
            return Err(bad(ln, "crop size differs from earlier samples".into()));
        }
        let window = Window::new(num(f[5])?, num(f[6])?, image.width() as f64, image.height() as f64)
            .map_err(|e| bad(ln, e.to_string()))?;
        ds.samples.push(Sample {
            image,
            label,
            meta: SampleMeta {
                sequence: f[3].to_string(),
                frame,
                window,
            },
        });
    }
    Ok(ds)
}
