//! Flat `section.key = value` run configuration.
//!
//! Every key has a default; unknown keys and unparsable values are errors
//! that name the key. Per-module seeds are the global seed plus a fixed
//! offset (see [`SeedOffset`]).

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use activecam_core::controllers::{DetectorConfig, TrackerConfig};
use activecam_core::datagen::AugmentConfig;
use activecam_core::nn::{Scale, TrainConfig};
use activecam_core::sequences::Motion;
use activecam_core::SynthConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value {value:?} for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("{path}:{line}: expected `section.key = value`")]
    Syntax { path: PathBuf, line: usize },
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Offsets added to the global seed to get each module's seed.
#[derive(Debug, Clone, Copy)]
pub enum SeedOffset {
    Synth = 1,
    Datagen = 2,
    Split = 3,
    Train = 4,
    Detector = 5,
    Init = 6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Static,
    Oracle,
    Baseline,
    Cnn,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Static => "static",
            Self::Oracle => "oracle",
            Self::Baseline => "baseline",
            Self::Cnn => "cnn",
        }
    }
}

impl FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "static" => Ok(Self::Static),
            "oracle" => Ok(Self::Oracle),
            "baseline" => Ok(Self::Baseline),
            "cnn" => Ok(Self::Cnn),
            _ => Err("expected static, oracle, baseline or cnn".into()),
        }
    }
}

/// Where the closed-loop window starts on frame 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartWindow {
    /// Centered on the frame-0 target centroid.
    Targets,
    /// Centered on the given world point.
    At(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub run_dir: PathBuf,
    pub synth: SynthConfig,
    /// Number of sequences `synth` emits.
    pub synth_count: usize,
    /// Spread used whenever `synth.motion` is `group`.
    pub group_spread: f64,
    pub crop_w: u32,
    pub crop_h: u32,
    pub samples: usize,
    pub train_fraction: f64,
    pub scale: Scale,
    pub input_w: u32,
    pub input_h: u32,
    pub train: TrainConfig,
    pub filter_k: usize,
    pub detector: DetectorConfig,
    pub tracker: TrackerConfig,
    pub controllers: Vec<ControllerKind>,
    pub start: StartWindow,
    pub filter_cnn: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            run_dir: PathBuf::from("run"),
            synth: SynthConfig::default(),
            synth_count: 1,
            group_spread: 16.0,
            crop_w: 64,
            crop_h: 48,
            samples: 2000,
            train_fraction: 0.6,
            scale: Scale::Tiny,
            input_w: 64,
            input_h: 48,
            train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            filter_k: 3,
            detector: DetectorConfig::noiseless(),
            tracker: TrackerConfig::default(),
            controllers: vec![
                ControllerKind::Static,
                ControllerKind::Oracle,
                ControllerKind::Baseline,
                ControllerKind::Cnn,
            ],
            start: StartWindow::Targets,
            filter_cnn: true,
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "global seed; module seeds are seed + 1 (synth) .. seed + 6 (init)"),
    ("run.dir", "run directory receiving all outputs"),
    ("synth.name", "name of the synthetic sequence (suffixed _N when synth.count > 1)"),
    ("synth.count", "number of sequences emitted by `synth`"),
    ("synth.world_w", "world frame width, pixels"),
    ("synth.world_h", "world frame height, pixels"),
    ("synth.frames", "frames per sequence"),
    ("synth.targets", "targets per sequence"),
    ("synth.target_w_min", "smallest target width"),
    ("synth.target_w_max", "largest target width"),
    ("synth.target_h_min", "smallest target height"),
    ("synth.target_h_max", "largest target height"),
    ("synth.speed_min", "slowest target speed, pixels per frame"),
    ("synth.speed_max", "fastest target speed, pixels per frame"),
    ("synth.turn_prob", "per-frame probability of a new heading"),
    ("synth.texture_seed", "background texture seed"),
    ("synth.motion", "independent or group"),
    ("synth.margin", "minimum distance of targets from the world border, pixels"),
    ("synth.group_spread", "side of the square holding a target group, pixels"),
    ("datagen.crop_w", "camera window and crop width"),
    ("datagen.crop_h", "camera window and crop height"),
    ("datagen.samples", "samples drawn by `gen-data`, spread over its sequences"),
    ("datagen.train_fraction", "share of the dataset used for training, rest validates"),
    ("network.scale", "tiny or full"),
    ("network.input_w", "network input width, a multiple of 16"),
    ("network.input_h", "network input height, a multiple of 16"),
    ("train.lr", "initial Adam learning rate"),
    ("train.decay_factor", "learning-rate factor applied on a validation plateau"),
    ("train.plateau_patience", "epochs without improvement before decaying"),
    ("train.batch_size", "samples per batch"),
    ("train.batches_per_epoch", "batches per epoch"),
    ("train.epochs", "training epochs"),
    ("train.near_zero_tau", "labels with both |components| below this are near zero"),
    ("train.max_near_zero_frac", "cap on the near-zero share of a batch"),
    ("train.p_flip", "augmentation: horizontal flip probability"),
    ("train.p_translate", "augmentation: window jitter probability"),
    ("train.max_jitter", "augmentation: largest jitter per axis, pixels"),
    ("train.p_brightness", "augmentation: brightness shift probability"),
    ("train.p_contrast", "augmentation: contrast change probability"),
    ("train.p_color", "augmentation: per-channel color shift probability"),
    ("train.p_blur_sharpen", "augmentation: blur-or-sharpen probability"),
    ("train.max_brightness", "augmentation: largest brightness shift, intensity levels"),
    ("train.max_contrast", "augmentation: largest relative contrast change"),
    ("train.max_color_shift", "augmentation: largest per-channel shift, intensity levels"),
    ("filter.k", "window of the weighted moving average over CNN outputs"),
    ("filter.cnn", "smooth CNN outputs in closed loop (true or false)"),
    ("baseline.p_miss", "detector: probability of missing a box"),
    ("baseline.center_sigma", "detector: center jitter, pixels"),
    ("baseline.size_sigma", "detector: relative size jitter"),
    ("baseline.fp_rate", "detector: expected false positives per frame"),
    ("baseline.iou_threshold", "tracker: minimum IoU for a match"),
    ("baseline.max_age", "tracker: misses before a track is dropped"),
    ("baseline.min_hits", "tracker: hits before a track is confirmed"),
    ("baseline.q_pos", "tracker: position process noise, px^2"),
    ("baseline.q_vel", "tracker: velocity process noise, (px/frame)^2"),
    ("baseline.q_size", "tracker: size process noise, px^2"),
    ("baseline.r", "tracker: measurement noise per component, px^2"),
    ("eval.controllers", "comma-separated list of static, oracle, baseline, cnn"),
    ("eval.start", "`targets` or `x,y` world point for the first window center"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn list(v: &[ControllerKind]) -> String {
    v.iter().map(|c| c.name()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Defaults overridden by the file at `path`.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: origin.into(),
                line: i + 1,
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::BadValue {
            key: kv.into(),
            value: String::new(),
            reason: "expected key=value".into(),
        })?;
        self.set(k.trim(), v.trim())
    }

    pub fn module_seed(&self, m: SeedOffset) -> u64 {
        self.seed.wrapping_add(m as u64)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let s = &mut self.synth;
        let t = &mut self.train;
        let a: &mut AugmentConfig = &mut t.augment;
        let d = &mut self.detector;
        let tr = &mut self.tracker;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "run.dir" => self.run_dir = PathBuf::from(v),
            "synth.name" => s.name = v.to_string(),
            "synth.count" => self.synth_count = parse(key, v)?,
            "synth.world_w" => s.world_w = parse(key, v)?,
            "synth.world_h" => s.world_h = parse(key, v)?,
            "synth.frames" => s.frames = parse(key, v)?,
            "synth.targets" => s.targets = parse(key, v)?,
            "synth.target_w_min" => s.target_w.0 = parse(key, v)?,
            "synth.target_w_max" => s.target_w.1 = parse(key, v)?,
            "synth.target_h_min" => s.target_h.0 = parse(key, v)?,
            "synth.target_h_max" => s.target_h.1 = parse(key, v)?,
            "synth.speed_min" => s.speed.0 = parse(key, v)?,
            "synth.speed_max" => s.speed.1 = parse(key, v)?,
            "synth.turn_prob" => s.turn_prob = parse(key, v)?,
            "synth.texture_seed" => s.texture_seed = parse(key, v)?,
            "synth.margin" => s.margin = parse(key, v)?,
            "synth.motion" => {
                s.motion = match v {
                    "independent" => Motion::Independent,
                    "group" => Motion::Group {
                        spread: self.group_spread,
                    },
                    _ => return Err(bad(key, v, "expected independent or group")),
                }
            }
            "synth.group_spread" => {
                self.group_spread = parse(key, v)?;
                if let Motion::Group { spread } = &mut s.motion {
                    *spread = self.group_spread;
                }
            }
            "datagen.crop_w" => self.crop_w = parse(key, v)?,
            "datagen.crop_h" => self.crop_h = parse(key, v)?,
            "datagen.samples" => self.samples = parse(key, v)?,
            "datagen.train_fraction" => self.train_fraction = parse(key, v)?,
            "network.scale" => {
                self.scale = match v {
                    "tiny" => Scale::Tiny,
                    "full" => Scale::Full,
                    _ => return Err(bad(key, v, "expected tiny or full")),
                }
            }
            "network.input_w" => self.input_w = parse(key, v)?,
            "network.input_h" => self.input_h = parse(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.decay_factor" => t.decay_factor = parse(key, v)?,
            "train.plateau_patience" => t.plateau_patience = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.batches_per_epoch" => t.batches_per_epoch = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.near_zero_tau" => t.near_zero_tau = parse(key, v)?,
            "train.max_near_zero_frac" => t.max_near_zero_frac = parse(key, v)?,
            "train.p_flip" => a.p_flip = parse(key, v)?,
            "train.p_translate" => a.p_translate = parse(key, v)?,
            "train.max_jitter" => a.max_jitter = parse(key, v)?,
            "train.p_brightness" => a.p_brightness = parse(key, v)?,
            "train.p_contrast" => a.p_contrast = parse(key, v)?,
            "train.p_color" => a.p_color = parse(key, v)?,
            "train.p_blur_sharpen" => a.p_blur_sharpen = parse(key, v)?,
            "train.max_brightness" => a.max_brightness = parse(key, v)?,
            "train.max_contrast" => a.max_contrast = parse(key, v)?,
            "train.max_color_shift" => a.max_color_shift = parse(key, v)?,
            "filter.k" => self.filter_k = parse(key, v)?,
            "filter.cnn" => self.filter_cnn = parse(key, v)?,
            "baseline.p_miss" => d.p_miss = parse(key, v)?,
            "baseline.center_sigma" => d.center_sigma = parse(key, v)?,
            "baseline.size_sigma" => d.size_sigma = parse(key, v)?,
            "baseline.fp_rate" => d.fp_rate = parse(key, v)?,
            "baseline.iou_threshold" => tr.iou_threshold = parse(key, v)?,
            "baseline.max_age" => tr.max_age = parse(key, v)?,
            "baseline.min_hits" => tr.min_hits = parse(key, v)?,
            "baseline.q_pos" => tr.kalman.q_pos = parse(key, v)?,
            "baseline.q_vel" => tr.kalman.q_vel = parse(key, v)?,
            "baseline.q_size" => tr.kalman.q_size = parse(key, v)?,
            "baseline.r" => tr.kalman.r = parse(key, v)?,
            "eval.controllers" => {
                let kinds = v
                    .split(',')
                    .map(|c| c.trim().parse::<ControllerKind>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| bad(key, v, &e))?;
                if kinds.is_empty() {
                    return Err(bad(key, v, "empty list"));
                }
                self.controllers = kinds;
            }
            "eval.start" => {
                self.start = if v == "targets" {
                    StartWindow::Targets
                } else {
                    let (x, y) = v
                        .split_once(',')
                        .ok_or_else(|| bad(key, v, "expected `targets` or `x,y`"))?;
                    StartWindow::At(parse(key, x.trim())?, parse(key, y.trim())?)
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Current value of `key` in the syntax `set` accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.synth;
        let t = &self.train;
        let a = &t.augment;
        let d = &self.detector;
        let tr = &self.tracker;
        let v = match key {
            "seed" => self.seed.to_string(),
            "run.dir" => self.run_dir.display().to_string(),
            "synth.name" => s.name.clone(),
            "synth.count" => self.synth_count.to_string(),
            "synth.world_w" => s.world_w.to_string(),
            "synth.world_h" => s.world_h.to_string(),
            "synth.frames" => s.frames.to_string(),
            "synth.targets" => s.targets.to_string(),
            "synth.target_w_min" => s.target_w.0.to_string(),
            "synth.target_w_max" => s.target_w.1.to_string(),
            "synth.target_h_min" => s.target_h.0.to_string(),
            "synth.target_h_max" => s.target_h.1.to_string(),
            "synth.speed_min" => s.speed.0.to_string(),
            "synth.speed_max" => s.speed.1.to_string(),
            "synth.turn_prob" => s.turn_prob.to_string(),
            "synth.texture_seed" => s.texture_seed.to_string(),
            "synth.margin" => s.margin.to_string(),
            "synth.motion" => match s.motion {
                Motion::Independent => "independent".into(),
                Motion::Group { .. } => "group".into(),
            },
            "synth.group_spread" => self.group_spread.to_string(),
            "datagen.crop_w" => self.crop_w.to_string(),
            "datagen.crop_h" => self.crop_h.to_string(),
            "datagen.samples" => self.samples.to_string(),
            "datagen.train_fraction" => self.train_fraction.to_string(),
            "network.scale" => match self.scale {
                Scale::Tiny => "tiny".into(),
                Scale::Full => "full".into(),
            },
            "network.input_w" => self.input_w.to_string(),
            "network.input_h" => self.input_h.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.decay_factor" => t.decay_factor.to_string(),
            "train.plateau_patience" => t.plateau_patience.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.batches_per_epoch" => t.batches_per_epoch.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.near_zero_tau" => t.near_zero_tau.to_string(),
            "train.max_near_zero_frac" => t.max_near_zero_frac.to_string(),
            "train.p_flip" => a.p_flip.to_string(),
            "train.p_translate" => a.p_translate.to_string(),
            "train.max_jitter" => a.max_jitter.to_string(),
            "train.p_brightness" => a.p_brightness.to_string(),
            "train.p_contrast" => a.p_contrast.to_string(),
            "train.p_color" => a.p_color.to_string(),
            "train.p_blur_sharpen" => a.p_blur_sharpen.to_string(),
            "train.max_brightness" => a.max_brightness.to_string(),
            "train.max_contrast" => a.max_contrast.to_string(),
            "train.max_color_shift" => a.max_color_shift.to_string(),
            "filter.k" => self.filter_k.to_string(),
            "filter.cnn" => self.filter_cnn.to_string(),
            "baseline.p_miss" => d.p_miss.to_string(),
            "baseline.center_sigma" => d.center_sigma.to_string(),
            "baseline.size_sigma" => d.size_sigma.to_string(),
            "baseline.fp_rate" => d.fp_rate.to_string(),
            "baseline.iou_threshold" => tr.iou_threshold.to_string(),
            "baseline.max_age" => tr.max_age.to_string(),
            "baseline.min_hits" => tr.min_hits.to_string(),
            "baseline.q_pos" => tr.kalman.q_pos.to_string(),
            "baseline.q_vel" => tr.kalman.q_vel.to_string(),
            "baseline.q_size" => tr.kalman.q_size.to_string(),
            "baseline.r" => tr.kalman.r.to_string(),
            "eval.controllers" => list(&self.controllers),
            "eval.start" => match self.start {
                StartWindow::Targets => "targets".into(),
                StartWindow::At(x, y) => format!("{x},{y}"),
            },
            _ => return None,
        };
        Some(v)
    }

    /// The whole configuration, one `key = value` line per key.
    pub fn render(&self) -> String {
        KEYS.iter()
            .map(|(k, _)| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    /// Train config with the module seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.module_seed(SeedOffset::Train),
            ..self.train
        }
    }
}

fn bad(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: reason.into(),
    }
}

/// Key reference for `--help`: every key, its default and its meaning.
pub fn key_help() -> String {
    let d = RunConfig::default();
    let mut out = String::from("Config keys (`section.key = value`, defaults shown):\n");
    for (k, doc) in KEYS {
        out.push_str(&format!("  {k} = {}\n      {doc}\n", d.get(k).expect("listed key")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips_through_get_and_set() {
        let d = RunConfig::default();
        for (k, _) in KEYS {
            let mut c = RunConfig::default();
            c.set(k, &d.get(k).unwrap()).unwrap();
            assert_eq!(c, d, "{k}");
        }
    }

    #[test]
    fn rendered_config_parses_back() {
        let mut c = RunConfig::default();
        c.set("synth.motion", "group").unwrap();
        c.set("eval.start", "100,80.5").unwrap();
        c.set("train.lr", "0.003").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.render(), Path::new("x")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut c = RunConfig::default();
        let e = c.apply_text("seed = 3\ntrain.speed = 2\n", Path::new("x")).unwrap_err();
        assert!(e.to_string().contains("train.speed"), "{e}");
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn bad_value_names_the_key() {
        let mut c = RunConfig::default();
        let e = c.set("train.epochs", "many").unwrap_err();
        assert!(e.to_string().contains("train.epochs"), "{e}");
        let e = c.set("eval.controllers", "oracle,psychic").unwrap_err();
        assert!(e.to_string().contains("eval.controllers"), "{e}");
    }

    #[test]
    fn missing_equals_reports_the_line() {
        let mut c = RunConfig::default();
        let e = c.apply_text("# header\n\nseed 3\n", Path::new("a.cfg")).unwrap_err();
        assert_eq!(e.to_string(), "a.cfg:3: expected `section.key = value`");
    }

    #[test]
    fn comments_and_spacing_are_ignored() {
        let mut c = RunConfig::default();
        c.apply_text("  seed=9   # trailing\nsynth.frames =  12\n", Path::new("x")).unwrap();
        assert_eq!((c.seed, c.synth.frames), (9, 12));
    }

    #[test]
    fn group_spread_survives_either_key_order() {
        let mut a = RunConfig::default();
        a.apply_text("synth.group_spread = 10\nsynth.motion = group\n", Path::new("x")).unwrap();
        let mut b = RunConfig::default();
        b.apply_text("synth.motion = group\nsynth.group_spread = 10\n", Path::new("x")).unwrap();
        assert_eq!(a.synth.motion, Motion::Group { spread: 10.0 });
        assert_eq!(b.synth.motion, a.synth.motion);
    }

    #[test]
    fn module_seeds_are_offsets() {
        let c = RunConfig {
            seed: 100,
            ..RunConfig::default()
        };
        assert_eq!(c.module_seed(SeedOffset::Synth), 101);
        assert_eq!(c.module_seed(SeedOffset::Init), 106);
        assert_eq!(c.train_config().seed, 104);
    }

    #[test]
    fn every_key_is_documented_once() {
        let mut seen = std::collections::HashSet::new();
        for (k, doc) in KEYS {
            assert!(seen.insert(*k), "{k}");
            assert!(!doc.is_empty());
        }
        assert!(key_help().contains("train.plateau_patience = 10"));
    }
}
