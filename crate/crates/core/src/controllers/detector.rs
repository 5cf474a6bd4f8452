use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};

use crate::geometry::BBox;
use crate::seed;
use crate::sequences::Annotation;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    /// Crop-relative box.
    pub bbox: BBox,
    pub score: f64,
}

/// Noise model of the stand-in object detector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectorConfig {
    /// Probability of dropping each true box.
    pub p_miss: f64,
    /// Standard deviation of center jitter, pixels.
    pub center_sigma: f64,
    /// Standard deviation of relative size jitter.
    pub size_sigma: f64,
    /// Expected number of false positives per frame.
    pub fp_rate: f64,
}

impl DetectorConfig {
    pub fn noiseless() -> Self {
        Self::default()
    }
}

/// Detector that derives its output from ground truth by dropping,
/// jittering and hallucinating boxes.
///
/// Only the visible part of each box is reported: boxes are clipped to the
/// crop and boxes entirely outside it are never detected.
#[derive(Debug, Clone)]
pub struct SyntheticDetector {
    pub cfg: DetectorConfig,
    pub seed: u64,
}

impl SyntheticDetector {
    pub fn new(cfg: DetectorConfig, seed: u64) -> Self {
        Self { cfg, seed }
    }

    /// Detections for one frame. The output depends only on the inputs, the
    /// frame index and the detector seed.
    pub fn detect(
        &self,
        boxes: &[Annotation],
        crop_w: f64,
        crop_h: f64,
        frame_index: usize,
    ) -> Vec<Detection> {
        let mut rng = seed::rng_for(self.seed, &[0xDE7, frame_index as u64]);
        let cfg = &self.cfg;
        let mut out = Vec::new();
        for a in boxes {
            let Some(visible) = a.bbox.clipped(crop_w, crop_h) else {
                continue;
            };
            if cfg.p_miss > 0.0 && rng.random_bool(cfg.p_miss.min(1.0)) {
                continue;
            }
            let mut c = visible.center();
            let (mut w, mut h) = (visible.w, visible.h);
            if cfg.center_sigma > 0.0 {
                let n = Normal::new(0.0, cfg.center_sigma).expect("finite sigma");
                c.x += n.sample(&mut rng);
                c.y += n.sample(&mut rng);
            }
            if cfg.size_sigma > 0.0 {
                let n = Normal::new(0.0, cfg.size_sigma).expect("finite sigma");
                w *= (1.0 + n.sample(&mut rng)).max(0.1);
                h *= (1.0 + n.sample(&mut rng)).max(0.1);
            }
            let jittered = BBox {
                x: c.x - w / 2.0,
                y: c.y - h / 2.0,
                w,
                h,
            };
            if let Some(bbox) = jittered.clipped(crop_w, crop_h) {
                out.push(Detection { bbox, score: 1.0 });
            }
        }
        if cfg.fp_rate > 0.0 {
            let n = Poisson::new(cfg.fp_rate).expect("positive rate").sample(&mut rng) as usize;
            for _ in 0..n {
                let w = rng.random_range(0.05..0.25) * crop_w;
                let h = rng.random_range(0.1..0.45) * crop_h;
                let x = rng.random_range(0.0..=(crop_w - w));
                let y = rng.random_range(0.0..=(crop_h - h));
                out.push(Detection {
                    bbox: BBox { x, y, w, h },
                    score: rng.random_range(0.3..0.9),
                });
            }
        }
        out
    }
}
