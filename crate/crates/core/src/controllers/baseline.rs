//! Tracking-by-detection baseline: synthetic detections, Kalman filtering
//! with greedy IoU association, and centroid control on confirmed tracks.

use crate::error::{Error, Result};
use crate::geometry::{self, BBox, ControlVector, Point};
use crate::simulator;

use super::detector::{Detection, SyntheticDetector};
use super::kalman::{KalmanParams, Track};
use super::{Controller, ControllerInput};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    /// `(track index, detection index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Greedy matching by descending IoU. Pairs below `iou_threshold` are never
/// matched; ties are broken by track index, then detection index.
pub fn associate(tracks: &[BBox], detections: &[BBox], iou_threshold: f64) -> Association {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (t, tb) in tracks.iter().enumerate() {
        for (d, db) in detections.iter().enumerate() {
            let iou = tb.iou(db);
            if iou >= iou_threshold {
                pairs.push((iou, t, d));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    let mut out = Association::default();
    for (_, t, d) in pairs {
        if !track_used[t] && !det_used[d] {
            track_used[t] = true;
            det_used[d] = true;
            out.matches.push((t, d));
        }
    }
    out.unmatched_tracks = (0..tracks.len()).filter(|&t| !track_used[t]).collect();
    out.unmatched_detections = (0..detections.len()).filter(|&d| !det_used[d]).collect();
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub iou_threshold: f64,
    /// Consecutive misses after which a confirmed track is dropped.
    pub max_age: u32,
    /// Consecutive hits needed to confirm a new track.
    pub min_hits: u32,
    pub kalman: KalmanParams,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            max_age: 5,
            min_hits: 2,
            kalman: KalmanParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracker {
    pub cfg: TrackerConfig,
    pub tracks: Vec<Track>,
    next_id: u64,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Self {
            cfg,
            tracks: Vec::new(),
            next_id: 0,
        }
    }

    pub fn reset(&mut self) {
        self.tracks.clear();
        self.next_id = 0;
    }

    /// Predict, associate, update, and manage track births and deaths.
    pub fn step(&mut self, detections: &[Detection]) -> Result<()> {
        let k = self.cfg.kalman;
        let predicted: Vec<Track> = self
            .tracks
            .iter()
            .map(|t| t.predict(&k))
            .collect::<Result<_>>()?;
        let track_boxes: Vec<BBox> = predicted.iter().map(Track::bbox).collect();
        let det_boxes: Vec<BBox> = detections.iter().map(|d| d.bbox).collect();
        let assoc = associate(&track_boxes, &det_boxes, self.cfg.iou_threshold);

        let mut next: Vec<Option<Track>> = predicted.into_iter().map(Some).collect();
        for &(t, d) in &assoc.matches {
            let track = next[t].take().expect("each track matched once");
            let mut track = track.update(&det_boxes[d], &k)?;
            track.hits += 1;
            track.misses = 0;
            if track.hits >= self.cfg.min_hits {
                track.confirmed = true;
            }
            next[t] = Some(track);
        }
        for &t in &assoc.unmatched_tracks {
            let track = next[t].as_mut().expect("unmatched track present");
            track.misses += 1;
            track.hits = 0;
            if !track.confirmed || track.misses >= self.cfg.max_age {
                next[t] = None;
            }
        }
        let mut tracks: Vec<Track> = next.into_iter().flatten().collect();
        for &d in &assoc.unmatched_detections {
            let mut track = Track::from_detection(self.next_id, &det_boxes[d], &k);
            self.next_id += 1;
            track.confirmed = track.hits >= self.cfg.min_hits;
            tracks.push(track);
        }
        self.tracks = tracks;
        Ok(())
    }

    pub fn confirmed(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.confirmed)
    }

    /// Move every track by `(dx, dy)`, e.g. to follow a camera motion.
    pub fn shift(&mut self, dx: f64, dy: f64) {
        for t in &mut self.tracks {
            t.shift(dx, dy);
        }
    }
}

/// Detection, tracking and centroid control.
///
/// Tracks live in crop coordinates. After issuing a control the tracker is
/// shifted by the resulting camera motion so the next prediction lines up
/// with the next crop.
#[derive(Debug, Clone)]
pub struct BaselineController {
    pub detector: SyntheticDetector,
    pub tracker: Tracker,
}

impl BaselineController {
    pub fn new(detector: SyntheticDetector, tracker: TrackerConfig) -> Self {
        Self {
            detector,
            tracker: Tracker::new(tracker),
        }
    }
}

impl Controller for BaselineController {
    fn name(&self) -> &str {
        "baseline"
    }

    fn control(&mut self, input: &ControllerInput<'_>) -> Result<ControlVector> {
        let boxes = input
            .boxes
            .ok_or_else(|| Error::Invalid("synthetic detector needs ground-truth boxes".into()))?;
        let view = input.crop_window();
        let detections = self.detector.detect(boxes, view.w, view.h, input.frame_index);
        self.tracker.step(&detections)?;

        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for t in self.tracker.confirmed() {
            let (x, y) = t.center();
            sx += x;
            sy += y;
            n += 1;
        }
        if n == 0 {
            return Ok(ControlVector::ZERO);
        }
        // Coasting tracks may have drifted out of view; aim at the nearest
        // point of the crop instead.
        let target = Point::new(
            (sx / n as f64).clamp(0.0, view.w),
            (sy / n as f64).clamp(0.0, view.h),
        );
        let m = geometry::normalized_offset(&view, &target)?;
        let (dx, dy) = simulator::control_to_pixels(&m, view.w, view.h);
        self.tracker.shift(-dx, -dy);
        Ok(m)
    }

    fn reset(&mut self) {
        self.tracker.reset();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::DetectorConfig;
    use crate::sequences::Annotation;
    use image::RgbImage;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn identical_boxes_match() {
        let a = associate(&[bx(0.0, 0.0, 10.0, 10.0)], &[bx(0.0, 0.0, 10.0, 10.0)], 0.3);
        assert_eq!(a.matches, vec![(0, 0)]);
        assert!(a.unmatched_tracks.is_empty() && a.unmatched_detections.is_empty());
    }

    #[test]
    fn low_iou_stays_unmatched() {
        // Unit-height strips [0, 12] and [8, 20]: overlap 4, union 20.
        let t = bx(0.0, 0.0, 12.0, 1.0);
        let d = bx(8.0, 0.0, 12.0, 1.0);
        assert!((t.iou(&d) - 0.2).abs() < 1e-12);
        let a = associate(&[t], &[d], 0.3);
        assert!(a.matches.is_empty());
        assert_eq!((a.unmatched_tracks, a.unmatched_detections), (vec![0], vec![0]));
    }

    /// Brute force over every feasible greedy order from a given IoU table.
    fn greedy_reference(iou: &[[f64; 2]; 2], thr: f64) -> Vec<(usize, usize)> {
        let mut cells: Vec<(f64, usize, usize)> = (0..2)
            .flat_map(|t| (0..2).map(move |d| (iou[t][d], t, d)))
            .filter(|c| c.0 >= thr)
            .collect();
        let mut out = Vec::new();
        while let Some(best) = cells
            .iter()
            .cloned()
            .fold(None, |acc: Option<(f64, usize, usize)>, c| match acc {
                Some(a) if a.0 >= c.0 => Some(a),
                _ => Some(c),
            })
        {
            out.push((best.1, best.2));
            cells.retain(|c| c.1 != best.1 && c.2 != best.2);
        }
        out
    }

    #[test]
    fn greedy_picks_highest_first() {
        // Unit-height strips, so IoU is the interval overlap over the union.
        // Table: (a,1)=0.9 (a,2)=0.4 (b,1)=0.5 (b,2)=0.45.
        let det1 = bx(0.0, 0.0, 100.0, 1.0);
        let a = bx(0.0, 0.0, 90.0, 1.0);
        let b = bx(0.0, 0.0, 50.0, 1.0);
        // det2 is 36 wide inside a; its overlap o with b solves o / (86 - o) = 0.45.
        let o = 0.45 * 86.0 / 1.45;
        let det2 = bx(50.0 - o, 0.0, 36.0, 1.0);
        let ious = [[a.iou(&det1), a.iou(&det2)], [b.iou(&det1), b.iou(&det2)]];
        let want = [[0.9, 0.4], [0.5, 0.45]];
        for t in 0..2 {
            for d in 0..2 {
                assert!((ious[t][d] - want[t][d]).abs() < 1e-12, "{t},{d}: {}", ious[t][d]);
            }
        }
        let res = associate(&[a, b], &[det1, det2], 0.3);
        assert_eq!(res.matches, greedy_reference(&ious, 0.3));
        assert_eq!(res.matches, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn greedy_order_on_exact_table() {
        let ious = [[0.9, 0.4], [0.5, 0.45]];
        assert_eq!(greedy_reference(&ious, 0.3), vec![(0, 0), (1, 1)]);
    }

    fn input<'a>(crop: &'a RgbImage, boxes: &'a [Annotation], f: usize) -> ControllerInput<'a> {
        ControllerInput {
            crop,
            boxes: Some(boxes),
            frame_index: f,
        }
    }

    fn baseline(min_hits: u32, max_age: u32) -> BaselineController {
        BaselineController::new(
            SyntheticDetector::new(DetectorConfig::noiseless(), 0),
            TrackerConfig {
                min_hits,
                max_age,
                ..TrackerConfig::default()
            },
        )
    }

    #[test]
    fn no_detections_gives_zero_control() {
        let crop = RgbImage::new(64, 48);
        let mut c = baseline(2, 5);
        for f in 0..10 {
            assert_eq!(c.control(&input(&crop, &[], f)).unwrap(), ControlVector::ZERO);
        }
    }

    #[test]
    fn centered_static_target_gives_zero_control() {
        let crop = RgbImage::new(64, 48);
        let boxes = [Annotation {
            target_id: 0,
            bbox: BBox::from_center(32.0, 24.0, 8.0, 16.0).unwrap(),
        }];
        let mut c = baseline(1, 5);
        for f in 0..10 {
            let m = c.control(&input(&crop, &boxes, f)).unwrap();
            assert!(m.max_abs() < 1e-12, "frame {f}: {m:?}");
        }
    }

    #[test]
    fn track_dies_after_max_age_misses() {
        let crop = RgbImage::new(64, 48);
        let boxes = [Annotation {
            target_id: 0,
            bbox: BBox::from_center(40.0, 24.0, 8.0, 16.0).unwrap(),
        }];
        let max_age = 4;
        let mut c = baseline(2, max_age);
        // Tentative on the first frame, confirmed on the second.
        assert_eq!(c.control(&input(&crop, &boxes, 0)).unwrap(), ControlVector::ZERO);
        let m = c.control(&input(&crop, &boxes, 1)).unwrap();
        assert!(m.mx > 0.0);
        // Target gone: the track coasts for max_age - 1 frames, then dies.
        for f in 0..max_age as usize {
            let m = c.control(&input(&crop, &[], 2 + f)).unwrap();
            let alive = f + 1 < max_age as usize;
            assert_eq!(c.tracker.confirmed().count(), alive as usize, "miss {}", f + 1);
            if !alive {
                assert_eq!(m, ControlVector::ZERO);
            }
        }
        assert_eq!(c.control(&input(&crop, &[], 99)).unwrap(), ControlVector::ZERO);
    }

    #[test]
    fn tracker_is_deterministic() {
        let dets: Vec<Vec<Detection>> = (0..20)
            .map(|i| {
                vec![Detection {
                    bbox: bx(5.0 + i as f64, 10.0, 8.0, 16.0),
                    score: 1.0,
                }]
            })
            .collect();
        let run = || {
            let mut t = Tracker::new(TrackerConfig::default());
            let mut hist = Vec::new();
            for d in &dets {
                t.step(d).unwrap();
                hist.push(t.tracks.clone());
            }
            hist
        };
        assert_eq!(run(), run());
    }
}
