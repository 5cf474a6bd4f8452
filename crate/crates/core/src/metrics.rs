//! Monitoring metrics over closed-loop traces and per-image control errors.

use std::fmt::Write as _;

use crate::controllers::{Controller, ControllerInput};
use crate::datagen::{self, Dataset};
use crate::error::{Error, Result};
use crate::geometry::{self, ControlVector};
use crate::sequences::Sequence;
use crate::simulator::{self, EpisodeTrace};

/// Closed-loop monitoring quality of one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceMetrics {
    pub frames_evaluated: usize,
    /// Mean number of visible targets per frame.
    pub avg_targets_in_fov: f64,
    /// Fraction of frames with at least one visible target.
    pub monitoring_time: f64,
    /// Mean pixel distance from the window center to the visible centroid,
    /// over frames with a visible target. `None` if there were none.
    pub avg_centroid_distance: Option<f64>,
    pub max_targets_in_frame: usize,
}

/// Per-axis absolute control errors on still images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StillImageErrors {
    pub samples: usize,
    pub avg_abs_mx: f64,
    pub avg_abs_my: f64,
    pub max_abs_mx: f64,
    pub max_abs_my: f64,
}

impl StillImageErrors {
    /// Mean of the two per-axis average errors.
    pub fn avg(&self) -> f64 {
        (self.avg_abs_mx + self.avg_abs_my) / 2.0
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{x:.6}"))
}

impl TraceMetrics {
    /// `key = value` lines.
    pub fn to_kv(&self) -> String {
        format!(
            "frames_evaluated = {}\navg_targets_in_fov = {:.6}\nmonitoring_time = {:.6}\navg_centroid_distance = {}\n",
            self.frames_evaluated,
            self.avg_targets_in_fov,
            self.monitoring_time,
            opt(self.avg_centroid_distance)
        )
    }
}

impl StillImageErrors {
    pub fn to_kv(&self) -> String {
        format!(
            "samples = {}\navg_abs_mx = {:.6}\navg_abs_my = {:.6}\nmax_abs_mx = {:.6}\nmax_abs_my = {:.6}\n",
            self.samples, self.avg_abs_mx, self.avg_abs_my, self.max_abs_mx, self.max_abs_my
        )
    }
}

/// Recompute visibility for every record of `trace` against `seq`.
pub fn evaluate_trace(trace: &EpisodeTrace, seq: &Sequence) -> Result<TraceMetrics> {
    if trace.len() != seq.len() {
        return Err(Error::Invalid(format!(
            "trace has {} records but sequence {} has {} frames",
            trace.len(),
            seq.name,
            seq.len()
        )));
    }
    if trace.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty trace".into()));
    }
    let mut targets = 0usize;
    let mut max_targets = 0usize;
    let mut monitored = 0usize;
    let mut dist_sum = 0.0;
    for (rec, frame) in trace.records.iter().zip(&seq.frames) {
        if rec.frame_index != frame.index {
            return Err(Error::Invalid(format!(
                "trace record for frame {} paired with frame {}",
                rec.frame_index, frame.index
            )));
        }
        let visible = simulator::visible_annotations(frame, &rec.window);
        targets += visible.len();
        max_targets = max_targets.max(visible.len());
        if let Some(c) = geometry::centroid_of(visible.iter().map(|a| &a.bbox)) {
            monitored += 1;
            dist_sum += c.distance(&rec.window.center());
        }
    }
    let n = trace.len() as f64;
    Ok(TraceMetrics {
        frames_evaluated: trace.len(),
        avg_targets_in_fov: targets as f64 / n,
        monitoring_time: monitored as f64 / n,
        avg_centroid_distance: (monitored > 0).then(|| dist_sum / monitored as f64),
        max_targets_in_frame: max_targets,
    })
}

/// Absolute per-axis errors between predictions and labels.
pub fn errors_from_predictions(pred: &[ControlVector], truth: &[ControlVector]) -> Result<StillImageErrors> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut e = StillImageErrors {
        samples: pred.len(),
        avg_abs_mx: 0.0,
        avg_abs_my: 0.0,
        max_abs_mx: 0.0,
        max_abs_my: 0.0,
    };
    for (p, t) in pred.iter().zip(truth) {
        let (ex, ey) = ((p.mx - t.mx).abs(), (p.my - t.my).abs());
        e.avg_abs_mx += ex;
        e.avg_abs_my += ey;
        e.max_abs_mx = e.max_abs_mx.max(ex);
        e.max_abs_my = e.max_abs_my.max(ey);
    }
    e.avg_abs_mx /= pred.len() as f64;
    e.avg_abs_my /= pred.len() as f64;
    Ok(e)
}

/// Run `controller` on every sample independently, with its state reset
/// before each one. Ground-truth boxes are looked up in `sources` when the
/// sample's sequence is there.
pub fn still_image_errors(
    controller: &mut dyn Controller,
    ds: &Dataset,
    sources: &[Sequence],
) -> Result<StillImageErrors> {
    if ds.is_empty() {
        return Err(Error::Invalid("cannot evaluate on an empty dataset".into()));
    }
    let mut pred = Vec::with_capacity(ds.len());
    for s in &ds.samples {
        controller.reset();
        let boxes = datagen::source_frame(sources, &s.meta)
            .map(|f| simulator::crop_relative_boxes(f, &s.meta.window));
        let input = ControllerInput {
            crop: &s.image,
            boxes: boxes.as_deref(),
            frame_index: s.meta.frame,
        };
        pred.push(controller.control(&input)?);
    }
    errors_from_predictions(&pred, &ds.labels())
}

/// Plain-text table with one row per controller.
pub fn trace_table(rows: &[(&str, TraceMetrics)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>8} {:>16} {:>12} {:>18}",
        "controller", "frames", "avg_targets_fov", "monitoring", "avg_centroid_dist"
    );
    for (name, m) in rows {
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>16.3} {:>12.3} {:>18}",
            name,
            m.frames_evaluated,
            m.avg_targets_in_fov,
            m.monitoring_time,
            m.avg_centroid_distance.map_or("none".to_string(), |d| format!("{d:.2}"))
        );
    }
    out
}

pub fn still_table(rows: &[(&str, StillImageErrors)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>8} {:>10} {:>10} {:>10} {:>10}",
        "controller", "samples", "avg_mx", "avg_my", "max_mx", "max_my"
    );
    for (name, e) in rows {
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            name, e.samples, e.avg_abs_mx, e.avg_abs_my, e.max_abs_mx, e.max_abs_my
        );
    }
    out
}
