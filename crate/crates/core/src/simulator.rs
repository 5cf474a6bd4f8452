//! The virtual active camera: a crop window moved inside the world frame.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::controllers::{Controller, ControllerInput};
use crate::error::{Error, Result};
use crate::geometry::{self, BBox, ControlVector, Window};
use crate::output_filter::WmaState;
use crate::raster;
use crate::sequences::{Annotation, Frame, Sequence};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraState {
    pub window: Window,
    pub frame_index: usize,
}

impl CameraState {
    /// Camera at frame 0 with the given window, clamped into the world.
    pub fn start(seq: &Sequence, window: Window) -> Result<Self> {
        let window = geometry::clamp_window(&window, seq.world_w as f64, seq.world_h as f64)?;
        Ok(Self {
            window,
            frame_index: 0,
        })
    }

    /// Window of size `w x h` centered on the frame-0 target centroid, or on
    /// the world center when frame 0 has no targets.
    pub fn centered_on_targets(seq: &Sequence, w: f64, h: f64) -> Result<Self> {
        let center = seq
            .frames
            .first()
            .and_then(|f| geometry::centroid_of(f.boxes.iter().map(|a| &a.bbox)))
            .unwrap_or(geometry::Point::new(
                seq.world_w as f64 / 2.0,
                seq.world_h as f64 / 2.0,
            ));
        Self::start(
            seq,
            Window::new(center.x.round(), center.y.round(), w, h)?,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub frame_index: usize,
    /// Window the controller looked through on this frame.
    pub window: Window,
    pub control: ControlVector,
    pub visible_ids: Vec<u32>,
    /// Distance from the window center to the visible-target centroid.
    pub centroid_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    pub records: Vec<StepRecord>,
}

pub const TRACE_HEADER: &str = "frame,cx,cy,mx,my,n_visible,centroid_dist";

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            let dist = r
                .centroid_distance
                .map(|d| format!("{d:.6}"))
                .unwrap_or_default();
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{},{}",
                r.frame_index,
                r.window.cx,
                r.window.cy,
                r.control.mx,
                r.control.my,
                r.visible_ids.len(),
                dist
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Boxes that pass the visibility rule for `window`.
pub fn visible_annotations<'a>(frame: &'a Frame, window: &Window) -> Vec<&'a Annotation> {
    let boxes = frame.bboxes();
    geometry::visible_targets(window, &boxes)
        .into_iter()
        .map(|i| &frame.boxes[i])
        .collect()
}

/// Control that would center the camera on the visible targets, or zero when
/// none are visible.
pub fn ground_truth_label(frame: &Frame, window: &Window) -> ControlVector {
    label_from_boxes(&frame.bboxes(), window)
}

/// [`ground_truth_label`] for a bare list of boxes.
pub fn label_from_boxes(boxes: &[BBox], window: &Window) -> ControlVector {
    let visible = geometry::visible_targets(window, boxes);
    match geometry::centroid_of(visible.iter().map(|&i| &boxes[i])) {
        // A visible set always has its centroid inside the window: every
        // member has more than half its area, and hence its center, inside.
        Some(c) => geometry::normalized_offset(window, &c)
            .expect("visible centroid lies inside the window"),
        None => ControlVector::ZERO,
    }
}

/// Pixel displacement applied for a control on a window of size `w x h`,
/// rounded half away from zero.
pub fn control_to_pixels(m: &ControlVector, w: f64, h: f64) -> (f64, f64) {
    ((m.mx * w).round(), (m.my * h).round())
}

/// Move the window by the control and advance one frame. The result may
/// have `frame_index == seq.len()`, which marks the end of the episode.
pub fn apply_control(state: &CameraState, m: &ControlVector, seq: &Sequence) -> Result<CameraState> {
    if state.frame_index >= seq.len() {
        return Err(Error::EpisodeEnd {
            frame_index: state.frame_index,
        });
    }
    let (dx, dy) = control_to_pixels(m, state.window.w, state.window.h);
    let window = geometry::clamp_window(
        &state.window.shifted(dx, dy),
        seq.world_w as f64,
        seq.world_h as f64,
    )?;
    Ok(CameraState {
        window,
        frame_index: state.frame_index + 1,
    })
}

/// Annotations translated into the coordinates of the crop under `window`.
pub fn crop_relative_boxes(frame: &Frame, window: &Window) -> Vec<Annotation> {
    let (x0, y0) = window.pixel_origin();
    frame
        .boxes
        .iter()
        .map(|a| Annotation {
            target_id: a.target_id,
            bbox: a.bbox.translated(-x0 as f64, -y0 as f64),
        })
        .collect()
}

fn record_step(frame: &Frame, window: Window, control: ControlVector) -> StepRecord {
    let visible = visible_annotations(frame, &window);
    let centroid = geometry::centroid_of(visible.iter().map(|a| &a.bbox));
    StepRecord {
        frame_index: frame.index,
        window,
        control,
        visible_ids: visible.iter().map(|a| a.target_id).collect(),
        centroid_distance: centroid.map(|c| c.distance(&window.center())),
    }
}

/// Optional hook receiving each crop as it is shown to the controller.
pub type CropSink<'a> = dyn FnMut(usize, &image::RgbImage) -> Result<()> + 'a;

/// Run the closed loop over every frame of `seq`.
///
/// On frame `t` the controller sees only the crop of frame `t` under the
/// current window; its output (optionally smoothed) moves the camera for
/// frame `t + 1`.
pub fn run_episode(
    seq: &Sequence,
    controller: &mut dyn Controller,
    start: CameraState,
    mut output_filter: Option<WmaState>,
    mut crop_sink: Option<&mut CropSink<'_>>,
) -> Result<EpisodeTrace> {
    let mut state = start;
    geometry::clamp_window(&state.window, seq.world_w as f64, seq.world_h as f64)?;
    let mut trace = EpisodeTrace::default();
    controller.reset();
    while state.frame_index < seq.len() {
        let frame = &seq.frames[state.frame_index];
        let crop = raster::crop(&frame.image, &state.window)?;
        if let Some(sink) = crop_sink.as_mut() {
            sink(frame.index, &crop)?;
        }
        let boxes = crop_relative_boxes(frame, &state.window);
        let input = ControllerInput {
            crop: &crop,
            boxes: Some(&boxes),
            frame_index: frame.index,
        };
        let raw = controller
            .control(&input)
            .map_err(|e| Error::Controller {
                frame_index: frame.index,
                source: Box::new(e),
            })?;
        let control = match output_filter.as_mut() {
            Some(f) => f.update(raw),
            None => raw,
        };
        trace.records.push(record_step(frame, state.window, control));
        state = apply_control(&state, &control, seq)?;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::{OracleController, StaticController};
    use crate::sequences::{synth_sequence, Motion, SynthConfig};
    use image::RgbImage;

    fn frame_with(boxes: &[(f64, f64, f64, f64)], w: u32, h: u32) -> Frame {
        Frame {
            index: 0,
            image: RgbImage::new(w, h),
            boxes: boxes
                .iter()
                .enumerate()
                .map(|(i, &(x, y, bw, bh))| Annotation {
                    target_id: i as u32,
                    bbox: BBox::new(x, y, bw, bh).unwrap(),
                })
                .collect(),
        }
    }

    fn world(frames: usize, boxes: &[(f64, f64, f64, f64)]) -> Sequence {
        Sequence {
            name: "t".into(),
            world_w: 768,
            world_h: 576,
            frames: (0..frames)
                .map(|i| Frame {
                    index: i,
                    ..frame_with(boxes, 768, 576)
                })
                .collect(),
        }
    }

    #[test]
    fn label_examples() {
        let window = Window::new(160.0, 120.0, 320.0, 240.0).unwrap();
        let empty = frame_with(&[], 768, 576);
        assert_eq!(ground_truth_label(&empty, &window), ControlVector::ZERO);

        let centered = frame_with(&[(150.0, 100.0, 20.0, 40.0)], 768, 576);
        assert_eq!(ground_truth_label(&centered, &window), ControlVector::ZERO);

        // Centers at window-relative +40 and +120 px.
        let two = frame_with(
            &[(190.0, 100.0, 20.0, 40.0), (270.0, 100.0, 20.0, 40.0)],
            768,
            576,
        );
        let m = ground_truth_label(&two, &window);
        assert_eq!((m.mx, m.my), (0.25, 0.0));
    }

    #[test]
    fn label_ignores_mostly_hidden_targets() {
        let window = Window::new(160.0, 120.0, 320.0, 240.0).unwrap();
        // Only 5 of 20 px inside the right edge.
        let f = frame_with(&[(315.0, 100.0, 20.0, 40.0)], 768, 576);
        assert_eq!(ground_truth_label(&f, &window), ControlVector::ZERO);
    }

    #[test]
    fn apply_control_examples() {
        let seq = world(3, &[]);
        let s = CameraState {
            window: Window::new(160.0, 120.0, 320.0, 240.0).unwrap(),
            frame_index: 0,
        };
        let n = apply_control(&s, &ControlVector::ZERO, &seq).unwrap();
        assert_eq!((n.window, n.frame_index), (s.window, 1));
        let n = apply_control(&s, &ControlVector::new(0.25, 0.0).unwrap(), &seq).unwrap();
        assert_eq!(n.window.cx, 240.0);
        let n = apply_control(&s, &ControlVector::new(-1.0, 0.0).unwrap(), &seq).unwrap();
        assert_eq!(n.window.cx, 160.0);
        let end = CameraState {
            frame_index: 3,
            ..s
        };
        assert!(matches!(
            apply_control(&end, &ControlVector::ZERO, &seq),
            Err(Error::EpisodeEnd { frame_index: 3 })
        ));
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        let m = ControlVector::new(-0.5 / 64.0, 1.5 / 48.0).unwrap();
        assert_eq!(control_to_pixels(&m, 64.0, 48.0), (-1.0, 2.0));
    }

    #[test]
    fn static_episode_never_moves() {
        let cfg = SynthConfig {
            frames: 15,
            ..SynthConfig::default()
        };
        let seq = synth_sequence(&cfg, 1).unwrap();
        let start = CameraState::start(&seq, Window::new(100.0, 80.0, 64.0, 48.0).unwrap()).unwrap();
        let trace = run_episode(&seq, &mut StaticController, start, None, None).unwrap();
        assert_eq!(trace.len(), 15);
        assert!(trace.records.iter().all(|r| r.window == start.window));
    }

    #[test]
    fn oracle_centers_a_static_target_after_one_move() {
        let cfg = SynthConfig {
            frames: 10,
            targets: 1,
            speed: (0.0, 0.0),
            ..SynthConfig::default()
        };
        let seq = synth_sequence(&cfg, 4).unwrap();
        let b = seq.frames[0].boxes[0].bbox.center();
        // Start offset so the target is visible but off-center.
        let start = CameraState::start(
            &seq,
            Window::new(b.x.round() + 17.0, b.y.round() - 9.0, 64.0, 48.0).unwrap(),
        )
        .unwrap();
        let trace = run_episode(&seq, &mut OracleController, start, None, None).unwrap();
        for r in &trace.records[1..] {
            let c = b;
            assert!((r.window.cx - c.x).abs() <= 1.0 && (r.window.cy - c.y).abs() <= 1.0);
        }
    }

    #[test]
    fn trace_csv_layout() {
        let cfg = SynthConfig {
            frames: 3,
            targets: 2,
            motion: Motion::Group { spread: 10.0 },
            ..SynthConfig::default()
        };
        let seq = synth_sequence(&cfg, 4).unwrap();
        let start = CameraState::centered_on_targets(&seq, 64.0, 48.0).unwrap();
        let csv = run_episode(&seq, &mut OracleController, start, None, None)
            .unwrap()
            .to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines.len(), 4);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 7);
        assert_eq!(fields[5], "2");
        assert!(fields[1].split('.').nth(1).unwrap().len() == 6);
    }
}
