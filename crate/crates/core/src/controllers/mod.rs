//! Controllers map the current crop to a control vector.

mod baseline;
mod cnn;
mod detector;
mod kalman;

pub use baseline::{associate, Association, BaselineController, Tracker, TrackerConfig};
pub use cnn::CnnController;
pub use detector::{Detection, DetectorConfig, SyntheticDetector};
pub use kalman::{KalmanParams, Track};

use image::RgbImage;

use crate::error::{Error, Result};
use crate::geometry::{ControlVector, Window};
use crate::sequences::Annotation;
use crate::simulator;

/// What a controller gets to see on one frame.
#[derive(Debug, Clone, Copy)]
pub struct ControllerInput<'a> {
    pub crop: &'a RgbImage,
    /// Ground-truth boxes in crop coordinates. Only the oracle and the
    /// synthetic detector may look at these.
    pub boxes: Option<&'a [Annotation]>,
    pub frame_index: usize,
}

impl ControllerInput<'_> {
    /// The crop itself as a window in crop coordinates.
    pub fn crop_window(&self) -> Window {
        let (w, h) = (self.crop.width() as f64, self.crop.height() as f64);
        Window {
            cx: w / 2.0,
            cy: h / 2.0,
            w,
            h,
        }
    }
}

pub trait Controller {
    fn name(&self) -> &str;

    fn control(&mut self, input: &ControllerInput<'_>) -> Result<ControlVector>;

    /// Forget any per-episode state.
    fn reset(&mut self) {}
}

/// Never moves the camera.
#[derive(Debug, Clone, Copy, Default)]
pub struct StaticController;

impl Controller for StaticController {
    fn name(&self) -> &str {
        "static"
    }

    fn control(&mut self, _input: &ControllerInput<'_>) -> Result<ControlVector> {
        Ok(ControlVector::ZERO)
    }
}

/// Outputs the exact ground-truth label for the crop.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleController;

impl Controller for OracleController {
    fn name(&self) -> &str {
        "oracle"
    }

    fn control(&mut self, input: &ControllerInput<'_>) -> Result<ControlVector> {
        let boxes = input
            .boxes
            .ok_or_else(|| Error::Invalid("oracle controller needs ground-truth boxes".into()))?;
        let boxes: Vec<_> = boxes.iter().map(|a| a.bbox).collect();
        Ok(simulator::label_from_boxes(&boxes, &input.crop_window()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn input<'a>(crop: &'a RgbImage, boxes: Option<&'a [Annotation]>) -> ControllerInput<'a> {
        ControllerInput {
            crop,
            boxes,
            frame_index: 0,
        }
    }

    fn ann(cx: f64, cy: f64) -> Annotation {
        Annotation {
            target_id: 0,
            bbox: BBox::from_center(cx, cy, 20.0, 40.0).unwrap(),
        }
    }

    #[test]
    fn oracle_examples() {
        let crop = RgbImage::new(320, 240);
        let mut o = OracleController;
        assert_eq!(o.control(&input(&crop, Some(&[]))).unwrap(), ControlVector::ZERO);
        let centered = [ann(160.0, 120.0)];
        assert_eq!(o.control(&input(&crop, Some(&centered))).unwrap(), ControlVector::ZERO);
        let right = [ann(240.0, 120.0)];
        let m = o.control(&input(&crop, Some(&right))).unwrap();
        assert_eq!((m.mx, m.my), (0.25, 0.0));
        assert!(o.control(&input(&crop, None)).is_err());
    }

    #[test]
    fn static_always_zero() {
        let mut s = StaticController;
        let crop = RgbImage::new(320, 240);
        let boxes = [ann(300.0, 10.0)];
        for _ in 0..3 {
            assert_eq!(s.control(&input(&crop, Some(&boxes))).unwrap(), ControlVector::ZERO);
        }
        let empty = RgbImage::new(0, 0);
        assert_eq!(s.control(&input(&empty, None)).unwrap(), ControlVector::ZERO);
    }
}
