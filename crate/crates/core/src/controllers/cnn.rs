use crate::error::Result;
use crate::geometry::ControlVector;
use crate::nn::{self, Graph, Mode, NetParams};
use crate::output_filter::WmaState;

use super::{Controller, ControllerInput};

/// Largest control magnitude passed on from the network; the label range.
pub const CNN_OUTPUT_LIMIT: f64 = 0.5;

/// Runs C³Net on each crop, clamps the output to the label range and
/// optionally smooths it.
#[derive(Debug, Clone)]
pub struct CnnController {
    graph: Graph,
    params: NetParams,
    filter: Option<WmaState>,
    last_raw: Option<ControlVector>,
}

impl CnnController {
    /// Fails when `params` does not fit `graph`.
    pub fn new(graph: Graph, params: NetParams, filter: Option<WmaState>) -> Result<Self> {
        graph.check_params(&params)?;
        Ok(Self {
            graph,
            params,
            filter,
            last_raw: None,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn params(&self) -> &NetParams {
        &self.params
    }

    /// Clamped network output of the latest step, before smoothing.
    pub fn last_raw(&self) -> Option<ControlVector> {
        self.last_raw
    }

    /// Clamped network output for one crop.
    pub fn predict(&self, crop: &image::RgbImage) -> Result<ControlVector> {
        let (c, h, w) = self.graph.input;
        debug_assert_eq!(c, 3);
        let x = nn::images_to_tensor(&[crop], w as u32, h as u32);
        let pass = nn::forward(&self.graph, &self.params, &x, Mode::infer())?;
        Ok(pass.controls()[0].clamped(CNN_OUTPUT_LIMIT))
    }
}

impl Controller for CnnController {
    fn name(&self) -> &str {
        "cnn"
    }

    fn control(&mut self, input: &ControllerInput<'_>) -> Result<ControlVector> {
        let raw = self.predict(input.crop)?;
        self.last_raw = Some(raw);
        Ok(match self.filter.as_mut() {
            Some(f) => f.update(raw),
            None => raw,
        })
    }

    fn reset(&mut self) {
        self.last_raw = None;
        if let Some(f) = self.filter.as_mut() {
            f.reset();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_c3net, Scale};
    use image::RgbImage;

    fn controller(bias: (f32, f32), filter: Option<WmaState>) -> CnnController {
        let (g, mut p) = build_c3net(64, 48, Scale::Tiny, 2).unwrap();
        p.get_mut("fc4.weight").unwrap().data_mut().fill(0.0);
        p.get_mut("fc4.bias")
            .unwrap()
            .data_mut()
            .copy_from_slice(&[bias.0.atanh(), bias.1.atanh()]);
        CnnController::new(g, p, filter).unwrap()
    }

    fn step(c: &mut CnnController, crop: &RgbImage) -> ControlVector {
        c.control(&ControllerInput {
            crop,
            boxes: None,
            frame_index: 0,
        })
        .unwrap()
    }

    #[test]
    fn output_is_clamped_before_filtering() {
        let mut c = controller((0.9, 0.0), Some(WmaState::new(3)));
        let crop = RgbImage::new(64, 48);
        let out = step(&mut c, &crop);
        assert!((out.mx - 0.5).abs() < 1e-12 && out.my.abs() < 1e-6);
        assert!((c.last_raw().unwrap().mx - 0.5).abs() < 1e-12);
    }

    #[test]
    fn first_filtered_output_equals_raw() {
        let mut c = controller((0.2, -0.1), Some(WmaState::new(3)));
        let crop = RgbImage::new(64, 48);
        let out = step(&mut c, &crop);
        let raw = c.last_raw().unwrap();
        assert_eq!(out, raw);
        assert!((raw.mx - 0.2).abs() < 1e-6 && (raw.my + 0.1).abs() < 1e-6);
    }

    #[test]
    fn identical_crops_settle_on_raw_output() {
        // Start from a history pointing the other way.
        let mut f = WmaState::new(3);
        for _ in 0..3 {
            f.update(ControlVector { mx: -0.5, my: -0.5 });
        }
        let mut c = controller((0.3, 0.1), Some(f));
        let crop = RgbImage::from_fn(64, 48, |x, y| image::Rgb([x as u8 * 3, y as u8 * 5, 77]));
        let mut errors = Vec::new();
        for _ in 0..4 {
            let out = step(&mut c, &crop);
            let raw = c.last_raw().unwrap();
            errors.push((out.mx - raw.mx).abs() + (out.my - raw.my).abs());
        }
        assert!(errors.windows(2).all(|w| w[1] <= w[0]));
        assert!(errors[0] > 0.1 && errors[3] < 1e-12);
    }

    #[test]
    fn larger_crops_are_resized() {
        let c = controller((0.1, 0.1), None);
        let big = RgbImage::new(128, 96);
        assert!(c.predict(&big).is_ok());
    }

    #[test]
    fn mismatched_weights_are_rejected() {
        let (g, _) = build_c3net(64, 48, Scale::Tiny, 2).unwrap();
        let (_, other) = build_c3net(64, 48, Scale::Full, 2).unwrap();
        assert!(CnnController::new(g, other, None).is_err());
    }
}
