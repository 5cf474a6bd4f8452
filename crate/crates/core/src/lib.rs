//! Desk-scale toolkit for end-to-end visual control of a pan-tilt camera.
//!
//! A virtual camera is simulated as a crop window moving inside larger
//! annotated frames. Controllers map the current crop to a normalized
//! pan/tilt displacement; the simulator applies it and the metrics module
//! scores how well targets are kept in view.
//!
//! The main pieces:
//!
//! * [`geometry`] – boxes, windows, control vectors and the pinhole
//!   pixel-to-angle mapping.
//! * [`sequences`] – annotated image sequences: loading, saving, synthesis.
//! * [`simulator`] – ground-truth labels, camera motion and closed-loop
//!   episodes.
//! * [`datagen`] – supervised crop datasets, balancing and augmentation.
//! * [`nn`] – a small CPU network stack and the C³Net controller network.
//! * [`output_filter`] – weighted moving average over controller outputs.
//! * [`controllers`] – oracle, static, detection + Kalman tracking, CNN.
//! * [`metrics`] – still-image errors and monitoring metrics.

pub mod controllers;
pub mod datagen;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod output_filter;
pub mod raster;
pub mod seed;
pub mod sequences;
pub mod simulator;

pub use error::{Error, Result};
pub use geometry::{BBox, ControlVector, FovAngles, Point, Window};
pub use image::RgbImage;
pub use sequences::{Annotation, Frame, Sequence, SynthConfig};
