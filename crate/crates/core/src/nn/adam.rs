use crate::error::{Error, Result};

use super::graph::NetParams;
use super::tensor::Tensor;

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-8;

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: u32,
}

impl AdamState {
    pub fn new(params: &NetParams) -> Self {
        let zeros = || {
            params
                .entries
                .iter()
                .map(|e| vec![0.0; e.tensor.len()])
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u32 {
        self.step
    }
}

/// One bias-corrected Adam update of every trainable tensor.
pub fn adam_step(params: &mut NetParams, grads: &[Tensor], state: &mut AdamState, lr: f32) -> Result<()> {
    if grads.len() != params.entries.len() || state.m.len() != params.entries.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameter tensors",
            grads.len(),
            params.entries.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, entry) in params.entries.iter_mut().enumerate() {
        if !entry.trainable {
            continue;
        }
        let g = grads[i].data();
        if g.len() != entry.tensor.len() {
            return Err(Error::Shape(format!("gradient of {} has wrong size", entry.name)));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((p, &gj), mj), vj) in entry.tensor.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mj = ADAM_BETA1 * *mj + (1.0 - ADAM_BETA1) * gj;
            *vj = ADAM_BETA2 * *vj + (1.0 - ADAM_BETA2) * gj * gj;
            let mh = *mj / c1;
            let vh = *vj / c2;
            *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}
