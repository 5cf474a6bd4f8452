//! Recency-weighted moving average over controller outputs.
//!
//! With `k` outputs in the window, the `t`-th oldest (1-based) gets weight
//! `t / (1 + 2 + ... + k)`, so the newest output weighs the most. Before the
//! window fills up, weights are computed over the entries available.

use std::collections::VecDeque;

use crate::geometry::ControlVector;

pub const DEFAULT_WINDOW: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct WmaState {
    window: VecDeque<ControlVector>,
    k: usize,
}

/// Weights for `k` entries, oldest first.
pub fn weights(k: usize) -> Vec<f64> {
    let total = (k * (k + 1) / 2) as f64;
    (1..=k).map(|t| t as f64 / total).collect()
}

impl WmaState {
    /// Filter over the `k` most recent outputs. `k` is raised to 1 if 0.
    pub fn new(k: usize) -> Self {
        let k = k.max(1);
        Self {
            window: VecDeque::with_capacity(k),
            k,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn history(&self) -> impl Iterator<Item = &ControlVector> {
        self.window.iter()
    }

    /// Push a new output and return the filtered value.
    pub fn update(&mut self, new: ControlVector) -> ControlVector {
        if self.window.len() == self.k {
            self.window.pop_front();
        }
        self.window.push_back(new);
        let w = weights(self.window.len());
        let (mx, my) = self
            .window
            .iter()
            .zip(&w)
            .fold((0.0, 0.0), |(x, y), (c, wt)| (x + c.mx * wt, y + c.my * wt));
        ControlVector { mx, my }
    }

    pub fn reset(&mut self) {
        self.window.clear();
    }
}

impl Default for WmaState {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}
