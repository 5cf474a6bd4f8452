use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::geometry::BBox;

type State = SVector<f64, 6>;
type Cov = SMatrix<f64, 6, 6>;
type Meas = SVector<f64, 4>;
type MeasMap = SMatrix<f64, 4, 6>;

/// Noise parameters of the constant-velocity box filter. Variances are in
/// px², velocities in (px/frame)².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanParams {
    pub q_pos: f64,
    pub q_vel: f64,
    pub q_size: f64,
    pub r: f64,
    /// Initial velocity variance of a new track.
    pub init_vel_var: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            q_pos: 1.0,
            q_vel: 0.25,
            q_size: 0.1,
            r: 1.0,
            init_vel_var: 10.0,
        }
    }
}

/// A tracked box with state `(cx, cy, w, h, vcx, vcy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub mean: State,
    pub cov: Cov,
    pub hits: u32,
    pub misses: u32,
    pub confirmed: bool,
}

fn measurement_map() -> MeasMap {
    let mut h = MeasMap::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn measure(b: &BBox) -> Meas {
    let c = b.center();
    Meas::new(c.x, c.y, b.w, b.h)
}

/// Symmetrize, then verify positive semi-definiteness. A matrix that fails
/// a Cholesky factorization gets a small diagonal jitter once before giving
/// up.
fn repair_covariance(cov: &Cov) -> Result<Cov> {
    let sym = (cov + cov.transpose()) * 0.5;
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("track covariance".into()));
    }
    if sym.cholesky().is_some() {
        return Ok(sym);
    }
    let jitter = 1e-9 * sym.trace().abs().max(1.0);
    let fixed = sym + Cov::identity() * jitter;
    if fixed.cholesky().is_some() {
        Ok(fixed)
    } else {
        Err(Error::Domain("track covariance is not positive semi-definite".into()))
    }
}

impl Track {
    pub fn from_detection(id: u64, b: &BBox, p: &KalmanParams) -> Self {
        let z = measure(b);
        let mean = State::from_column_slice(&[z[0], z[1], z[2], z[3], 0.0, 0.0]);
        let cov = Cov::from_diagonal(&State::from_column_slice(&[
            p.r,
            p.r,
            p.r,
            p.r,
            p.init_vel_var,
            p.init_vel_var,
        ]));
        Self {
            id,
            mean,
            cov,
            hits: 1,
            misses: 0,
            confirmed: false,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.mean[0], self.mean[1])
    }

    pub fn bbox(&self) -> BBox {
        let w = self.mean[2].max(1.0);
        let h = self.mean[3].max(1.0);
        BBox {
            x: self.mean[0] - w / 2.0,
            y: self.mean[1] - h / 2.0,
            w,
            h,
        }
    }

    /// Constant-velocity prediction on the center, constant size.
    pub fn predict(&self, p: &KalmanParams) -> Result<Self> {
        let mut f = Cov::identity();
        f[(0, 4)] = 1.0;
        f[(1, 5)] = 1.0;
        let q = Cov::from_diagonal(&State::from_column_slice(&[
            p.q_pos, p.q_pos, p.q_size, p.q_size, p.q_vel, p.q_vel,
        ]));
        let mut mean = f * self.mean;
        mean[2] = mean[2].max(1.0);
        mean[3] = mean[3].max(1.0);
        let cov = repair_covariance(&(f * self.cov * f.transpose() + q))?;
        Ok(Self {
            mean,
            cov,
            ..self.clone()
        })
    }

    /// Standard measurement update on `(cx, cy, w, h)`.
    pub fn update(&self, b: &BBox, p: &KalmanParams) -> Result<Self> {
        let h = measurement_map();
        let r = SMatrix::<f64, 4, 4>::identity() * p.r;
        let s = h * self.cov * h.transpose() + r;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::Domain("singular innovation covariance".into()))?;
        let k = self.cov * h.transpose() * s_inv;
        let innovation = measure(b) - h * self.mean;
        let mut mean = self.mean + k * innovation;
        mean[2] = mean[2].max(1.0);
        mean[3] = mean[3].max(1.0);
        let cov = repair_covariance(&((Cov::identity() - k * h) * self.cov))?;
        Ok(Self {
            mean,
            cov,
            ..self.clone()
        })
    }

    pub fn shift(&mut self, dx: f64, dy: f64) {
        self.mean[0] += dx;
        self.mean[1] += dy;
    }
}
