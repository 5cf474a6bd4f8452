//! Pixel/angle conversions and spatial predicates.
//!
//! World-frame pixel space has its origin at the top-left corner with +x to
//! the right and +y down. A positive `mx` pans right and a positive `my`
//! tilts down.

use crate::error::{Error, Result};

/// Slack used when checking that a point lies inside a window.
const INSIDE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned box given by its top-left corner and extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(Error::Domain(format!(
                "box must have positive finite extent, got x={x} y={y} w={w} h={h}"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// Mirror about the vertical line `x = axis`.
    pub fn mirrored(&self, axis: f64) -> Self {
        Self {
            x: 2.0 * axis - self.right(),
            ..*self
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Part of the box inside `[0, w] x [0, h]`, if any.
    pub fn clipped(&self, w: f64, h: f64) -> Option<BBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(w);
        let y1 = self.bottom().min(h);
        (x1 > x0 && y1 > y0).then_some(BBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }
}

/// The camera field of view as a window inside the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Window {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::Domain(format!(
                "window must have positive finite extent, got {w}x{h} at ({cx}, {cy})"
            )));
        }
        Ok(Self { cx, cy, w, h })
    }

    /// Window of size `w x h` whose top-left corner is at `(left, top)`.
    pub fn from_origin(left: f64, top: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(left + w / 2.0, top + h / 2.0, w, h)
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn as_bbox(&self) -> BBox {
        BBox {
            x: self.left(),
            y: self.top(),
            w: self.w,
            h: self.h,
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        (p.x - self.cx).abs() <= self.w / 2.0 + INSIDE_TOL
            && (p.y - self.cy).abs() <= self.h / 2.0 + INSIDE_TOL
    }

    /// Integer pixel origin of the crop this window selects.
    pub fn pixel_origin(&self) -> (i64, i64) {
        (self.left().round() as i64, self.top().round() as i64)
    }

    pub fn half_diagonal(&self) -> f64 {
        self.w.hypot(self.h) / 2.0
    }

    pub fn shifted(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }
}

/// Normalized pan/tilt displacement, each component in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlVector {
    pub mx: f64,
    pub my: f64,
}

impl ControlVector {
    pub const ZERO: ControlVector = ControlVector { mx: 0.0, my: 0.0 };

    pub fn new(mx: f64, my: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&mx) || !(-1.0..=1.0).contains(&my) {
            return Err(Error::Domain(format!(
                "control vector ({mx}, {my}) outside [-1, 1]^2"
            )));
        }
        Ok(Self { mx, my })
    }

    /// Clamp both components to `[-limit, limit]`. NaN maps to zero.
    pub fn clamped(&self, limit: f64) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-limit, limit) };
        Self {
            mx: c(self.mx),
            my: c(self.my),
        }
    }

    pub fn flipped_horizontally(&self) -> Self {
        Self {
            mx: -self.mx,
            my: self.my,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.mx.abs().max(self.my.abs())
    }

    pub fn is_valid(&self) -> bool {
        (-1.0..=1.0).contains(&self.mx) && (-1.0..=1.0).contains(&self.my)
    }
}

/// Horizontal and vertical angles of view, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FovAngles {
    pub ax: f64,
    pub ay: f64,
}

impl FovAngles {
    pub fn new(ax: f64, ay: f64) -> Result<Self> {
        let ok = |a: f64| a > 0.0 && a < 180.0;
        if !ok(ax) || !ok(ay) {
            return Err(Error::Domain(format!(
                "angles of view must lie in (0, 180) degrees, got ({ax}, {ay})"
            )));
        }
        Ok(Self { ax, ay })
    }
}

/// Displacement from the window center to `centroid`, as a fraction of the
/// window size.
pub fn normalized_offset(window: &Window, centroid: &Point) -> Result<ControlVector> {
    if !window.contains(centroid) {
        return Err(Error::Domain(format!(
            "centroid ({}, {}) lies outside window centered at ({}, {}) of size {}x{}",
            centroid.x, centroid.y, window.cx, window.cy, window.w, window.h
        )));
    }
    let mx = ((centroid.x - window.cx) / window.w).clamp(-0.5, 0.5);
    let my = ((centroid.y - window.cy) / window.h).clamp(-0.5, 0.5);
    Ok(ControlVector { mx, my })
}

/// Pan and tilt angles, in degrees, for a normalized displacement under a
/// pinhole model: each axis moves by the offset times half its angle of view.
pub fn offset_to_angles(m: &ControlVector, fov: &FovAngles) -> (f64, f64) {
    (m.mx * fov.ax / 2.0, m.my * fov.ay / 2.0)
}

/// Indices of boxes with at least half of their area inside the window.
pub fn visible_targets(window: &Window, boxes: &[BBox]) -> Vec<usize> {
    let view = window.as_bbox();
    boxes
        .iter()
        .enumerate()
        .filter(|(_, b)| view.intersection_area(b) >= 0.5 * b.area())
        .map(|(i, _)| i)
        .collect()
}

/// Unweighted mean of box centers.
pub fn centroid_of<'a, I>(boxes: I) -> Option<Point>
where
    I: IntoIterator<Item = &'a BBox>,
{
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for b in boxes {
        let c = b.center();
        sx += c.x;
        sy += c.y;
        n += 1;
    }
    (n > 0).then(|| Point::new(sx / n as f64, sy / n as f64))
}

/// Shift the window center as little as possible so the window lies inside
/// `[0, world_w] x [0, world_h]`.
pub fn clamp_window(window: &Window, world_w: f64, world_h: f64) -> Result<Window> {
    if window.w > world_w || window.h > world_h {
        return Err(Error::Domain(format!(
            "window {}x{} does not fit in world {}x{}",
            window.w, window.h, world_w, world_h
        )));
    }
    let hw = window.w / 2.0;
    let hh = window.h / 2.0;
    Ok(Window {
        cx: window.cx.clamp(hw, world_w - hw),
        cy: window.cy.clamp(hh, world_h - hh),
        ..*window
    })
}
