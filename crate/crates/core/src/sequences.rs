//! Annotated image sequences.
//!
//! On disk a sequence is a directory holding `frame_000000.png`,
//! `frame_000001.png`, ... and an `annotations.csv` with one
//! `frame_index,target_id,x,y,w,h` row per box (integers, no header).

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::raster;
use crate::seed;

pub const ANNOTATION_FILE: &str = "annotations.csv";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub target_id: u32,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub image: RgbImage,
    pub boxes: Vec<Annotation>,
}

impl Frame {
    pub fn bboxes(&self) -> Vec<BBox> {
        self.boxes.iter().map(|a| a.bbox).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub world_w: u32,
    pub world_h: u32,
    pub frames: Vec<Frame>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

fn parse_frame_file_name(name: &str) -> Option<usize> {
    name.strip_prefix("frame_")?
        .strip_suffix(".png")?
        .parse()
        .ok()
}

pub fn load_sequence(dir: impl AsRef<Path>) -> Result<Sequence> {
    let dir = dir.as_ref();
    let ann_path = dir.join(ANNOTATION_FILE);
    if !ann_path.is_file() {
        return Err(Error::Load {
            path: ann_path,
            message: "missing annotation file".into(),
        });
    }

    let mut indexed: Vec<(usize, PathBuf)> = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(i) = name.to_str().and_then(parse_frame_file_name) {
            indexed.push((i, entry.path()));
        }
    }
    indexed.sort();

    let mut frames = Vec::with_capacity(indexed.len());
    let mut dims: Option<(u32, u32)> = None;
    for (expected, (index, path)) in indexed.into_iter().enumerate() {
        if index != expected {
            return Err(Error::Load {
                path,
                message: format!("expected frame index {expected}, found {index}"),
            });
        }
        let image = image::open(&path)
            .map_err(|e| Error::image(&path, e))?
            .to_rgb8();
        match dims {
            None => dims = Some(image.dimensions()),
            Some(d) if d != image.dimensions() => {
                return Err(Error::Load {
                    path,
                    message: format!(
                        "frame is {}x{}, sequence is {}x{}",
                        image.width(),
                        image.height(),
                        d.0,
                        d.1
                    ),
                })
            }
            Some(_) => {}
        }
        frames.push(Frame {
            index,
            image,
            boxes: Vec::new(),
        });
    }
    let (world_w, world_h) = dims.unwrap_or((0, 0));

    let text = fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let row_error = |line: usize, message: String| Error::Annotation {
        path: ann_path.clone(),
        line,
        message,
    };
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<i64> = line
            .split(',')
            .map(|f| f.trim().parse::<i64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| row_error(lineno, format!("malformed row {line:?}: {e}")))?;
        let [fi, id, x, y, w, h] = fields[..] else {
            return Err(row_error(
                lineno,
                format!("expected 6 fields, found {}", fields.len()),
            ));
        };
        if fi < 0 || fi as usize >= frames.len() {
            return Err(row_error(
                lineno,
                format!("frame index {fi} outside 0..{}", frames.len()),
            ));
        }
        if id < 0 || id > u32::MAX as i64 {
            return Err(row_error(lineno, format!("invalid target id {id}")));
        }
        if w <= 0 || h <= 0 || x < 0 || y < 0 || x + w > world_w as i64 || y + h > world_h as i64
        {
            return Err(row_error(
                lineno,
                format!("box ({x}, {y}, {w}, {h}) outside {world_w}x{world_h} frame"),
            ));
        }
        let frame = &mut frames[fi as usize];
        if frame.boxes.iter().any(|a| a.target_id == id as u32) {
            return Err(row_error(
                lineno,
                format!("duplicate target id {id} in frame {fi}"),
            ));
        }
        frame.boxes.push(Annotation {
            target_id: id as u32,
            bbox: BBox::new(x as f64, y as f64, w as f64, h as f64)?,
        });
    }

    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("sequence")
        .to_string();
    Ok(Sequence {
        name,
        world_w,
        world_h,
        frames,
    })
}

pub fn save_sequence(seq: &Sequence, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::new();
    for frame in &seq.frames {
        let path = dir.join(frame_file_name(frame.index));
        frame
            .image
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| Error::image(&path, e))?;
        for a in &frame.boxes {
            let b = a.bbox;
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                frame.index,
                a.target_id,
                b.x.round() as i64,
                b.y.round() as i64,
                b.w.round() as i64,
                b.h.round() as i64
            )
            .unwrap();
        }
    }
    let ann = dir.join(ANNOTATION_FILE);
    fs::write(&ann, csv).map_err(|e| Error::io(&ann, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    /// Every target picks its own heading.
    Independent,
    /// Targets keep fixed offsets inside a `spread x spread` square and move
    /// together as one rigid group.
    Group { spread: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub name: String,
    pub world_w: u32,
    pub world_h: u32,
    pub frames: usize,
    pub targets: usize,
    pub target_w: (u32, u32),
    pub target_h: (u32, u32),
    /// Speed range in pixels per frame.
    pub speed: (f64, f64),
    /// Probability per frame of picking a new heading and speed.
    pub turn_prob: f64,
    pub texture_seed: u64,
    pub motion: Motion,
    /// Targets stay at least this far from the world border, pixels.
    pub margin: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            world_w: 256,
            world_h: 192,
            frames: 200,
            targets: 3,
            target_w: (6, 10),
            target_h: (12, 20),
            speed: (0.5, 2.0),
            turn_prob: 0.02,
            texture_seed: 1,
            motion: Motion::Independent,
            margin: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.world_w == 0 || self.world_h == 0 {
            return err("world size must be positive".into());
        }
        let (wmin, wmax) = self.target_w;
        let (hmin, hmax) = self.target_h;
        if wmin == 0 || hmin == 0 || wmin > wmax || hmin > hmax {
            return err(format!(
                "invalid target size range {wmin}..{wmax} x {hmin}..{hmax}"
            ));
        }
        let inner_w = self.world_w.saturating_sub(2 * self.margin);
        let inner_h = self.world_h.saturating_sub(2 * self.margin);
        if wmax > inner_w || hmax > inner_h {
            return err(format!(
                "target size up to {wmax}x{hmax} exceeds world {}x{} less margin {}",
                self.world_w, self.world_h, self.margin
            ));
        }
        if !(self.speed.0 >= 0.0 && self.speed.0 <= self.speed.1) {
            return err(format!("invalid speed range {:?}", self.speed));
        }
        if !(0.0..=1.0).contains(&self.turn_prob) {
            return err(format!("turn_prob {} outside [0, 1]", self.turn_prob));
        }
        if let Motion::Group { spread } = self.motion {
            if !(spread >= 0.0)
                || spread + wmax as f64 > inner_w as f64
                || spread + hmax as f64 > inner_h as f64
            {
                return err(format!("group spread {spread} does not fit in the world"));
            }
        }
        Ok(())
    }
}

const PALETTE: [[u8; 3]; 8] = [
    [220, 30, 30],
    [30, 60, 220],
    [30, 180, 40],
    [240, 220, 40],
    [210, 40, 200],
    [250, 140, 20],
    [15, 15, 15],
    [245, 245, 245],
];
const HEAD_COLOR: [u8; 3] = [235, 190, 150];

/// Low-contrast textured background, a function of the world size and
/// `texture_seed` only.
pub fn render_background(world_w: u32, world_h: u32, texture_seed: u64) -> RgbImage {
    const CELL: u32 = 16;
    let mut rng = seed::rng_for(texture_seed, &[0xB6]);
    let gw = world_w / CELL + 2;
    let gh = world_h / CELL + 2;
    let grid: Vec<[f32; 3]> = (0..gw * gh)
        .map(|_| {
            let g: f32 = rng.random_range(95.0..145.0);
            [
                g + rng.random_range(-8.0..8.0),
                g + rng.random_range(-8.0..8.0),
                g + rng.random_range(-8.0..8.0),
            ]
        })
        .collect();
    let mut img = RgbImage::new(world_w, world_h);
    for y in 0..world_h {
        for x in 0..world_w {
            let fx = x as f32 / CELL as f32;
            let fy = y as f32 / CELL as f32;
            let (x0, y0) = (fx as u32, fy as u32);
            let (tx, ty) = (fx - x0 as f32, fy - y0 as f32);
            let at = |i: u32, j: u32| grid[(j * gw + i) as usize];
            let mut px = [0u8; 3];
            let noise: f32 = rng.random_range(-5.0..5.0);
            for c in 0..3 {
                let top = at(x0, y0)[c] * (1.0 - tx) + at(x0 + 1, y0)[c] * tx;
                let bot = at(x0, y0 + 1)[c] * (1.0 - tx) + at(x0 + 1, y0 + 1)[c] * tx;
                px[c] = (top * (1.0 - ty) + bot * ty + noise).round().clamp(0.0, 255.0) as u8;
            }
            img.put_pixel(x, y, Rgb(px));
        }
    }
    img
}

/// Draw a target filling exactly `(x, y, w, h)`: a body in the palette color
/// with a lighter head band on top.
pub fn draw_target(image: &mut RgbImage, target_id: u32, x: u32, y: u32, w: u32, h: u32) {
    let body = PALETTE[target_id as usize % PALETTE.len()];
    let head_h = (h / 4).max(1).min(h);
    raster::fill_rect(image, x, y, w, head_h, Rgb(HEAD_COLOR));
    raster::fill_rect(image, x, y + head_h, w, h - head_h, Rgb(body));
}

struct Mover {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    vx: f64,
    vy: f64,
}

impl Mover {
    fn steer(&mut self, rng: &mut seed::Rng, speed: (f64, f64)) {
        let s = if speed.1 > speed.0 {
            rng.random_range(speed.0..=speed.1)
        } else {
            speed.0
        };
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        self.vx = s * a.cos();
        self.vy = s * a.sin();
    }

    /// Advance one frame, reflecting off the borders of the area inset by
    /// `margin` from the world.
    fn advance(&mut self, world_w: f64, world_h: f64, margin: f64) {
        fn reflect(p: &mut f64, v: &mut f64, lo: f64, hi: f64) {
            *p += *v;
            if *p < lo {
                *p = 2.0 * lo - *p;
                *v = -*v;
            }
            if *p > hi {
                *p = 2.0 * hi - *p;
                *v = -*v;
            }
            *p = p.clamp(lo, hi.max(lo));
        }
        reflect(&mut self.x, &mut self.vx, margin, world_w - margin - self.w);
        reflect(&mut self.y, &mut self.vy, margin, world_h - margin - self.h);
    }
}

/// Deterministic synthetic sequence of filled targets moving with
/// piecewise-constant velocity over a textured background.
pub fn synth_sequence(cfg: &SynthConfig, seed: u64) -> Result<Sequence> {
    cfg.validate()?;
    let mut rng = seed::rng_for(seed, &[0x5E9]);
    let (ww, wh) = (cfg.world_w as f64, cfg.world_h as f64);
    let margin = cfg.margin as f64;
    let background = render_background(cfg.world_w, cfg.world_h, cfg.texture_seed);

    let sizes: Vec<(u32, u32)> = (0..cfg.targets)
        .map(|_| {
            (
                rng.random_range(cfg.target_w.0..=cfg.target_w.1),
                rng.random_range(cfg.target_h.0..=cfg.target_h.1),
            )
        })
        .collect();

    // Each mover carries one or more targets at fixed offsets.
    let mut movers: Vec<Mover> = Vec::new();
    let mut members: Vec<(usize, f64, f64)> = Vec::new();
    match cfg.motion {
        Motion::Independent => {
            for (i, &(w, h)) in sizes.iter().enumerate() {
                let (w, h) = (w as f64, h as f64);
                let mut m = Mover {
                    x: rng.random_range(margin..=ww - margin - w),
                    y: rng.random_range(margin..=wh - margin - h),
                    w,
                    h,
                    vx: 0.0,
                    vy: 0.0,
                };
                m.steer(&mut rng, cfg.speed);
                movers.push(m);
                members.push((i, 0.0, 0.0));
            }
        }
        Motion::Group { spread } => {
            let offsets: Vec<(f64, f64)> = sizes
                .iter()
                .map(|_| {
                    (
                        rng.random_range(0.0..=spread).round(),
                        rng.random_range(0.0..=spread).round(),
                    )
                })
                .collect();
            let gw = sizes
                .iter()
                .zip(&offsets)
                .map(|(s, o)| o.0 + s.0 as f64)
                .fold(1.0, f64::max);
            let gh = sizes
                .iter()
                .zip(&offsets)
                .map(|(s, o)| o.1 + s.1 as f64)
                .fold(1.0, f64::max);
            let mut m = Mover {
                x: rng.random_range(margin..=ww - margin - gw),
                y: rng.random_range(margin..=wh - margin - gh),
                w: gw,
                h: gh,
                vx: 0.0,
                vy: 0.0,
            };
            m.steer(&mut rng, cfg.speed);
            movers.push(m);
            members.extend(offsets.iter().enumerate().map(|(i, o)| (i, o.0, o.1)));
        }
    }

    let mut frames = Vec::with_capacity(cfg.frames);
    for index in 0..cfg.frames {
        if index > 0 {
            for m in &mut movers {
                if rng.random_bool(cfg.turn_prob) {
                    m.steer(&mut rng, cfg.speed);
                }
                m.advance(ww, wh, margin);
            }
        }
        let mut image = background.clone();
        let mut boxes = Vec::with_capacity(cfg.targets);
        for (target, (ox, oy)) in members.iter().map(|&(i, ox, oy)| (i, (ox, oy))) {
            let mover = match cfg.motion {
                Motion::Independent => &movers[target],
                Motion::Group { .. } => &movers[0],
            };
            let (w, h) = sizes[target];
            let x = ((mover.x + ox).round() as i64).clamp(0, (cfg.world_w - w) as i64) as u32;
            let y = ((mover.y + oy).round() as i64).clamp(0, (cfg.world_h - h) as i64) as u32;
            draw_target(&mut image, target as u32, x, y, w, h);
            boxes.push(Annotation {
                target_id: target as u32,
                bbox: BBox::new(x as f64, y as f64, w as f64, h as f64)?,
            });
        }
        frames.push(Frame {
            index,
            image,
            boxes,
        });
    }

    Ok(Sequence {
        name: cfg.name.clone(),
        world_w: cfg.world_w,
        world_h: cfg.world_h,
        frames,
    })
}

/// Check that no two boxes in a frame share a target id.
pub fn validate_unique_ids(frame: &Frame) -> bool {
    let mut seen = HashSet::new();
    frame.boxes.iter().all(|a| seen.insert(a.target_id))
}
