//! RGB raster helpers: cropping, mirroring, conversion to network input and
//! photometric perturbations.

use image::{imageops, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::Window;

/// Pixels of `image` under `window`. The window must lie inside the image.
pub fn crop(image: &RgbImage, window: &Window) -> Result<RgbImage> {
    let (x0, y0) = window.pixel_origin();
    let (w, h) = (window.w.round() as i64, window.h.round() as i64);
    if x0 < 0 || y0 < 0 || x0 + w > image.width() as i64 || y0 + h > image.height() as i64 {
        return Err(Error::Domain(format!(
            "crop {}x{} at ({x0}, {y0}) exceeds image {}x{}",
            w,
            h,
            image.width(),
            image.height()
        )));
    }
    Ok(imageops::crop_imm(image, x0 as u32, y0 as u32, w as u32, h as u32).to_image())
}

pub fn flip_horizontal(image: &RgbImage) -> RgbImage {
    imageops::flip_horizontal(image)
}

/// Resize to `w x h` if needed (bilinear).
pub fn fit(image: &RgbImage, w: u32, h: u32) -> RgbImage {
    if image.width() == w && image.height() == h {
        image.clone()
    } else {
        imageops::resize(image, w, h, imageops::FilterType::Triangle)
    }
}

/// Append the image as channel-major `[3, h, w]` floats in `[0, 1]`.
pub fn push_chw(image: &RgbImage, out: &mut Vec<f32>) {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let base = out.len();
    out.resize(base + 3 * w * h, 0.0);
    for (x, y, px) in image.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            out[base + c * w * h + i] = px[c] as f32 / 255.0;
        }
    }
}

fn map_pixels(image: &RgbImage, f: impl Fn(usize, f32) -> f32) -> RgbImage {
    let mut out = image.clone();
    for px in out.pixels_mut() {
        for c in 0..3 {
            px[c] = f(c, px[c] as f32).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

pub fn adjust_brightness(image: &RgbImage, delta: f32) -> RgbImage {
    map_pixels(image, |_, v| v + delta)
}

/// Scale deviations from the mean intensity by `factor`.
pub fn adjust_contrast(image: &RgbImage, factor: f32) -> RgbImage {
    let n = (image.width() * image.height() * 3).max(1) as f64;
    let mean = image.as_raw().iter().map(|&v| v as f64).sum::<f64>() / n;
    let mean = mean as f32;
    map_pixels(image, |_, v| mean + (v - mean) * factor)
}

pub fn shift_color(image: &RgbImage, shift: [f32; 3]) -> RgbImage {
    map_pixels(image, |c, v| v + shift[c])
}

pub fn blur(image: &RgbImage, sigma: f32) -> RgbImage {
    imageops::blur(image, sigma)
}

pub fn sharpen(image: &RgbImage, sigma: f32, threshold: i32) -> RgbImage {
    imageops::unsharpen(image, sigma, threshold)
}

pub fn fill_rect(image: &mut RgbImage, x: u32, y: u32, w: u32, h: u32, color: Rgb<u8>) {
    let x1 = (x + w).min(image.width());
    let y1 = (y + h).min(image.height());
    for yy in y..y1 {
        for xx in x..x1 {
            image.put_pixel(xx, yy, color);
        }
    }
}
