//! 8-bit color renderings of disparity and error maps.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn hw(t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] | [1, h, w] => Ok((h, w)),
        _ => Err(Error::shape(format!(
            "expected [H,W] map, got {:?}",
            t.shape()
        ))),
    }
}

/// Jet-style ramp over [0, 1].
pub fn ramp(t: f32) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let f = |c: f32| ((1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [f(3.0), f(2.0), f(1.0)]
}

/// Disparity scaled by `max_disparity`; non-finite values are black.
pub fn colorize_disparity(d: &Tensor, max_disparity: f32) -> Result<RgbImage> {
    let (h, w) = hw(d)?;
    let data = d.data();
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = data[y as usize * w + x as usize];
        if v.is_finite() {
            Rgb(ramp(v / max_disparity))
        } else {
            Rgb([0, 0, 0])
        }
    }))
}

/// Absolute-error bins (px) with their colors, blue for small to red for large.
pub const ERROR_BINS: [(f32, [u8; 3]); 10] = [
    (0.1875, [49, 54, 149]),
    (0.375, [69, 117, 180]),
    (0.75, [116, 173, 209]),
    (1.5, [171, 217, 233]),
    (3.0, [224, 243, 248]),
    (6.0, [254, 224, 144]),
    (12.0, [253, 174, 97]),
    (24.0, [244, 109, 67]),
    (48.0, [215, 48, 39]),
    (f32::INFINITY, [165, 0, 38]),
];

pub fn error_color(abs_err: f32) -> [u8; 3] {
    ERROR_BINS
        .iter()
        .find(|(hi, _)| abs_err < *hi)
        .map_or(ERROR_BINS[9].1, |b| b.1)
}

/// `|pred - gt|` binned to colors; pixels outside `valid` are black.
pub fn colorize_error(pred: &Tensor, gt: &Tensor, valid: &[bool]) -> Result<RgbImage> {
    let (h, w) = hw(gt)?;
    if pred.numel() != h * w || valid.len() != h * w {
        return Err(Error::shape(
            "prediction, ground truth and mask sizes differ",
        ));
    }
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        if valid[i] {
            Rgb(error_color((pred.data()[i] - gt.data()[i]).abs()))
        } else {
            Rgb([0, 0, 0])
        }
    }))
}

pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    img.save(path.as_ref())?;
    Ok(())
}
