//! KITTI-style 16-bit PNG disparity maps: `value / 256`, raw 0 = unlabeled.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const KITTI_SCALE: f32 = 256.0;

/// Decode raw 16-bit values into disparity and validity.
pub fn decode_kitti(raw: &[u16], h: usize, w: usize) -> Result<(Tensor, Vec<bool>)> {
    let d = raw.iter().map(|&v| v as f32 / KITTI_SCALE).collect();
    Ok((
        Tensor::from_vec(&[h, w], d)?,
        raw.iter().map(|&v| v != 0).collect(),
    ))
}

/// `[H, W]` disparity plus a mask that is false where the raw value is 0.
pub fn read_kitti_disparity(path: impl AsRef<Path>) -> Result<(Tensor, Vec<bool>)> {
    let path = path.as_ref();
    let img = image::open(path)?;
    match img {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            decode_kitti(buf.as_raw(), h as usize, w as usize)
        }
        other => Err(Error::Format {
            path: path.to_path_buf(),
            message: format!(
                "expected a 16-bit single-channel PNG, found {:?}",
                other.color()
            ),
        }),
    }
}

/// Encode with `round(d * 256)`; non-positive or non-finite values become 0.
pub fn write_kitti_disparity(path: impl AsRef<Path>, d: &Tensor) -> Result<()> {
    let (h, w) = match *d.shape() {
        [h, w] | [1, h, w] => (h, w),
        _ => {
            return Err(Error::shape(format!(
                "expected [H,W] disparity, got {:?}",
                d.shape()
            )))
        }
    };
    let raw: Vec<u16> = d
        .data()
        .iter()
        .map(|&v| {
            if v.is_finite() && v > 0.0 {
                (v * KITTI_SCALE).round().min(u16::MAX as f32) as u16
            } else {
                0
            }
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer length matches");
    buf.save(path.as_ref())?;
    Ok(())
}
