//! RGB image files as `[3, H, W]` tensors in [0, 1].

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn read_rgb(path: impl AsRef<Path>) -> Result<Tensor> {
    let img = image::open(path.as_ref())?.to_rgb32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Tensor::zeros(&[3, h, w]);
    let d = out.data_mut();
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            d[c * h * w + i] = px[c];
        }
    }
    Ok(out)
}

/// Quantize to 8 bits per channel and save (format from the extension).
pub fn write_rgb(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    let (h, w) = match *img.shape() {
        [3, h, w] => (h, w),
        _ => {
            return Err(Error::shape(format!(
                "expected [3,H,W] image, got {:?}",
                img.shape()
            )))
        }
    };
    let d = img.data();
    let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([0, 1, 2].map(|c| to_u8(d[c * h * w + i])))
    });
    buf.save(path.as_ref())?;
    Ok(())
}

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
