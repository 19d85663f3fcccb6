//! Cropping, padding and standardization into model-ready batches.

use rand::Rng;

use super::StereoSample;
use crate::backbone::{ImageBatch, IMAGENET_MEAN, IMAGENET_STD, SIZE_DIVISOR};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Zero padding added below and to the right of the original image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padding {
    pub orig_hw: (usize, usize),
    pub bottom: usize,
    pub right: usize,
}

impl Padding {
    /// Pad `(h, w)` up to the next multiple of `divisor`.
    pub fn for_size(hw: (usize, usize), divisor: usize) -> Self {
        let up = |v: usize| v.div_ceil(divisor) * divisor;
        Padding {
            orig_hw: hw,
            bottom: up(hw.0) - hw.0,
            right: up(hw.1) - hw.1,
        }
    }

    pub fn padded_hw(&self) -> (usize, usize) {
        (self.orig_hw.0 + self.bottom, self.orig_hw.1 + self.right)
    }
}

/// Per-channel ImageNet standardization of a `[3, H, W]` image.
pub fn standardize(img: &Tensor) -> Result<Tensor> {
    let hw = match *img.shape() {
        [3, h, w] => h * w,
        _ => {
            return Err(Error::shape(format!(
                "expected [3,H,W] image, got {:?}",
                img.shape()
            )))
        }
    };
    let mut out = img.clone();
    for (c, plane) in out.data_mut().chunks_mut(hw).enumerate() {
        for v in plane {
            *v = (*v - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
        }
    }
    Ok(out)
}

/// Zero-pad the trailing two axes of `[.., H, W]` per `pad`.
pub fn pad(x: &Tensor, pad: &Padding) -> Result<Tensor> {
    let s = x.shape();
    let n = s.len();
    if n < 2 || (s[n - 2], s[n - 1]) != pad.orig_hw {
        return Err(Error::shape(format!(
            "{:?} does not end in {:?}",
            s, pad.orig_hw
        )));
    }
    let (h, w) = pad.orig_hw;
    let (ph, pw) = pad.padded_hw();
    let lead: usize = s[..n - 2].iter().product();
    let mut shape = s.to_vec();
    shape[n - 2] = ph;
    shape[n - 1] = pw;
    let mut out = Tensor::zeros(&shape);
    for p in 0..lead {
        for y in 0..h {
            out.data_mut()[p * ph * pw + y * pw..][..w]
                .copy_from_slice(&x.data()[p * h * w + y * w..][..w]);
        }
    }
    Ok(out)
}

/// Inverse of [`pad`]: keep the top-left `orig_hw` window.
pub fn unpad(x: &Tensor, pad: &Padding) -> Result<Tensor> {
    let (h, w) = pad.orig_hw;
    crop(x, 0, 0, h, w)
}

/// Window of the trailing two axes.
pub fn crop(x: &Tensor, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor> {
    let s = x.shape();
    let n = s.len();
    if n < 2 || y0 + h > s[n - 2] || x0 + w > s[n - 1] {
        return Err(Error::shape(format!(
            "window {}x{} at ({}, {}) outside {:?}",
            h, w, y0, x0, s
        )));
    }
    let (ih, iw) = (s[n - 2], s[n - 1]);
    let lead: usize = s[..n - 2].iter().product();
    let mut shape = s.to_vec();
    shape[n - 2] = h;
    shape[n - 1] = w;
    let mut data = Vec::with_capacity(lead * h * w);
    for p in 0..lead {
        for y in y0..y0 + h {
            data.extend_from_slice(&x.data()[p * ih * iw + y * iw + x0..][..w]);
        }
    }
    Tensor::from_vec(&shape, data)
}

fn crop_mask(m: &[bool], iw: usize, y0: usize, x0: usize, h: usize, w: usize) -> Vec<bool> {
    (y0..y0 + h)
        .flat_map(|y| m[y * iw + x0..y * iw + x0 + w].iter().copied())
        .collect()
}

/// Same random window on every field of the sample.
pub fn random_crop(
    s: &StereoSample,
    crop_hw: (usize, usize),
    rng: &mut impl Rng,
) -> Result<StereoSample> {
    let (h, w) = s.hw();
    let (ch, cw) = crop_hw;
    if ch > h || cw > w {
        return Err(Error::Dataset(format!(
            "image {}x{} is smaller than the crop {}x{}",
            h, w, ch, cw
        )));
    }
    let y0 = rng.gen_range(0..=h - ch);
    let x0 = rng.gen_range(0..=w - cw);
    Ok(StereoSample {
        left: crop(&s.left, y0, x0, ch, cw)?,
        right: crop(&s.right, y0, x0, ch, cw)?,
        gt: crop(&s.gt, y0, x0, ch, cw)?,
        valid: crop_mask(&s.valid, w, y0, x0, ch, cw),
    })
}

/// A standardized pair plus ground truth at the unpadded size.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub left: ImageBatch,
    pub right: ImageBatch,
    /// `[1, H, W]`, unpadded.
    pub gt: Tensor,
    pub valid: Vec<bool>,
    pub padding: Padding,
}

/// Training: random crop of `crop_hw`. Evaluation: pad to a multiple of 32.
/// Both standardize the images.
pub fn preprocess(
    s: &StereoSample,
    crop_hw: (usize, usize),
    training: bool,
    rng: &mut impl Rng,
) -> Result<Prepared> {
    let s = if training {
        random_crop(s, crop_hw, rng)?
    } else {
        s.clone()
    };
    let hw = s.hw();
    let padding = Padding::for_size(hw, SIZE_DIVISOR);
    let batch = |img: &Tensor| -> Result<ImageBatch> {
        let p = pad(&standardize(img)?, &padding)?;
        let (ph, pw) = padding.padded_hw();
        ImageBatch::new(p.reshape(&[1, 3, ph, pw])?, hw)
    };
    Ok(Prepared {
        left: batch(&s.left)?,
        right: batch(&s.right)?,
        gt: s.gt.clone().reshape(&[1, hw.0, hw.1])?,
        valid: s.valid,
        padding,
    })
}

/// Stack equally sized prepared samples along the batch axis.
pub fn collate(items: &[Prepared]) -> Result<Prepared> {
    let first = items
        .first()
        .ok_or_else(|| Error::contract("cannot collate an empty batch"))?;
    if items.iter().any(|p| p.padding != first.padding) {
        return Err(Error::shape("collated samples must share one size"));
    }
    let stack = |f: &dyn Fn(&Prepared) -> &Tensor| -> Result<Tensor> {
        let mut shape = f(first).shape().to_vec();
        shape[0] = items.len();
        Tensor::from_vec(
            &shape,
            items
                .iter()
                .flat_map(|p| f(p).data().iter().copied())
                .collect(),
        )
    };
    Ok(Prepared {
        left: ImageBatch::new(stack(&|p| p.left.data())?, first.padding.orig_hw)?,
        right: ImageBatch::new(stack(&|p| p.right.data())?, first.padding.orig_hw)?,
        gt: stack(&|p| &p.gt)?,
        valid: items.iter().flat_map(|p| p.valid.iter().copied()).collect(),
        padding: first.padding,
    })
}
