//! Procedural stereo pairs with exact integer ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::StereoSample;
use crate::backbone::SIZE_DIVISOR;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    pub num_shapes: usize,
    /// Inclusive integer disparity range.
    pub d_range: (u32, u32),
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0
            || self.width == 0
            || self.height % SIZE_DIVISOR != 0
            || self.width % SIZE_DIVISOR != 0
        {
            return Err(Error::config(format!(
                "synthetic size {}x{} must be a positive multiple of {}",
                self.height, self.width, SIZE_DIVISOR
            )));
        }
        let (lo, hi) = self.d_range;
        if lo > hi || hi as usize >= self.width {
            return Err(Error::config(format!(
                "disparity range {}..={} must be ordered and below the width {}",
                lo, hi, self.width
            )));
        }
        Ok(())
    }
}

/// Sum of bilinearly upsampled uniform noise at cell sizes 1, 2, 4, 8 and
/// 16, stretched to [0, 1] and quantized to multiples of 1/255 so 8-bit files
/// reproduce it exactly.
fn texture(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    let mut out = Tensor::zeros(&[3, h, w]);
    for c in 0..3 {
        let mut acc = vec![0f32; h * w];
        for o in 0..5 {
            let cell = 1usize << o;
            let (gh, gw) = (h / cell + 2, w / cell + 2);
            let grid: Vec<f32> = (0..gh * gw).map(|_| rng.gen::<f32>()).collect();
            for y in 0..h {
                let fy = y as f32 / cell as f32;
                let y0 = fy.floor() as usize;
                let ty = fy - y0 as f32;
                for x in 0..w {
                    let fx = x as f32 / cell as f32;
                    let x0 = fx.floor() as usize;
                    let tx = fx - x0 as f32;
                    let g = |yy: usize, xx: usize| grid[yy * gw + xx];
                    let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
                    let bot = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
                    acc[y * w + x] += top * (1.0 - ty) + bot * ty;
                }
            }
        }
        let (lo, hi) = acc
            .iter()
            .fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let span = (hi - lo).max(1e-6);
        let plane = &mut out.data_mut()[c * h * w..(c + 1) * h * w];
        for (o, &v) in plane.iter_mut().zip(&acc) {
            *o = (((v - lo) / span) * 255.0).round() / 255.0;
        }
    }
    out
}

/// Integer disparity map: a background plane with random signed slopes in the
/// lower half of the range plus nearer rectangles. Each rectangle sits 2 or 3
/// px in front of the nearest surface it covers; the largest disparity wins on
/// overlap.
fn disparity_map(rng: &mut ChaCha8Rng, p: &SynthParams) -> Vec<u32> {
    let (h, w) = (p.height, p.width);
    let (lo, hi) = p.d_range;
    let mid = lo + (hi - lo) / 2;
    let (a, b): (f32, f32) = (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
    let mut d: Vec<u32> = (0..h * w)
        .map(|i| {
            let u = 2.0 * (i % w) as f32 / (w - 1).max(1) as f32 - 1.0;
            let v = 2.0 * (i / w) as f32 / (h - 1).max(1) as f32 - 1.0;
            let t = 0.5 + 0.25 * (a * u + b * v);
            (lo as f32 + t * (mid - lo) as f32).round() as u32
        })
        .collect();
    for _ in 0..p.num_shapes {
        let rh = rng.gen_range((h / 8).max(1)..=(h / 2).max(1));
        let rw = rng.gen_range((w / 8).max(1)..=(w / 3).max(1));
        let y0 = rng.gen_range(0..=h - rh);
        let x0 = rng.gen_range(0..=w - rw);
        let under = (y0..y0 + rh)
            .flat_map(|y| d[y * w + x0..y * w + x0 + rw].iter().copied())
            .max()
            .unwrap_or(lo);
        let v = (under + rng.gen_range(2..=3)).min(hi);
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                let cell = &mut d[y * w + x];
                *cell = (*cell).max(v);
            }
        }
    }
    d
}

/// Right view is a random texture; the left view is `right(x - d, y)` where
/// that lies inside the image, and fresh noise elsewhere (masked invalid).
pub fn generate_synthetic_pair(seed: u64, p: &SynthParams) -> Result<StereoSample> {
    p.validate()?;
    let (h, w) = (p.height, p.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let right = texture(&mut rng, h, w);
    let disp = disparity_map(&mut rng, p);
    let filler = texture(&mut rng, h, w);
    let mut left = Tensor::zeros(&[3, h, w]);
    let mut valid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let d = disp[i] as usize;
            valid[i] = x >= d;
            for c in 0..3 {
                let base = c * h * w + y * w;
                left.data_mut()[base + x] = if x >= d {
                    right.data()[base + x - d]
                } else {
                    filler.data()[base + x]
                };
            }
        }
    }
    let gt = Tensor::from_vec(&[h, w], disp.iter().map(|&v| v as f32).collect())?;
    Ok(StereoSample {
        left,
        right,
        gt,
        valid,
    })
}
