//! Dataset I/O, preprocessing and the synthetic stereo generator.
//!
//! Sign convention: `left(x, y)` matches `right(x - d, y)`.

pub mod dataset;
pub mod io;
pub mod kitti;
pub mod pfm;
pub mod preprocess;
pub mod synthetic;

pub use dataset::{sample_seed, write_synthetic_dataset, Dataset, DatasetKind, DatasetSpec, Split};
pub use kitti::{read_kitti_disparity, write_kitti_disparity};
pub use pfm::{read_pfm, read_pfm_disparity, write_pfm, write_pfm_disparity, PfmImage};
pub use preprocess::{collate, preprocess, Padding, Prepared};
pub use synthetic::{generate_synthetic_pair, SynthParams};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A rectified pair with left-view ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoSample {
    /// `[3, H, W]` in [0, 1].
    pub left: Tensor,
    pub right: Tensor,
    /// `[H, W]`.
    pub gt: Tensor,
    pub valid: Vec<bool>,
}

impl StereoSample {
    pub fn hw(&self) -> (usize, usize) {
        (self.gt.dim(0), self.gt.dim(1))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match (self.left.shape(), self.right.shape(), self.gt.shape()) {
            (&[3, h, w], r, &[gh, gw]) => {
                r == self.left.shape() && (h, w) == (gh, gw) && self.valid.len() == h * w
            }
            _ => false,
        };
        if !ok {
            return Err(Error::shape(format!(
                "inconsistent sample: left {:?}, right {:?}, gt {:?}, mask {}",
                self.left.shape(),
                self.right.shape(),
                self.gt.shape(),
                self.valid.len()
            )));
        }
        Ok(())
    }
}
