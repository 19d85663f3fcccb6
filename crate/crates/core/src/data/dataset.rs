//! Directory layouts.
//!
//! * `synthetic` and `sceneflow`: `<root>/<split>/{left,right}/<name>.png`
//!   with ground truth in `<root>/<split>/disparity/<name>.pfm`.
//! * `kitti`: `<root>/training/{image_2,image_3,disp_occ_0}/<name>.png`;
//!   every fifth training pair (index 4, 9, ...) forms the `val` split.
//!   `test` reads `<root>/testing/{image_2,image_3}` without ground truth.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::io::{read_rgb, write_rgb};
use super::kitti::read_kitti_disparity;
use super::pfm::{read_pfm_disparity, write_pfm_disparity};
use super::synthetic::{generate_synthetic_pair, SynthParams};
use super::StereoSample;
use crate::error::{Error, Result};
use crate::losses::validity_mask;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    SceneFlow,
    Kitti,
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(DatasetKind::Synthetic),
            "sceneflow" => Ok(DatasetKind::SceneFlow),
            "kitti" => Ok(DatasetKind::Kitti),
            _ => Err(Error::config(format!("unknown dataset kind '{}'", s))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Synthetic => "synthetic",
            DatasetKind::SceneFlow => "sceneflow",
            DatasetKind::Kitti => "kitti",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::config(format!("unknown split '{}'", s))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub root: PathBuf,
    pub split: Split,
    pub kind: DatasetKind,
    pub crop: (usize, usize),
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.crop;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::config(format!(
                "crop {}x{} must be a positive multiple of 32",
                h, w
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Entry {
    Files {
        left: PathBuf,
        right: PathBuf,
        gt: Option<PathBuf>,
    },
    Memory(Box<StereoSample>),
}

/// An indexed list of samples, loaded lazily from disk or held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub kind: DatasetKind,
    /// Values at or above this bound are masked out on load.
    pub max_disparity: f32,
    entries: Vec<Entry>,
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("cannot list {}: {}", dir.display(), e)))?;
    let mut out = Vec::new();
    for e in rd {
        let p = e
            .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
            .path();
        if p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn require(p: PathBuf) -> Result<PathBuf> {
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::Dataset(format!("missing file {}", p.display())))
    }
}

impl Dataset {
    pub fn open(spec: &DatasetSpec, max_disparity: f32) -> Result<Self> {
        let entries = match spec.kind {
            DatasetKind::Synthetic | DatasetKind::SceneFlow => {
                let base = spec.root.join(spec.split.to_string());
                let mut v = Vec::new();
                for left in list_dir(&base.join("left"))? {
                    let name = left.file_name().expect("file").to_owned();
                    let stem = left.file_stem().expect("file").to_owned();
                    v.push(Entry::Files {
                        right: require(base.join("right").join(&name))?,
                        gt: Some(require(
                            base.join("disparity").join(stem).with_extension("pfm"),
                        )?),
                        left,
                    });
                }
                v
            }
            DatasetKind::Kitti => {
                let (dir, has_gt) = match spec.split {
                    Split::Test => ("testing", false),
                    _ => ("training", true),
                };
                let base = spec.root.join(dir);
                let lefts: Vec<PathBuf> = list_dir(&base.join("image_2"))?
                    .into_iter()
                    .filter(|p| p.extension().is_some_and(|e| e == "png"))
                    .collect();
                let mut v = Vec::new();
                for (i, left) in lefts.into_iter().enumerate() {
                    let in_val = i % 5 == 4;
                    if (spec.split == Split::Train && in_val)
                        || (spec.split == Split::Val && !in_val)
                    {
                        continue;
                    }
                    let name = left.file_name().expect("file").to_owned();
                    v.push(Entry::Files {
                        right: require(base.join("image_3").join(&name))?,
                        gt: if has_gt {
                            Some(require(base.join("disp_occ_0").join(&name))?)
                        } else {
                            None
                        },
                        left,
                    });
                }
                v
            }
        };
        if entries.is_empty() {
            return Err(Error::Dataset(format!(
                "no {} samples for split '{}' under {}",
                spec.kind,
                spec.split,
                spec.root.display()
            )));
        }
        Ok(Dataset {
            kind: spec.kind,
            max_disparity,
            entries,
        })
    }

    pub fn in_memory(samples: Vec<StereoSample>, max_disparity: f32) -> Self {
        Dataset {
            kind: DatasetKind::Synthetic,
            max_disparity,
            entries: samples
                .into_iter()
                .map(|s| Entry::Memory(Box::new(s)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Load sample `i`; the mask also excludes `gt >= max_disparity`.
    pub fn load(&self, i: usize) -> Result<StereoSample> {
        let entry = self
            .entries
            .get(i)
            .ok_or_else(|| Error::Dataset(format!("sample {} out of range {}", i, self.len())))?;
        let mut s = match entry {
            Entry::Memory(s) => (**s).clone(),
            Entry::Files { left, right, gt } => {
                let left_img = read_rgb(left)?;
                let right_img = read_rgb(right)?;
                let (h, w) = (left_img.dim(1), left_img.dim(2));
                let (gt, valid) = match gt {
                    None => (Tensor::zeros(&[h, w]), vec![false; h * w]),
                    Some(p) if self.kind == DatasetKind::Kitti => read_kitti_disparity(p)?,
                    Some(p) => {
                        let d = read_pfm_disparity(p)?;
                        let m = d
                            .data()
                            .iter()
                            .map(|v| v.is_finite() && *v >= 0.0)
                            .collect();
                        (d, m)
                    }
                };
                StereoSample {
                    left: left_img,
                    right: right_img,
                    gt,
                    valid,
                }
            }
        };
        s.validate()?;
        let range = validity_mask(&s.gt, self.max_disparity);
        for (v, r) in s.valid.iter_mut().zip(range) {
            *v &= r;
        }
        Ok(s)
    }
}

/// Seed of sample `index` in a set generated from `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64)
}

/// Write `count` generated pairs in the synthetic layout. Pixels with no
/// right-view match get ground truth 0 (unlabeled).
pub fn write_synthetic_dataset(
    root: &Path,
    split: Split,
    count: usize,
    seed: u64,
    p: &SynthParams,
) -> Result<()> {
    p.validate()?;
    let base = root.join(split.to_string());
    for sub in ["left", "right", "disparity"] {
        let d = base.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(format!("creating {}", d.display()), e))?;
    }
    for i in 0..count {
        let s = generate_synthetic_pair(sample_seed(seed, i), p)?;
        let name = format!("{:06}", i);
        write_rgb(base.join("left").join(format!("{}.png", name)), &s.left)?;
        write_rgb(base.join("right").join(format!("{}.png", name)), &s.right)?;
        let gt = s.gt.zip_map(
            &Tensor::from_vec(
                s.gt.shape(),
                s.valid.iter().map(|&v| v as u8 as f32).collect(),
            )?,
            |d, m| d * m,
        );
        write_pfm_disparity(base.join("disparity").join(format!("{}.pfm", name)), &gt)?;
    }
    Ok(())
}
