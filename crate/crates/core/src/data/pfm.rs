//! Portable Float Map reading and writing.
//!
//! Header: `Pf` (one channel) or `PF` (three channels), then `width height`,
//! then a scale whose sign gives the byte order (negative = little-endian),
//! then a single whitespace byte and the raw `f32` payload. Rows are stored
//! bottom to top; [`PfmImage::data`] is always top to bottom.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    /// 1 or 3.
    pub channels: usize,
    /// Row-major, top row first, channels interleaved.
    pub data: Vec<f32>,
    /// Absolute value of the header scale.
    pub scale: f32,
    pub little_endian: bool,
}

impl PfmImage {
    /// Single-channel little-endian map with scale 1.
    pub fn from_disparity(d: &Tensor) -> Result<Self> {
        let (h, w) = match *d.shape() {
            [h, w] => (h, w),
            [1, h, w] => (h, w),
            _ => {
                return Err(Error::shape(format!(
                    "expected [H,W] disparity, got {:?}",
                    d.shape()
                )))
            }
        };
        Ok(PfmImage {
            width: w,
            height: h,
            channels: 1,
            data: d.data().to_vec(),
            scale: 1.0,
            little_endian: true,
        })
    }

    /// `[H, W]` tensor of a single-channel map.
    pub fn to_tensor(&self) -> Result<Tensor> {
        if self.channels != 1 {
            return Err(Error::shape(format!(
                "expected 1 channel, got {}",
                self.channels
            )));
        }
        Tensor::from_vec(&[self.height, self.width], self.data.clone())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn token(&mut self, what: &str) -> Result<&'a str> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return Err(self.err(format!("missing {}", what)));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::Parse {
            path: self.path.to_path_buf(),
            offset: start as u64,
            message: format!("non-ASCII {}", what),
        })
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        self.skip_ws();
        let start = self.pos;
        let tok = self.token(what)?;
        tok.parse().map_err(|_| Error::Parse {
            path: self.path.to_path_buf(),
            offset: start as u64,
            message: format!("invalid {} '{}'", what, tok),
        })
    }
}

/// Parse an in-memory PFM file. `path` is used only in error messages.
pub fn parse_pfm(bytes: &[u8], path: &Path) -> Result<PfmImage> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
    };
    let magic_at = c.pos;
    let channels = match c.token("magic")? {
        "Pf" => 1,
        "PF" => 3,
        other => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: magic_at as u64,
                message: format!("bad magic '{}', expected Pf or PF", other),
            })
        }
    };
    let width: usize = c.number("width")?;
    let height: usize = c.number("height")?;
    c.skip_ws();
    let scale_at = c.pos;
    let scale: f32 = c.number("scale")?;
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: scale_at as u64,
            message: format!("empty image {}x{}", width, height),
        });
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: scale_at as u64,
            message: "scale must be finite and nonzero".into(),
        });
    }
    match bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        _ => return Err(c.err("expected one whitespace byte after the scale")),
    }
    let row = width * channels;
    let need = row * height * 4;
    let have = bytes.len() - c.pos;
    if have < need {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            message: format!("truncated payload: {} of {} bytes", have, need),
        });
    }
    let little_endian = scale < 0.0;
    let payload = &bytes[c.pos..c.pos + need];
    let mut data = vec![0f32; row * height];
    for (file_row, chunk) in payload.chunks_exact(row * 4).enumerate() {
        let y = height - 1 - file_row;
        for (x, b) in chunk.chunks_exact(4).enumerate() {
            let b = [b[0], b[1], b[2], b[3]];
            data[y * row + x] = if little_endian {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
        }
    }
    Ok(PfmImage {
        width,
        height,
        channels,
        data,
        scale: scale.abs(),
        little_endian,
    })
}

/// Serialize to PFM bytes.
pub fn encode_pfm(img: &PfmImage) -> Result<Vec<u8>> {
    if img.channels != 1 && img.channels != 3 {
        return Err(Error::shape(format!(
            "PFM supports 1 or 3 channels, got {}",
            img.channels
        )));
    }
    let row = img.width * img.channels;
    if img.data.len() != row * img.height {
        return Err(Error::shape(format!(
            "{} values for {}x{}x{}",
            img.data.len(),
            img.height,
            img.width,
            img.channels
        )));
    }
    let magic = if img.channels == 1 { "Pf" } else { "PF" };
    let scale = if img.little_endian {
        -img.scale.abs()
    } else {
        img.scale.abs()
    };
    let mut out = format!("{}\n{} {}\n{}\n", magic, img.width, img.height, scale).into_bytes();
    out.reserve(img.data.len() * 4);
    for y in (0..img.height).rev() {
        for &v in &img.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&if img.little_endian {
                v.to_le_bytes()
            } else {
                v.to_be_bytes()
            });
        }
    }
    Ok(out)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<PfmImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_pfm(&bytes, path)
}

pub fn write_pfm(path: impl AsRef<Path>, img: &PfmImage) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pfm(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Read a single-channel disparity map as `[H, W]`; `PF` files are rejected.
pub fn read_pfm_disparity(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = read_pfm(path)?;
    if img.channels != 1 {
        return Err(Error::Format {
            path: PathBuf::from(path),
            message: "disparity must be a single-channel (Pf) map".into(),
        });
    }
    img.to_tensor()
}

pub fn write_pfm_disparity(path: impl AsRef<Path>, d: &Tensor) -> Result<()> {
    write_pfm(path, &PfmImage::from_disparity(d)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem.pfm")
    }

    #[test]
    fn two_by_two_little_endian_rows_flipped() {
        let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
        for v in [1f32, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let img = parse_pfm(&bytes, p()).unwrap();
        assert_eq!(img.data, vec![3.0, 4.0, 1.0, 2.0]);
        assert!(img.little_endian);
        assert_eq!(img.scale, 1.0);
    }

    #[test]
    fn big_endian_payload() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&7.5f32.to_be_bytes());
        assert_eq!(parse_pfm(&bytes, p()).unwrap().data, vec![7.5]);
    }

    #[test]
    fn errors_carry_offsets() {
        match parse_pfm(b"P5\n1 1\n1\n", p()) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{:?}", other),
        }
        match parse_pfm(b"Pf\n2 x\n", p()) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{:?}", other),
        }
        match parse_pfm(b"Pf\n2 2\n-1\n\0\0\0\0", p()) {
            Err(Error::Parse {
                offset, message, ..
            }) => {
                assert_eq!(offset, 14);
                assert!(message.contains("truncated"));
            }
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn encode_round_trips_both_orders() {
        for le in [true, false] {
            let img = PfmImage {
                width: 3,
                height: 2,
                channels: 3,
                data: (0..18).map(|i| i as f32 * -0.37).collect(),
                scale: 2.5,
                little_endian: le,
            };
            assert_eq!(parse_pfm(&encode_pfm(&img).unwrap(), p()).unwrap(), img);
        }
    }
}
