//! IDX container reader (the MNIST distribution format).
//!
//! Layout: big-endian magic `0x0000TTDD` (type code `TT`, `DD` dimensions),
//! `DD` big-endian u32 sizes, then the raw payload. Only unsigned bytes
//! (`TT = 0x08`) are supported.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Images scaled to `[0, 1]` plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `len × height × width`, row-major, each pixel `byte / 255`.
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
    pub height: usize,
    pub width: usize,
    pub split: String,
}

impl Dataset {
    pub fn new(
        images: Vec<f64>,
        labels: Vec<u8>,
        height: usize,
        width: usize,
        split: impl Into<String>,
    ) -> Result<Self> {
        let pixels = height * width;
        if pixels == 0 || images.len() != labels.len() * pixels {
            return Err(Error::mismatch("images", labels.len() * pixels, images.len()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::Shape(format!("label {bad} outside 0..=9")));
        }
        Ok(Self {
            images,
            labels,
            height,
            width,
            split: split.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let p = self.pixels();
        &self.images[i * p..(i + 1) * p]
    }

    /// The first `n` samples.
    pub fn subset(&self, n: usize) -> Result<Dataset> {
        if n > self.len() {
            return Err(Error::InvalidConfig(format!(
                "subset of {n} requested from {} samples",
                self.len()
            )));
        }
        Ok(Dataset {
            images: self.images[..n * self.pixels()].to_vec(),
            labels: self.labels[..n].to_vec(),
            height: self.height,
            width: self.width,
            split: self.split.clone(),
        })
    }
}

/// A decoded IDX array of unsigned bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an IDX file, requiring the given magic number.
pub fn read_idx(path: impl AsRef<Path>, magic: u32) -> Result<IdxArray> {
    let path = path.as_ref();
    parse_idx(&fs::read(path)?, magic, path)
}

fn parse_idx(bytes: &[u8], magic: u32, path: &Path) -> Result<IdxArray> {
    let truncated = |expected: u64| Error::Truncated {
        path: path.to_path_buf(),
        expected,
        actual: bytes.len() as u64,
    };
    let word = |i: usize| -> Option<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
    };
    let found = word(0).ok_or_else(|| truncated(4))?;
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let ndims = (magic & 0xff) as usize;
    let header = 4 * (1 + ndims);
    let mut dims = Vec::with_capacity(ndims);
    let mut total: u64 = 1;
    for i in 0..ndims {
        let d = word(1 + i).ok_or_else(|| truncated(header as u64))?;
        total = total
            .checked_mul(u64::from(d))
            .filter(|&t| t <= isize::MAX as u64 - header as u64)
            .ok_or_else(|| Error::DimensionOverflow {
                path: path.to_path_buf(),
            })?;
        dims.push(d as usize);
    }
    let expected = header as u64 + total;
    if (bytes.len() as u64) < expected {
        return Err(truncated(expected));
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("{} trailing bytes", bytes.len() as u64 - expected),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Loads an image file and its label file into a [`Dataset`].
pub fn load_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    split: impl Into<String>,
) -> Result<Dataset> {
    let img = read_idx(images.as_ref(), IMAGES_MAGIC)?;
    let lab = read_idx(labels.as_ref(), LABELS_MAGIC)?;
    if img.dims[0] != lab.dims[0] {
        return Err(Error::Format {
            path: labels.as_ref().to_path_buf(),
            message: format!("{} labels for {} images", lab.dims[0], img.dims[0]),
        });
    }
    let pixels = img.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    Dataset::new(pixels, lab.data, img.dims[1], img.dims[2], split)
}

/// A dataset family stored as the four standard IDX files under one directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
}

impl DatasetKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::FashionMnist => "fashion-mnist",
        }
    }

    /// `(images, labels)` paths for the `train` or `t10k` split under `root`.
    pub fn files(self, root: &Path, train: bool) -> (PathBuf, PathBuf) {
        let prefix = if train { "train" } else { "t10k" };
        let dir = root.join(self.dir_name());
        (
            dir.join(format!("{prefix}-images-idx3-ubyte")),
            dir.join(format!("{prefix}-labels-idx1-ubyte")),
        )
    }

    pub fn load(self, root: &Path, train: bool) -> Result<Dataset> {
        let (images, labels) = self.files(root, train);
        load_idx(images, labels, if train { "train" } else { "test" })
    }
}
