//! MNIST-style data: IDX parsing and writing, seeded splits and minibatches.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::scalar::Scalar;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Full,
    Train,
    Valid,
    Test,
}

/// Images as rows of an `(n, rows * cols)` matrix with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T = f64> {
    pub images: Array2<T>,
    pub labels: Option<Vec<u8>>,
    /// `(rows, cols)` of a single image.
    pub image_shape: (usize, usize),
    pub split: SplitTag,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Array2<T>, labels: Option<Vec<u8>>, image_shape: (usize, usize)) -> Result<Self> {
        if image_shape.0 * image_shape.1 != images.ncols() {
            return Err(Error::shape("image size", image_shape.0 * image_shape.1, images.ncols()));
        }
        if let Some(labels) = &labels {
            if labels.len() != images.nrows() {
                return Err(Error::shape("label count", images.nrows(), labels.len()));
            }
        }
        if images.iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
            return Err(Error::invalid("pixels must lie in [0, 1]"));
        }
        Ok(Self {
            images,
            labels,
            image_shape,
            split: SplitTag::Full,
        })
    }

    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.images.ncols()
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            image_shape: self.image_shape,
            split: self.split,
        }
    }

    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }

    /// Minibatches of one epoch in a seeded order; see [`minibatch_indices`].
    pub fn minibatches(&self, size: usize, seed: u64, epoch: u64) -> impl Iterator<Item = Array2<T>> + '_ {
        minibatch_indices(self.len(), size, seed, epoch)
            .into_iter()
            .map(move |idx| self.images.select(Axis(0), &idx))
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Length {
            what: format!("IDX header ({what})"),
            expected: offset + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX3 image file (magic `0x00000803`); pixels are scaled by `1/255`.
pub fn parse_idx_images<T: Scalar>(bytes: &[u8]) -> Result<Dataset<T>> {
    let magic = read_u32_be(bytes, 0, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Magic {
            what: "IDX image file",
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = read_u32_be(bytes, 4, "image count")? as usize;
    let rows = read_u32_be(bytes, 8, "row count")? as usize;
    let cols = read_u32_be(bytes, 12, "column count")? as usize;
    let dim = rows * cols;
    let payload = &bytes[16..];
    if payload.len() < n * dim {
        return Err(Error::Length {
            what: "IDX image payload".into(),
            expected: n * dim,
            found: payload.len(),
        });
    }
    let scale = T::lit(1.0 / 255.0);
    let images = Array2::from_shape_fn((n, dim), |(i, j)| T::lit(payload[i * dim + j] as f64) * scale);
    Dataset::new(images, None, (rows, cols))
}

/// Parses an IDX1 label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32_be(bytes, 0, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Magic {
            what: "IDX label file",
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let n = read_u32_be(bytes, 4, "label count")? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(Error::Length {
            what: "IDX label payload".into(),
            expected: n,
            found: payload.len(),
        });
    }
    Ok(payload[..n].to_vec())
}

pub fn load_idx_images<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_labels(&bytes)
}

/// Loads images and, when given, their labels.
pub fn load_mnist<T: Scalar>(images: impl AsRef<Path>, labels: Option<&Path>) -> Result<Dataset<T>> {
    let mut data = load_idx_images(images)?;
    if let Some(labels) = labels {
        let labels = load_idx_labels(labels)?;
        if labels.len() != data.len() {
            return Err(Error::shape("label count", data.len(), labels.len()));
        }
        data.labels = Some(labels);
    }
    Ok(data)
}

/// Serializes images as IDX3, quantizing pixels to `round(255 p)`.
pub fn encode_idx_images<T: Scalar>(data: &Dataset<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + data.images.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    out.extend_from_slice(&(data.image_shape.0 as u32).to_be_bytes());
    out.extend_from_slice(&(data.image_shape.1 as u32).to_be_bytes());
    out.extend(data.images.iter().map(|p| (p.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx_images<T: Scalar>(data: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_idx_images(data)).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(labels: &[u8], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_idx_labels(labels)).map_err(|e| Error::io(path, e))
}

/// Seeded permutation of `0..n`.
pub fn permutation(n: usize, rng: &mut RandomSource) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx
}

/// Shuffles with `seed` and returns disjoint `(train, valid)` subsets of the
/// requested sizes.
pub fn split<T: Scalar>(data: &Dataset<T>, train_n: usize, valid_n: usize, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
    let (train, valid, _) = split_with_rest(data, train_n, valid_n, seed)?;
    Ok((train, valid))
}

/// [`split`] plus every example left over, tagged as the test split.
pub fn split_with_rest<T: Scalar>(
    data: &Dataset<T>,
    train_n: usize,
    valid_n: usize,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>, Dataset<T>)> {
    if train_n + valid_n > data.len() {
        return Err(Error::invalid(format!(
            "cannot split {} examples into {train_n} + {valid_n}",
            data.len()
        )));
    }
    let order = permutation(data.len(), &mut RandomSource::new(seed));
    let train = data.select(&order[..train_n]).with_split(SplitTag::Train);
    let valid = data.select(&order[train_n..train_n + valid_n]).with_split(SplitTag::Valid);
    let rest = data.select(&order[train_n + valid_n..]).with_split(SplitTag::Test);
    Ok((train, valid, rest))
}

/// Row indices of every minibatch in `epoch`. The order is reshuffled per
/// epoch from `(seed, epoch)`; the final short batch is kept.
pub fn minibatch_indices(n: usize, size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(size >= 1, "minibatch size must be at least 1");
    let order = permutation(n, &mut RandomSource::new(seed).substream(epoch));
    order.chunks(size).map(<[usize]>::to_vec).collect()
}
