//! IDX (MNIST) ingestion. Files may be gzip-compressed; offsets in error
//! messages refer to the decompressed byte stream.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Images `[n, rows, cols, 1]` in `[0, 1]` with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    images: Tensor<f32>,
    labels: Vec<usize>,
}

impl DatasetSplit {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 || s[3] != 1 {
            return Err(Error::contract(format!(
                "dataset images must be [n, rows, cols, 1], got {s:?}"
            )));
        }
        if s[0] != labels.len() {
            return Err(Error::contract(format!("{} images but {} labels", s[0], labels.len())));
        }
        if images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::contract("dataset pixels must lie in [0, 1]"));
        }
        Ok(Self { images, labels })
    }

    /// Builds a split from per-image tensors of identical shape `[rows, cols, 1]`.
    pub fn from_images(images: &[Tensor<f32>], labels: Vec<usize>) -> Result<Self> {
        let Some(first) = images.first() else {
            return Err(Error::contract("cannot build a dataset from zero images"));
        };
        let shape = first.shape().to_vec();
        let mut data = Vec::with_capacity(images.len() * first.len());
        for img in images {
            if img.shape() != shape.as_slice() {
                return Err(Error::contract("images in a dataset must share one shape"));
            }
            data.extend_from_slice(img.data());
        }
        let mut full = vec![images.len()];
        full.extend(shape);
        Self::new(Tensor::new(full, data)?, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn image(&self, i: usize) -> Tensor<f32> {
        let per: usize = self.image_shape().iter().product();
        Tensor::from_parts(
            self.image_shape().to_vec(),
            self.images.data()[i * per..(i + 1) * per].to_vec(),
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::contract("empty subset"));
        }
        let imgs: Vec<Tensor<f32>> = indices.iter().map(|&i| self.image(i)).collect();
        Self::from_images(&imgs, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Appends extra images (already shaped like this split's images).
    pub fn extended(&self, extra: &[(Tensor<f32>, usize)]) -> Result<Self> {
        let mut imgs: Vec<Tensor<f32>> = (0..self.len()).map(|i| self.image(i)).collect();
        let mut labels = self.labels.clone();
        for (img, label) in extra {
            imgs.push(img.clone());
            labels.push(*label);
        }
        Self::from_images(&imgs, labels)
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(format!("decompressing {}", path.display()), e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
    what: &'static str,
}

impl Cursor<'_> {
    fn fail(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Ingest {
            what: self.what,
            path: self.path.to_path_buf(),
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        if end > self.bytes.len() {
            return Err(self.fail(self.pos, "truncated header"));
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..end].try_into().unwrap());
        self.pos = end;
        Ok(v)
    }

    fn rest(&self, expected: usize) -> Result<&[u8]> {
        let have = self.bytes.len() - self.pos;
        if have < expected {
            return Err(self.fail(
                self.bytes.len(),
                format!("truncated payload: header promises {expected} bytes, found {have}"),
            ));
        }
        if have > expected {
            return Err(self.fail(
                self.pos + expected,
                format!("{} trailing bytes after payload", have - expected),
            ));
        }
        Ok(&self.bytes[self.pos..])
    }
}

/// Raw IDX image file: `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_all(path)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
        what: "IDX image file",
    };
    let magic = c.u32()?;
    if magic != IMAGE_MAGIC {
        return Err(c.fail(0, format!("bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let n = c.u32()? as usize;
    let rows = c.u32()? as usize;
    let cols = c.u32()? as usize;
    if rows == 0 || cols == 0 {
        return Err(c.fail(8, format!("degenerate image size {rows}x{cols}")));
    }
    let pixels = c.rest(n * rows * cols)?.to_vec();
    Ok((n, rows, cols, pixels))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_all(path)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
        what: "IDX label file",
    };
    let magic = c.u32()?;
    if magic != LABEL_MAGIC {
        return Err(c.fail(0, format!("bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let n = c.u32()? as usize;
    Ok(c.rest(n)?.to_vec())
}

pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<DatasetSplit> {
    let (n, rows, cols, pixels) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(Error::Ingest {
            what: "IDX label file",
            path: labels_path.to_path_buf(),
            offset: 4,
            msg: format!("{} labels but the image file holds {n} images", labels.len()),
        });
    }
    if n == 0 {
        return Err(Error::Ingest {
            what: "IDX image file",
            path: images_path.to_path_buf(),
            offset: 4,
            msg: "file holds no images".into(),
        });
    }
    let data = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    DatasetSplit::new(
        Tensor::from_parts(vec![n, rows, cols, 1], data),
        labels.into_iter().map(usize::from).collect(),
    )
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    if path.extension().is_some_and(|e| e == "gz") {
        let file = fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes).map_err(|e| Error::io(ctx(), e))?;
        enc.finish().map_err(|e| Error::io(ctx(), e))?;
        Ok(())
    } else {
        fs::write(path, bytes).map_err(|e| Error::io(ctx(), e))
    }
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if rows == 0 || cols == 0 || !pixels.len().is_multiple_of(rows * cols) {
        return Err(Error::contract("pixel buffer is not a whole number of images"));
    }
    let mut bytes = Vec::with_capacity(16 + pixels.len());
    bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&((pixels.len() / (rows * cols)) as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    bytes.extend_from_slice(pixels);
    write_maybe_gz(path, &bytes)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    write_maybe_gz(path, &bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

fn resolve(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(Error::io(
        format!("looking for {stem}[.gz] in {}", dir.display()),
        std::io::Error::from(std::io::ErrorKind::NotFound),
    ))
}

/// Loads one split from a directory holding the standard MNIST file names
/// (`train-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`, ... optionally `.gz`).
pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<DatasetSplit> {
    let images = resolve(dir, &format!("{}-images-idx3-ubyte", split.prefix()))?;
    let labels = resolve(dir, &format!("{}-labels-idx1-ubyte", split.prefix()))?;
    load_mnist(&images, &labels)
}
