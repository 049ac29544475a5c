use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{DatasetSplit, Scaler};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw pixels of an IDX image file, row-major per image.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

/// File contents, transparently gunzipped when the gzip magic is present.
fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    offset: usize,
}

impl Cursor<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Idx { path: self.path.to_path_buf(), offset: self.offset, message: message.into() }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.offset < n {
            return Err(self.err(format!("truncated: needed {n} more bytes, {} available", self.bytes.len() - self.offset)));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let start = self.offset;
        let m = self.u32()?;
        if m != expected {
            self.offset = start;
            return Err(self.err(format!("bad magic number {m:#010x}, expected {expected:#010x}")));
        }
        Ok(())
    }
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = read_bytes(path)?;
    let mut c = Cursor { path, bytes: &bytes, offset: 0 };
    c.magic(IMAGES_MAGIC)?;
    let count = c.u32()? as usize;
    let rows = c.u32()? as usize;
    let cols = c.u32()? as usize;
    let pixels = c.take(count * rows * cols)?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    let mut c = Cursor { path, bytes: &bytes, offset: 0 };
    c.magic(LABELS_MAGIC)?;
    let count = c.u32()? as usize;
    Ok(c.take(count)?.to_vec())
}

fn load_pair(dir: &Path, prefix: &str, limit: Option<usize>) -> Result<(Tensor, Vec<usize>)> {
    let find = |stem: &str| {
        let plain = dir.join(stem);
        if plain.exists() {
            plain
        } else {
            dir.join(format!("{stem}.gz"))
        }
    };
    let images = read_idx_images(&find(&format!("{prefix}-images-idx3-ubyte")))?;
    let labels = read_idx_labels(&find(&format!("{prefix}-labels-idx1-ubyte")))?;
    if labels.len() != images.count {
        return Err(Error::Data(format!("{prefix}: {} images but {} labels", images.count, labels.len())));
    }
    let n = limit.map_or(images.count, |l| l.min(images.count));
    let width = images.rows * images.cols;
    let data = images.pixels[..n * width].iter().map(|&p| f64::from(p)).collect();
    Ok((Tensor::new(vec![n, width], data)?, labels[..n].iter().map(|&l| usize::from(l)).collect()))
}

/// Loads the standard training and test files from `dir` (`.gz` or plain).
///
/// The first `limit` training images are split 90/10 into train and
/// validation; the test file (first `test_limit` images) is the test split.
/// Pixels are standardized with one global mean and deviation taken from the
/// training part.
pub fn load_mnist(dir: &Path, limit: Option<usize>, test_limit: Option<usize>) -> Result<DatasetSplit> {
    let (x, y) = load_pair(dir, "train", limit)?;
    let (x_test, y_test) = load_pair(dir, "t10k", test_limit)?;
    let n = x.rows();
    let n_train = n - (0.1 * n as f64).round() as usize;
    let width = x.cols();
    let x_train = x.narrow(0, 0, n_train)?;
    let x_val = x.narrow(0, n_train, n - n_train)?;
    let count = x_train.len().max(1) as f64;
    let mean = x_train.data().iter().sum::<f64>() / count;
    let var = x_train.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let scaler = Scaler { mean: vec![mean; width], std: vec![std; width] };
    let side = (width as f64).sqrt() as usize;
    Ok(DatasetSplit {
        x_train: scaler.transform(&x_train),
        y_train: y[..n_train].to_vec(),
        x_val: scaler.transform(&x_val),
        y_val: y[n_train..].to_vec(),
        x_test: scaler.transform(&x_test),
        y_test,
        scaler,
        feature_names: (0..width).map(|i| format!("px_{}_{}", i / side.max(1), i % side.max(1))).collect(),
        class_names: (0..10).map(|d| d.to_string()).collect(),
    })
}
