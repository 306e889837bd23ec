//! Readers for the IDX (MNIST-family) and CIFAR-10 binary formats.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
const CIFAR_PER_FILE: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format("idx", "truncated header"))
}

/// Loads `train-*-ubyte` or `t10k-*-ubyte` files from `dir`.
pub fn load_idx(dir: &Path, split: Split, classes: usize) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = read(&dir.join(format!("{prefix}-images-idx3-ubyte")))?;
    let labels = read(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?;

    if be_u32(&images, 0)? != IDX_IMAGES {
        return Err(Error::format("idx", "bad image magic"));
    }
    if be_u32(&labels, 0)? != IDX_LABELS {
        return Err(Error::format("idx", "bad label magic"));
    }
    let n = be_u32(&images, 4)? as usize;
    let (h, w) = (be_u32(&images, 8)? as usize, be_u32(&images, 12)? as usize);
    if be_u32(&labels, 4)? as usize != n {
        return Err(Error::format("idx", "image and label counts differ"));
    }
    if images.len() != 16 + n * h * w || labels.len() != 8 + n {
        return Err(Error::format("idx", "payload size does not match header"));
    }
    let pixels: Vec<f64> = images[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = labels[8..].iter().map(|&b| usize::from(b)).collect();
    let name = dir
        .file_name()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, Tensor::new(vec![n, 1, h, w], pixels)?, labels, classes)
}

/// Loads `data_batch_{1..5}.bin` or `test_batch.bin` from `dir`.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset> {
    let files: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".to_string()],
    };
    let mut pixels = Vec::with_capacity(files.len() * CIFAR_PER_FILE * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(files.len() * CIFAR_PER_FILE);
    for f in &files {
        let bytes = read(&dir.join(f))?;
        if bytes.len() != CIFAR_PER_FILE * CIFAR_RECORD {
            return Err(Error::format(
                "cifar10",
                format!("{f}: expected {} bytes, found {}", CIFAR_PER_FILE * CIFAR_RECORD, bytes.len()),
            ));
        }
        for rec in bytes.chunks(CIFAR_RECORD) {
            labels.push(usize::from(rec[0]));
            pixels.extend(rec[1..].iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    let n = labels.len();
    Dataset::new("cifar10", Tensor::new(vec![n, 3, 32, 32], pixels)?, labels, 10)
}
