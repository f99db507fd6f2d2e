//! Reader for the big-endian IDX container used by MNIST-style datasets.

use std::path::Path;

use thiserror::Error;

use super::data::Dataset;
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated, need {needed} bytes but file has {actual}")]
    Truncated {
        path: String,
        needed: usize,
        actual: usize,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn be_u32(bytes: &[u8], at: usize, path: &str) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| IdxError::Truncated {
            path: path.to_string(),
            needed: at + 4,
            actual: bytes.len(),
        })
}

/// Parses an IDX buffer with the given magic. Returns dimension sizes and
/// the payload bytes.
pub fn parse_idx<'a>(bytes: &'a [u8], magic: u32, path: &str) -> Result<(Vec<usize>, &'a [u8]), IdxError> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(IdxError::BadMagic {
            path: path.to_string(),
            found,
            expected: magic,
        });
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|i| be_u32(bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let start = 4 + 4 * ndim;
    let needed = start + dims.iter().product::<usize>();
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            path: path.to_string(),
            needed,
            actual: bytes.len(),
        });
    }
    Ok((dims, &bytes[start..needed]))
}

fn read(path: &Path) -> Result<Vec<u8>, IdxError> {
    std::fs::read(path).map_err(|source| IdxError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads images as `[N, 1, H, W]` in `[0, 1]` with their labels. Everything
/// lands in the training split; class count is `max(label) + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, IdxError> {
    let img_bytes = read(images_path)?;
    let lbl_bytes = read(labels_path)?;
    let ip = images_path.display().to_string();
    let lp = labels_path.display().to_string();
    let (idims, pixels) = parse_idx(&img_bytes, IMAGE_MAGIC, &ip)?;
    let (ldims, labels) = parse_idx(&lbl_bytes, LABEL_MAGIC, &lp)?;
    if idims[0] != ldims[0] {
        return Err(IdxError::CountMismatch {
            images: idims[0],
            labels: ldims[0],
        });
    }
    let data = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let x = Tensor::new(vec![idims[0], 1, idims[1], idims[2]], data).expect("sizes checked by parse_idx");
    let y: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
    let classes = y.iter().max().map_or(1, |m| m + 1);
    Ok(Dataset::from_parts(x, y, classes, idims[0]))
}
