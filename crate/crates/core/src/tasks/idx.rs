//! IDX container (the MNIST distribution format). Files may optionally be
//! gzip-compressed; compression is detected from the content.
//!
//! Images: magic `0x00000803`, then `u32` count, rows, cols, then
//! `count * rows * cols` unsigned bytes. Labels: magic `0x00000801`, `u32`
//! count, then `count` bytes. All integers big-endian.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Parsed image file: count, per-image dims, pixel bytes.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<(usize, Vec<usize>, Vec<u8>)> {
    if bytes.len() < 16 {
        return Err(Error::format(path, "truncated header"));
    }
    let magic = be_u32(bytes, 0);
    if magic != IMAGES_MAGIC {
        return Err(Error::format(path, format!("bad magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")));
    }
    let n = be_u32(bytes, 4) as usize;
    let dims = vec![be_u32(bytes, 8) as usize, be_u32(bytes, 12) as usize];
    let need = n * dims[0] * dims[1];
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::format(path, format!("truncated data: {} of {need} bytes", body.len())));
    }
    Ok((n, dims, body[..need].to_vec()))
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    if bytes.len() < 8 {
        return Err(Error::format(path, "truncated header"));
    }
    let magic = be_u32(bytes, 0);
    if magic != LABELS_MAGIC {
        return Err(Error::format(path, format!("bad magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")));
    }
    let n = be_u32(bytes, 4) as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::format(path, format!("truncated data: {} of {n} bytes", body.len())));
    }
    Ok(body[..n].to_vec())
}

/// Loads an image/label IDX pair; pixels are scaled to `[0, 1]` by `/255`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let (n, dims, pixels) = parse_images(&read_bytes(images_path)?, images_path)?;
    let labels = parse_labels(&read_bytes(labels_path)?, labels_path)?;
    if labels.len() != n {
        return Err(Error::format(
            labels_path,
            format!("count mismatch: {n} images, {} labels", labels.len()),
        ));
    }
    let d = dims[0] * dims[1];
    let inputs = Tensor::matrix(n, d, pixels.iter().map(|&p| f32::from(p) / 255.0).collect())?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(inputs, labels, k, format!("idx:{}", images_path.display()))
}

/// Serializes images (`n x rows x cols` bytes) and labels as an IDX pair.
pub fn encode_idx(rows: usize, cols: usize, pixels: &[u8], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let n = labels.len();
    assert_eq!(pixels.len(), n * rows * cols);
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + n);
    for v in [LABELS_MAGIC, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (img, lab)
}
