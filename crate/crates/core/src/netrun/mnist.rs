//! IDX-format image datasets.

use std::path::Path;

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Grayscale images with labels 0 to 9.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub rows: usize,
    pub cols: usize,
    images: Vec<u8>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(rows: usize, cols: usize, images: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != rows * cols * labels.len() {
            return Err(Error::Shape(format!(
                "{} pixels for {} images of {rows}x{cols}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l > 9) {
            return Err(Error::Domain(format!("label {} at index {i} is not a digit", labels[i])));
        }
        Ok(Dataset {
            rows,
            cols,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.images[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// The first `n` items.
    pub fn truncated(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            rows: self.rows,
            cols: self.cols,
            images: self.images[..n * self.rows * self.cols].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(at as u64, "file ends inside the IDX header"))
}

/// Parses an IDX3 image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(0, format!("image magic {magic:#010x}, expected 0x00000803")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(Error::format(
            16,
            format!("{} pixel bytes for {n} images of {rows}x{cols}", body.len()),
        ));
    }
    Ok((n, rows, cols, body.to_vec()))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(0, format!("label magic {magic:#010x}, expected 0x00000801")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::format(8, format!("{} label bytes for {n} labels", body.len())));
    }
    if let Some(i) = body.iter().position(|&l| l > 9) {
        return Err(Error::format(8 + i as u64, format!("label {} is not a digit", body[i])));
    }
    Ok(body.to_vec())
}

pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&std::fs::read(images)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels)?)?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} images but {} labels", labels.len())));
    }
    Dataset::new(rows, cols, pixels, labels)
}

/// Loads the standard test split from `dir`.
pub fn load_mnist_test(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    load_mnist(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))
        .or_else(|_| load_mnist(dir.join("t10k-images.idx3-ubyte"), dir.join("t10k-labels.idx1-ubyte")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: u32, r: u32, c: u32) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, n, r, c] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend((0..n * r * c).map(|i| i as u8));
        b
    }

    fn labels(ls: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(ls.len() as u32).to_be_bytes());
        b.extend_from_slice(ls);
        b
    }

    #[test]
    fn parses_headers() {
        let (n, r, c, px) = parse_idx_images(&images(2, 3, 4)).unwrap();
        assert_eq!((n, r, c, px.len()), (2, 3, 4, 24));
        assert_eq!(parse_idx_labels(&labels(&[3, 9])).unwrap(), vec![3, 9]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(parse_idx_labels(&labels(&[10])), Err(Error::Format { offset: 8, .. })));
        assert!(matches!(parse_idx_images(&labels(&[1])), Err(Error::Format { offset: 0, .. })));
        let mut short = images(2, 2, 2);
        short.pop();
        assert!(parse_idx_images(&short).is_err());
        assert!(Dataset::new(2, 2, vec![0; 8], vec![1]).is_err());
    }
}
