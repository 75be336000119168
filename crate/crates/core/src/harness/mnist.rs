//! IDX reader for the MNIST image and label files.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fl::Dataset;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| Error::Format {
            offset: self.pos,
            msg: format!("{what}: expected 4 bytes, file has {}", self.bytes.len()),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn payload(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if self.bytes.len() < end {
            return Err(Error::Format {
                offset: self.bytes.len(),
                msg: format!("{what}: expected {end} bytes, file has {}", self.bytes.len()),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

fn expect_magic(r: &mut Reader<'_>, want: u32) -> Result<()> {
    let got = r.u32("magic number")?;
    if got != want {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad magic {got:#010x}, expected {want:#010x}"),
        });
    }
    Ok(())
}

/// Parses an image file: returns `(count, rows * cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let mut r = Reader { bytes, pos: 0 };
    expect_magic(&mut r, IMAGE_MAGIC)?;
    let n = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let pixels = r.payload(n * rows * cols, "pixel data")?;
    Ok((n, rows * cols, pixels))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    let mut r = Reader { bytes, pos: 0 };
    expect_magic(&mut r, LABEL_MAGIC)?;
    let n = r.u32("label count")? as usize;
    let labels = r.payload(n, "label data")?;
    if let Some(i) = labels.iter().position(|&l| l > 9) {
        return Err(Error::Format {
            offset: 8 + i,
            msg: format!("label {} is outside 0..=9", labels[i]),
        });
    }
    Ok(labels)
}

/// Builds a dataset from IDX image and label bytes, keeping the first `limit`
/// samples when given. Pixels are scaled to `[0, 1]`.
pub fn dataset_from_idx(images: &[u8], labels: &[u8], limit: Option<usize>) -> Result<Dataset> {
    let (n, dim, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Format {
            offset: 4,
            msg: format!("{n} images but {} labels", labels.len()),
        });
    }
    let keep = limit.map_or(n, |l| l.min(n));
    let features = pixels[..keep * dim].iter().map(|&p| f64::from(p) / 255.0).collect();
    Dataset::new(features, labels[..keep].iter().map(|&l| usize::from(l)).collect(), dim, 10)
}

/// Reads an image/label file pair.
pub fn ingest_mnist(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Dataset> {
    let img = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lab = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    dataset_from_idx(&img, &lab, limit)
}

/// Encodes a dataset of byte pixels in IDX form; used to build fixtures.
pub fn encode_idx(images: &[Vec<u8>], rows: u32, cols: u32, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    img.extend(IMAGE_MAGIC.to_be_bytes());
    img.extend((images.len() as u32).to_be_bytes());
    img.extend(rows.to_be_bytes());
    img.extend(cols.to_be_bytes());
    for im in images {
        img.extend(im);
    }
    let mut lab = Vec::new();
    lab.extend(LABEL_MAGIC.to_be_bytes());
    lab.extend((labels.len() as u32).to_be_bytes());
    lab.extend(labels);
    (img, lab)
}
