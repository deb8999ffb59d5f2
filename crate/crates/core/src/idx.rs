//! IDX (MNIST-style) byte format: a big-endian magic number, big-endian
//! `u32` dimensions, then raw `u8` values. Images use magic `0x0803`
//! (three dimensions), labels `0x0801` (one dimension).

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::LabeledDataset;
use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` pixels, image by image.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        match self.rows * self.cols {
            0 => 0,
            area => self.pixels.len() / area,
        }
    }
}

fn err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Idx { offset, reason: reason.into() }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let chunk = bytes.get(offset..offset + 4).ok_or_else(|| err(offset, "truncated header"))?;
    Ok(u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
}

fn read_header(bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>> {
    let found = read_u32(bytes, 0)?;
    if found != magic {
        return Err(err(0, alloc::format!("bad magic 0x{found:08x}, expected 0x{magic:08x}")));
    }
    (0..dims).map(|d| read_u32(bytes, 4 + 4 * d).map(|v| v as usize)).collect()
}

fn body(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    let have = bytes.len().saturating_sub(start);
    if have < len {
        return Err(err(bytes.len(), alloc::format!("truncated payload: need {len} bytes, have {have}")));
    }
    if have > len {
        return Err(err(start + len, alloc::format!("{} trailing bytes", have - len)));
    }
    Ok(&bytes[start..])
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let dims = read_header(bytes, IMAGE_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    if rows == 0 || cols == 0 {
        return Err(err(8, "image dimensions must be positive"));
    }
    let len =
        count.checked_mul(rows).and_then(|v| v.checked_mul(cols)).ok_or_else(|| err(4, "image size overflows"))?;
    let pixels = body(bytes, 16, len)?.to_vec();
    Ok(IdxImages { rows, cols, pixels })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let count = read_header(bytes, LABEL_MAGIC, 1)?[0];
    Ok(body(bytes, 8, count)?.to_vec())
}

pub fn serialize_images(images: &IdxImages) -> Result<Vec<u8>> {
    let area = images.rows * images.cols;
    if area == 0 || !images.pixels.len().is_multiple_of(area) {
        return Err(Error::domain("pixel buffer is not a whole number of images"));
    }
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count() as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    Ok(out)
}

pub fn serialize_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Pairs an image file with a label file; pixels are scaled to `[0, 1]`.
pub fn decode_dataset(images: &[u8], labels: &[u8], num_classes: usize) -> Result<LabeledDataset> {
    let images = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if images.count() != labels.len() {
        return Err(err(4, alloc::format!("{} images but {} labels", images.count(), labels.len())));
    }
    if let Some(pos) = labels.iter().position(|&y| y as usize >= num_classes) {
        return Err(err(8 + pos, alloc::format!("label {} outside {num_classes} classes", labels[pos])));
    }
    let features = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    LabeledDataset::new(features, images.rows * images.cols, labels.iter().map(|&y| y as usize).collect(), num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample() -> IdxImages {
        IdxImages { rows: 2, cols: 2, pixels: vec![0, 255, 51, 102, 1, 2, 3, 4] }
    }

    #[test]
    fn round_trip() {
        let imgs = sample();
        let bytes = serialize_images(&imgs).unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(&bytes[4..8], &[0, 0, 0, 2]);
        assert_eq!(parse_images(&bytes).unwrap(), imgs);
        let labels = serialize_labels(&[3, 1]);
        assert_eq!(labels, vec![0, 0, 8, 1, 0, 0, 0, 2, 3, 1]);
        assert_eq!(parse_labels(&labels).unwrap(), vec![3, 1]);
    }

    #[test]
    fn decode_scales_pixels() {
        let data = decode_dataset(&serialize_images(&sample()).unwrap(), &serialize_labels(&[3, 1]), 4).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.dims(), 4);
        assert_eq!(data.features(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(data.labels(), &[3, 1]);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = serialize_labels(&[1]);
        bytes[3] = 0x03;
        match parse_labels(&bytes) {
            Err(Error::Idx { offset: 0, reason }) => assert!(reason.contains("magic")),
            other => panic!("{other:?}"),
        }
        assert!(parse_images(&serialize_labels(&[1])).is_err());
    }

    #[test]
    fn truncation_and_trailing_bytes() {
        let bytes = serialize_images(&sample()).unwrap();
        assert!(matches!(parse_images(&bytes[..10]), Err(Error::Idx { offset: 8, .. })));
        assert!(matches!(parse_images(&bytes[..bytes.len() - 1]), Err(Error::Idx { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(parse_images(&long), Err(Error::Idx { offset: 24, .. })));
        assert!(parse_labels(&[]).is_err());
    }

    #[test]
    fn count_mismatch_and_label_range() {
        let imgs = serialize_images(&sample()).unwrap();
        assert!(decode_dataset(&imgs, &serialize_labels(&[1]), 4).is_err());
        match decode_dataset(&imgs, &serialize_labels(&[1, 7]), 4) {
            Err(Error::Idx { offset: 9, .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
