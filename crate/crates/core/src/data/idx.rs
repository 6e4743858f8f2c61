//! IDX files as used by MNIST.
//!
//! ```text
//! images: 00 00 08 03 | N u32 BE | rows u32 BE | cols u32 BE | N·rows·cols u8
//! labels: 00 00 08 01 | N u32 BE | N u8
//! ```

use std::path::Path;

use ndarray::Array2;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw decoded image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Idx {
            offset,
            reason: format!("header truncated, file has {} bytes", bytes.len()),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Idx {
            offset: 0,
            reason: format!("magic 0x{magic:08x}, expected 0x{expected:08x}"),
        });
    }
    Ok(())
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or(Error::Idx {
            offset: 4,
            reason: "dimension product overflows".into(),
        })?;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(Error::Idx {
            offset: 16 + payload.len(),
            reason: format!(
                "payload truncated: {count}x{rows}x{cols} needs {need} bytes, found {}",
                payload.len()
            ),
        });
    }
    if payload.len() > need {
        return Err(Error::Idx {
            offset: 16 + need,
            reason: format!("{} trailing bytes after payload", payload.len() - need),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: payload.to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::Idx {
            offset: 8 + payload.len().min(count),
            reason: format!(
                "header declares {count} labels, payload has {}",
                payload.len()
            ),
        });
    }
    Ok(payload.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [images.count, images.rows, images.cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Builds a dataset with pixels scaled to `[0, 1]`; the class count is 10.
pub fn decode_pair<T: Scalar>(images: &[u8], labels: &[u8]) -> Result<LabeledDataset<T>> {
    let img = parse_images(images)?;
    let lab = parse_labels(labels)?;
    if img.count != lab.len() {
        return Err(Error::Idx {
            offset: 4,
            reason: format!("{} images but {} labels", img.count, lab.len()),
        });
    }
    let width = img.rows * img.cols;
    let scale = T::lit(1.0 / 255.0);
    let inputs = Array2::from_shape_vec(
        (img.count, width),
        img.pixels
            .iter()
            .map(|&p| T::from_u8(p).expect("u8 fits") * scale)
            .collect(),
    )
    .expect("payload length checked");
    let labels = lab.into_iter().map(usize::from).collect();
    LabeledDataset::new(inputs, labels, 10)
}

pub fn load_idx<T: Scalar>(images: &Path, labels: &Path) -> Result<LabeledDataset<T>> {
    let ib = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lb = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    Ok(decode_pair(&ib, &lb)?.with_provenance(format!("idx:{}", images.display())))
}

/// Re-encodes a decoded dataset; pixels are mapped back with `round(x·255)`.
pub fn encode_dataset<T: Scalar>(
    ds: &LabeledDataset<T>,
    rows: usize,
    cols: usize,
) -> Result<(Vec<u8>, Vec<u8>)> {
    if rows * cols != ds.width() {
        return Err(Error::shape(
            "encode_dataset",
            format!("{rows}x{cols} images but width {}", ds.width()),
        ));
    }
    let pixels = ds
        .inputs()
        .iter()
        .map(|&v| (v.to_f64_lossy() * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let labels: Vec<u8> = ds.labels().iter().map(|&l| l as u8).collect();
    let images = IdxImages {
        count: ds.len(),
        rows,
        cols,
        pixels,
    };
    Ok((encode_images(&images), encode_labels(&labels)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(count: usize) -> IdxImages {
        IdxImages {
            count,
            rows: 2,
            cols: 3,
            pixels: (0..count * 6).map(|i| (i * 37 % 256) as u8).collect(),
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_images(&tiny(4));
        assert_eq!(&bytes[..4], &[0x00, 0x00, 0x08, 0x03]);
        assert_eq!(&encode_labels(&[1, 2])[..4], &[0x00, 0x00, 0x08, 0x01]);
    }

    #[test]
    fn decodes_scaled_pixels() {
        let img = tiny(3);
        let ds: LabeledDataset<f64> =
            decode_pair(&encode_images(&img), &encode_labels(&[0, 9, 4])).unwrap();
        assert_eq!((ds.len(), ds.width()), (3, 6));
        assert_eq!(ds.labels(), &[0, 9, 4]);
        assert!(ds.inputs().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((ds.inputs()[[0, 1]] - 37.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn wrong_magic_reports_offset_zero() {
        let mut bytes = encode_images(&tiny(1));
        bytes[3] = 0x01;
        match parse_images(&bytes) {
            Err(Error::Idx { offset: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_labels(&encode_images(&tiny(1))).is_err());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = encode_images(&tiny(2));
        let err = parse_images(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Idx { offset: 27, .. }), "{err}");
        assert!(parse_images(&bytes[..10]).is_err());
        let labels = encode_labels(&[1, 2, 3]);
        assert!(parse_labels(&labels[..labels.len() - 1]).is_err());
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let labels: Vec<u8> = vec![1; 99];
        let err =
            decode_pair::<f64>(&encode_images(&tiny(100)), &encode_labels(&labels)).unwrap_err();
        assert!(
            err.to_string().contains("100 images but 99 labels"),
            "{err}"
        );
    }

    #[test]
    fn dataset_round_trip_reproduces_bytes() {
        let img = tiny(5);
        let ib = encode_images(&img);
        let lb = encode_labels(&[3, 1, 4, 1, 5]);
        let ds: LabeledDataset<f64> = decode_pair(&ib, &lb).unwrap();
        let (ib2, lb2) = encode_dataset(&ds, 2, 3).unwrap();
        assert_eq!(ib2, ib);
        assert_eq!(lb2, lb);
    }
}
