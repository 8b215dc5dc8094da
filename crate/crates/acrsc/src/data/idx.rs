//! IDX container parsing and writing.
//!
//! Only the unsigned-byte image-set layout (magic `0x00000803`) is
//! accepted: big-endian magic, three big-endian u32 extents, then raw
//! bytes. Pixel bytes are scaled to [0, 1] on load.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let end = at + 4;
    if end > bytes.len() {
        return Err(Error::IdxTruncated {
            expected: end,
            got: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[at..end].try_into().unwrap()))
}

/// Load an IDX image set as tensors in [0, 1].
pub fn load_idx(path: &Path) -> Result<Vec<ImageTensor>> {
    let bytes = fs::read(path)?;
    let magic = read_u32(&bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        let dtype = ((magic >> 8) & 0xff) as u8;
        if magic >> 16 == 0 && dtype != 0x08 {
            return Err(Error::IdxElementType(dtype));
        }
        return Err(Error::IdxMagic {
            expected: IDX_IMAGE_MAGIC,
            got: magic,
        });
    }
    let count = read_u32(&bytes, 4)? as usize;
    let rows = read_u32(&bytes, 8)? as usize;
    let cols = read_u32(&bytes, 12)? as usize;
    let pixels = rows * cols;
    let expected = 16 + count * pixels;
    if bytes.len() < expected {
        return Err(Error::IdxTruncated {
            expected,
            got: bytes.len(),
        });
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * pixels;
        let data: Vec<f64> = bytes[start..start + pixels]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        images.push(ImageTensor::from_parts(vec![rows, cols], data));
    }
    Ok(images)
}

/// Write tensors as an IDX u8 image set, quantizing linearly to [0, 255].
pub fn write_idx(path: &Path, images: &[ImageTensor]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::invalid("cannot write an empty IDX image set"));
    }
    let shape = images[0].shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::invalid("IDX writer expects 2-D images"));
    }
    let mut bytes = Vec::with_capacity(16 + images.len() * images[0].len());
    bytes.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(shape[0] as u32).to_be_bytes());
    bytes.extend_from_slice(&(shape[1] as u32).to_be_bytes());
    for img in images {
        if img.shape() != shape.as_slice() {
            return Err(Error::shape("write_idx", &shape, img.shape()));
        }
        for &v in img.data() {
            bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mini.idx");
        // Values on the 1/255 grid survive quantization exactly.
        let imgs: Vec<ImageTensor> = (0..3)
            .map(|i| {
                let data: Vec<f64> = (0..16).map(|j| ((i * 16 + j) % 256) as f64 / 255.0).collect();
                ImageTensor::from_vec(&[4, 4], data).unwrap()
            })
            .collect();
        write_idx(&path, &imgs).unwrap();
        let back = load_idx(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in imgs.iter().zip(back.iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn label_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.idx");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[1, 2, 3]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_idx(&path), Err(Error::IdxMagic { .. })));
    }

    #[test]
    fn unsupported_element_type_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f32.idx");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0x0000_0D03u32.to_be_bytes()); // float element type
        bytes.extend_from_slice(&[0u8; 12]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_idx(&path), Err(Error::IdxElementType(0x0D))));
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.idx");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&4u32.to_be_bytes());
        bytes.extend_from_slice(&4u32.to_be_bytes());
        bytes.extend_from_slice(&[0u8; 20]); // needs 32
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_idx(&path), Err(Error::IdxTruncated { .. })));
    }
}
