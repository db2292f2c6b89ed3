//! `CVPT` binary tensor container.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "CVPT"
//! 4       1         version (1)
//! 5       1         dtype (1 = f32 little-endian)
//! 6       1         ndim
//! 7       4*ndim    extents, u32 little-endian
//! ...     4*prod    payload, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{CvpError, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"CVPT";
pub const VERSION: u8 = 1;
pub const DTYPE_F32_LE: u8 = 1;

pub fn encode_tensor(tensor: &Tensor) -> Result<Vec<u8>> {
    if !tensor.is_finite() {
        return Err(CvpError::NonFinite("refusing to serialise a non-finite tensor".into()));
    }
    let shape = tensor.shape();
    let ndim = u8::try_from(shape.len())
        .map_err(|_| CvpError::InvalidArgument(format!("too many axes: {}", shape.len())))?;
    let mut out = Vec::with_capacity(7 + 4 * shape.len() + 4 * tensor.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F32_LE);
    out.push(ndim);
    for &d in shape {
        let d = u32::try_from(d)
            .map_err(|_| CvpError::InvalidArgument(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let need = |expected: usize| -> Result<()> {
        if bytes.len() < expected {
            return Err(CvpError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        Ok(())
    };
    need(4)?;
    let mut found = [0u8; 4];
    found.copy_from_slice(&bytes[..4]);
    if found != MAGIC {
        return Err(CvpError::BadMagic { found });
    }
    need(7)?;
    if bytes[4] != VERSION {
        return Err(CvpError::UnsupportedVersion(bytes[4]));
    }
    if bytes[5] != DTYPE_F32_LE {
        return Err(CvpError::UnsupportedDtype(bytes[5]));
    }
    let ndim = bytes[6] as usize;
    let header = 7 + 4 * ndim;
    need(header)?;
    let shape: Vec<usize> = bytes[7..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = shape.iter().product();
    let payload = &bytes[header..];
    if payload.len() < 4 * count {
        return Err(CvpError::Truncated {
            expected: 4 * count,
            found: payload.len(),
        });
    }
    if payload.len() > 4 * count {
        return Err(CvpError::InvalidArgument(format!(
            "{} trailing bytes after tensor payload",
            payload.len() - 4 * count
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(tensor)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CvpError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CvpError::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CvpError::io(path, e))?;
    decode_tensor(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn roundtrip_frame_block_bits() {
        let data: Vec<f32> = (0..128).map(|i| (i as f32 * 0.37).sin()).collect();
        let t = Tensor::new(vec![2, 1, 8, 8], data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("block.cvpt");
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap();
        let b = encode_tensor(&t).unwrap();
        assert_eq!(&b[..7], b"CVPT\x01\x01\x02");
        assert_eq!(&b[7..15], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[15..19], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 23);
    }

    #[test]
    fn bad_magic() {
        let mut b = encode_tensor(&Tensor::scalar(1.0)).unwrap();
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_tensor(&b), Err(CvpError::BadMagic { found }) if &found == b"XXXX"));
    }

    #[test]
    fn truncated_payload_reports_needed_bytes() {
        let mut b = b"CVPT\x01\x01\x02".to_vec();
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&3u32.to_le_bytes());
        b.extend_from_slice(&[0u8; 20]);
        match decode_tensor(&b) {
            Err(CvpError::Truncated { expected, found }) => {
                assert_eq!(expected, 24);
                assert_eq!(found, 20);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_and_dtype_checked() {
        let mut b = encode_tensor(&Tensor::scalar(1.0)).unwrap();
        b[4] = 9;
        assert!(matches!(decode_tensor(&b), Err(CvpError::UnsupportedVersion(9))));
        b[4] = VERSION;
        b[5] = 2;
        assert!(matches!(decode_tensor(&b), Err(CvpError::UnsupportedDtype(2))));
    }

    #[test]
    fn non_finite_rejected_on_write() {
        let t = Tensor::new(vec![2], vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(encode_tensor(&t), Err(CvpError::NonFinite(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn roundtrip_identity(
            shape in prop::collection::vec(1usize..5, 1..5),
            seed in any::<u64>(),
        ) {
            let len: usize = shape.iter().product();
            let mut rng = crate::rng::RngState::new(seed);
            let data: Vec<f32> = (0..len).map(|_| rng.normal_f32() * 100.0).collect();
            let t = Tensor::new(shape, data).unwrap();
            let back = decode_tensor(&encode_tensor(&t).unwrap()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
