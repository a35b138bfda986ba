//! QTS binary tensor files.
//!
//! Layout: magic `QTS1`, one dtype byte (0=f32, 1=f64, 2=u8), one rank byte,
//! `rank` little-endian `u32` extents, then the row-major little-endian payload.

use std::fs;
use std::path::Path;

use crate::tensor::{DType, Storable, Tensor, TensorError};

pub const MAGIC: &[u8; 4] = b"QTS1";

#[derive(Debug, thiserror::Error)]
pub enum QtsError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic, not a QTS1 file")]
    BadMagic,
    #[error("unknown dtype code {0}")]
    UnknownDType(u8),
    #[error("expected dtype {expected}, file holds {actual}")]
    DTypeMismatch { expected: &'static str, actual: &'static str },
    #[error("truncated file: need {needed} bytes, have {actual}")]
    Truncated { needed: usize, actual: usize },
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("extent {0} does not fit in u32")]
    ExtentTooLarge(usize),
    #[error("rank {0} does not fit in one byte")]
    RankTooLarge(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub fn encode<T: Storable>(t: &Tensor<T>) -> Result<Vec<u8>, QtsError> {
    let rank = t.ndim();
    if rank > u8::MAX as usize {
        return Err(QtsError::RankTooLarge(rank));
    }
    let mut out = Vec::with_capacity(6 + 4 * rank + t.len() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE.code());
    out.push(rank as u8);
    for &d in t.shape() {
        let d32 = u32::try_from(d).map_err(|_| QtsError::ExtentTooLarge(d))?;
        out.extend_from_slice(&d32.to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

/// Reads the header only: dtype and shape.
pub fn header(bytes: &[u8]) -> Result<(DType, Vec<usize>, usize), QtsError> {
    let need = |n: usize| {
        if bytes.len() < n {
            Err(QtsError::Truncated {
                needed: n,
                actual: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(6)?;
    if &bytes[..4] != MAGIC {
        return Err(QtsError::BadMagic);
    }
    let dtype = DType::from_code(bytes[4]).ok_or(QtsError::UnknownDType(bytes[4]))?;
    let rank = bytes[5] as usize;
    need(6 + 4 * rank)?;
    let shape = (0..rank)
        .map(|i| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    Ok((dtype, shape, 6 + 4 * rank))
}

pub fn decode<T: Storable>(bytes: &[u8]) -> Result<Tensor<T>, QtsError> {
    let (dtype, shape, offset) = header(bytes)?;
    if dtype != T::DTYPE {
        return Err(QtsError::DTypeMismatch {
            expected: T::DTYPE.name(),
            actual: dtype.name(),
        });
    }
    let n: usize = shape.iter().product();
    let size = dtype.size();
    let end = offset + n * size;
    if bytes.len() < end {
        return Err(QtsError::Truncated {
            needed: end,
            actual: bytes.len(),
        });
    }
    if bytes.len() > end {
        return Err(QtsError::Trailing(bytes.len() - end));
    }
    let data = bytes[offset..end].chunks_exact(size).map(T::read_le).collect();
    Ok(Tensor::new(shape, data)?)
}

pub fn write<T: Storable>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<(), QtsError> {
    let path = path.as_ref();
    fs::write(path, encode(t)?).map_err(|source| QtsError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read<T: Storable>(path: impl AsRef<Path>) -> Result<Tensor<T>, QtsError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| QtsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<u8>::new(vec![2, 1], vec![7, 9]).unwrap();
        let bytes = encode(&t).unwrap();
        assert_eq!(bytes, [b'Q', b'T', b'S', b'1', 2, 2, 2, 0, 0, 0, 1, 0, 0, 0, 7, 9]);
    }

    #[test]
    fn f32_payload_is_little_endian() {
        let t = Tensor::<f32>::new(vec![1], vec![1.0]).unwrap();
        let bytes = encode(&t).unwrap();
        assert_eq!(bytes[0..6], [b'Q', b'T', b'S', b'1', 0, 1]);
        assert_eq!(bytes[10..], 1.0f32.to_le_bytes());
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let bytes = encode(&Tensor::<f64>::zeros(&[3])).unwrap();
        assert!(matches!(decode::<f32>(&bytes), Err(QtsError::DTypeMismatch { .. })));
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let mut bytes = encode(&Tensor::<f32>::zeros(&[2, 2])).unwrap();
        assert!(matches!(decode::<f32>(&bytes[..bytes.len() - 1]), Err(QtsError::Truncated { .. })));
        bytes.push(0);
        assert!(matches!(decode::<f32>(&bytes), Err(QtsError::Trailing(1))));
        bytes[0] = b'X';
        assert!(matches!(decode::<f32>(&bytes), Err(QtsError::BadMagic)));
        let mut bytes = encode(&Tensor::<f32>::zeros(&[1])).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode::<f32>(&bytes), Err(QtsError::UnknownDType(9))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            shape in prop::collection::vec(1usize..4, 0..4),
            seed in any::<u64>(),
        ) {
            let t = Tensor::<f64>::from_fn(&shape, |i| f64::from_bits(seed.rotate_left(i as u32) | 1) % 1e6);
            let back: Tensor<f64> = decode(&encode(&t).unwrap()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
