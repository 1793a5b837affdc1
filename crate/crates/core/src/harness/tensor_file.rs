//! Binary tensor files (`.vtf`).
//!
//! ```text
//! offset  size      field
//! 0       4         magic "VTF1"
//! 4       1         dtype (1 = f64)
//! 5       1         rank r (1..=5)
//! 6       2         reserved, zero
//! 8       4*r       extents, u32 little-endian
//! 8+4r    8*prod    payload, f64 little-endian, row-major
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: [u8; 4] = *b"VTF1";
pub const DTYPE_F64: u8 = 1;
const HEADER: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("magic: expected \"VTF1\", found {0:02x?}")]
    Magic(Vec<u8>),
    #[error("dtype: unsupported code {0}")]
    Dtype(u8),
    #[error("rank: {0} not in 1..=5")]
    Rank(u8),
    #[error("reserved: bytes 6..8 must be zero, found {0:02x?}")]
    Reserved([u8; 2]),
    #[error("extent {index}: zero")]
    ZeroExtent { index: usize },
    #[error("{field}: truncated, need {needed} bytes, have {available}")]
    Truncated {
        field: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("payload: {extra} trailing bytes after payload")]
    Trailing { extra: usize },
    #[error("extents: element count overflows")]
    Overflow,
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 4 * t.rank() + 8 * t.len());
    out.extend_from_slice(&MAGIC);
    out.push(DTYPE_F64);
    out.push(t.rank() as u8);
    out.extend_from_slice(&[0, 0]);
    for &d in t.dims() {
        let d = u32::try_from(d).expect("extent exceeds u32");
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn need(field: &'static str, bytes: &[u8], end: usize) -> Result<(), ParseError> {
    if bytes.len() < end {
        return Err(ParseError::Truncated {
            field,
            needed: end,
            available: bytes.len(),
        });
    }
    Ok(())
}

/// Parses a complete file image. Total: every input yields `Ok` or a
/// [`ParseError`], never a panic.
pub fn decode(bytes: &[u8]) -> Result<Tensor, ParseError> {
    need("magic", bytes, 4)?;
    if bytes[..4] != MAGIC {
        return Err(ParseError::Magic(bytes[..4].to_vec()));
    }
    need("dtype", bytes, 5)?;
    if bytes[4] != DTYPE_F64 {
        return Err(ParseError::Dtype(bytes[4]));
    }
    need("rank", bytes, 6)?;
    let rank = bytes[5];
    if rank == 0 || rank as usize > MAX_RANK {
        return Err(ParseError::Rank(rank));
    }
    need("reserved", bytes, HEADER)?;
    if bytes[6..8] != [0, 0] {
        return Err(ParseError::Reserved([bytes[6], bytes[7]]));
    }
    let rank = rank as usize;
    let ext_end = HEADER + 4 * rank;
    need("extents", bytes, ext_end)?;
    let mut dims = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for (index, chunk) in bytes[HEADER..ext_end].chunks_exact(4).enumerate() {
        let d = u32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as usize;
        if d == 0 {
            return Err(ParseError::ZeroExtent { index });
        }
        count = count.checked_mul(d).ok_or(ParseError::Overflow)?;
        dims.push(d);
    }
    let payload = count.checked_mul(8).ok_or(ParseError::Overflow)?;
    let end = ext_end.checked_add(payload).ok_or(ParseError::Overflow)?;
    need("payload", bytes, end)?;
    if bytes.len() > end {
        return Err(ParseError::Trailing { extra: bytes.len() - end });
    }
    let data = bytes[ext_end..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Tensor::new(&dims, data).expect("dims validated above"))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_two_by_two() {
        let t = Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let bytes = encode(&t);
        let mut expected = vec![0x56, 0x54, 0x46, 0x31, 0x01, 0x02, 0x00, 0x00];
        expected.extend_from_slice(&[0x02, 0, 0, 0, 0x02, 0, 0, 0]);
        // 1.0 = 0x3FF0000000000000, 2.0 = 0x4000..., 3.0 = 0x4008..., 4.0 = 0x4010...
        for hi in [0xF0u8, 0x00, 0x08, 0x10] {
            let top = if hi == 0xF0 { 0x3F } else { 0x40 };
            expected.extend_from_slice(&[0, 0, 0, 0, 0, 0, hi, top]);
        }
        assert_eq!(bytes, expected);
        assert_eq!(decode(&bytes).unwrap(), t);
    }

    #[test]
    fn distinct_errors_per_field() {
        let good = encode(&Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let mut b = good.clone();
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&b), Err(ParseError::Magic(_))));
        let mut b = good.clone();
        b[4] = 2;
        assert_eq!(decode(&b), Err(ParseError::Dtype(2)));
        let mut b = good.clone();
        b[5] = 6;
        assert_eq!(decode(&b), Err(ParseError::Rank(6)));
        let mut b = good.clone();
        b[7] = 1;
        assert_eq!(decode(&b), Err(ParseError::Reserved([0, 1])));
        let b = &good[..good.len() - 1];
        assert!(matches!(decode(b), Err(ParseError::Truncated { field: "payload", .. })));
        let b = &good[..10];
        assert!(matches!(decode(b), Err(ParseError::Truncated { field: "extents", .. })));
        let mut b = good.clone();
        b.push(0);
        assert_eq!(decode(&b), Err(ParseError::Trailing { extra: 1 }));
        let mut b = good;
        b[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(decode(&b), Err(ParseError::ZeroExtent { index: 0 }));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.vtf");
        let mut rng = crate::rng::SplitMix64::new(9);
        let t = Tensor::randn(&[2, 3, 1, 2, 2], &mut rng);
        write_tensor(&path, &t).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), t);
        assert!(matches!(read_tensor(dir.path().join("missing.vtf")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..96)) {
            let _ = decode(&bytes);
        }

        #[test]
        fn valid_header_with_fuzzed_tail(rank in 1u8..=5, tail in proptest::collection::vec(any::<u8>(), 0..128)) {
            let mut bytes = b"VTF1".to_vec();
            bytes.extend_from_slice(&[1, rank, 0, 0]);
            bytes.extend_from_slice(&tail);
            let _ = decode(&bytes);
        }
    }
}
