//! Binary matrix persistence.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                       |
//! |--------|------|-----------------------------|
//! | 0      | 8    | magic `PLINFMAT`            |
//! | 8      | 4    | format version (`1`)        |
//! | 12     | 4    | element kind (`1` = f64)    |
//! | 16     | 8    | rows                        |
//! | 24     | 8    | cols                        |
//! | 32     | 8·rows·cols | column-major payload |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PLINFMAT";
pub const VERSION: u32 = 1;
pub const KIND_F64: u32 = 1;
pub const HEADER_LEN: usize = 32;

pub fn encode(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&KIND_F64.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MatrixFile(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[0..8] != MAGIC {
        return Err(Error::MatrixFile("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(8);
    if version != VERSION {
        return Err(Error::MatrixFile(format!("unsupported version {version}")));
    }
    let kind = u32_at(12);
    if kind != KIND_F64 {
        return Err(Error::MatrixFile(format!("unsupported element kind {kind}")));
    }
    let rows = usize::try_from(u64_at(16)).map_err(|_| Error::MatrixFile("row count overflows".into()))?;
    let cols = usize::try_from(u64_at(24)).map_err(|_| Error::MatrixFile("column count overflows".into()))?;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::MatrixFile("payload size overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::MatrixFile(format!(
            "payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect::<Vec<_>>();
    Ok(DMatrix::from_vec(rows, cols, data))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::MatrixFile(format!("{}: {e}", path.display())))?;
    f.write_all(&encode(m))
        .map_err(|e| Error::MatrixFile(format!("{}: {e}", path.display())))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::MatrixFile(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = DMatrix::from_fn(3, 4, |i, j| (i as f64 + 0.1) * (j as f64 - 1.7) / 3.0);
        let mut m = m;
        m[(2, 3)] = f64::MIN_POSITIVE / 4.0;
        m[(0, 0)] = -0.0;
        let bytes = encode(&m);
        assert_eq!(bytes.len(), HEADER_LEN + 8 * 12);
        let back = decode(&bytes).unwrap();
        assert_eq!(encode(&back), bytes);
        assert_eq!(back.shape(), (3, 4));
    }

    #[test]
    fn truncated_and_corrupt_files_are_rejected() {
        let bytes = encode(&DMatrix::from_element(2, 2, 1.0));
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes;
        bad[12] = 2;
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = DMatrix::from_fn(5, 1, |i, _| i as f64 * 0.5);
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
    }
}
