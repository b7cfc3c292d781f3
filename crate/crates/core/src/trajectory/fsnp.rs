//! Versioned binary snapshot container.
//!
//! Layout (all integers and floats little-endian):
//!
//! | bytes | field                        |
//! |-------|------------------------------|
//! | 4     | magic `FSNP`                 |
//! | 4     | version (u32)                |
//! | 8     | param_len (u64)              |
//! | 8     | probe_n (u64)                |
//! | 8     | probe_k (u64)                |
//! | 8·P   | parameters (f64)             |
//! | 8·N·K | probe outputs, row-major (f64) |

use std::io::{Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

pub const FSNP_MAGIC: [u8; 4] = *b"FSNP";
pub const FSNP_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

/// The numeric content of one container.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotPayload {
    pub params: Vec<f64>,
    pub probe_outputs: Array2<f64>,
}

pub fn write_snapshot<W: Write>(mut out: W, params: &[f64], probe_outputs: &Array2<f64>) -> Result<()> {
    let (n, k) = probe_outputs.dim();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * (params.len() + n * k));
    buf.extend_from_slice(&FSNP_MAGIC);
    buf.extend_from_slice(&FSNP_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(k as u64).to_le_bytes());
    for v in params {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in probe_outputs.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_snapshot<R: Read>(mut input: R) -> Result<SnapshotPayload> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            what: "FSNP header",
            needed: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[..4] != FSNP_MAGIC {
        return Err(Error::BadMagic {
            what: "FSNP container",
            expected: u32::from_be_bytes(FSNP_MAGIC),
            found: u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FSNP_VERSION {
        return Err(Error::Validation(format!("unsupported FSNP version {version}")));
    }
    let field = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes")) as usize;
    let (p, n, k) = (field(8), field(16), field(24));
    let needed = HEADER_LEN + 8 * (p + n * k);
    if bytes.len() < needed {
        return Err(Error::Truncated {
            what: "FSNP payload",
            needed,
            found: bytes.len(),
        });
    }
    let floats: Vec<f64> = bytes[HEADER_LEN..needed]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let (params, outputs) = floats.split_at(p);
    Ok(SnapshotPayload {
        params: params.to_vec(),
        probe_outputs: Array2::from_shape_vec((n, k), outputs.to_vec()).expect("length checked"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let outputs = Array2::from_shape_vec((1, 2), vec![0.25, 0.75]).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &[1.5], &outputs).unwrap();
        assert_eq!(&buf[..4], b"FSNP");
        assert_eq!(&buf[4..8], &[1, 0, 0, 0]);
        assert_eq!(&buf[8..16], &1u64.to_le_bytes());
        assert_eq!(&buf[16..24], &1u64.to_le_bytes());
        assert_eq!(&buf[24..32], &2u64.to_le_bytes());
        assert_eq!(&buf[32..40], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), 32 + 8 * 3);
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &[1.0, 2.0], &Array2::zeros((2, 2))).unwrap();
        assert!(matches!(read_snapshot(&buf[..20]), Err(Error::Truncated { .. })));
        assert!(matches!(read_snapshot(&buf[..buf.len() - 1]), Err(Error::Truncated { .. })));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_snapshot(bad.as_slice()), Err(Error::BadMagic { .. })));
        let mut v2 = buf;
        v2[4] = 2;
        assert!(matches!(read_snapshot(v2.as_slice()), Err(Error::Validation(_))));
    }

    proptest! {
        #[test]
        fn round_trip(params in proptest::collection::vec(-1e6f64..1e6, 0..50), n in 0usize..6, k in 1usize..5, fill in -2.0f64..2.0) {
            let outputs = Array2::from_shape_fn((n, k), |(i, j)| fill * (i as f64) - j as f64);
            let mut buf = Vec::new();
            write_snapshot(&mut buf, &params, &outputs).unwrap();
            let back = read_snapshot(buf.as_slice()).unwrap();
            prop_assert_eq!(back.params, params);
            prop_assert_eq!(back.probe_outputs, outputs);
        }
    }
}
