//! Ciphertext records, the unit of storage and transfer.
//!
//! | offset | size  | field                               |
//! |--------|-------|-------------------------------------|
//! | 0      | 4     | magic `MPCC`                        |
//! | 4      | 1     | version (1)                         |
//! | 5      | 1     | flags (bit0 sensitive, bit1 transform) |
//! | 6      | 8     | block index, u64 LE                 |
//! | 14     | 4     | `m`, u32 LE                         |
//! | 18     | 4     | `n`, u32 LE                         |
//! | 22     | 8     | sensing matrix seed, u64 LE         |
//! | 30     | `8 m` | measurements, f64 LE                |
//! | end    | 4     | CRC-32 over all preceding bytes     |

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"MPCC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 30;
pub const CRC_LEN: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecordError {
    #[error("record truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported record version {0}")]
    BadVersion(u8),
    #[error("record checksum mismatch")]
    Checksum,
    #[error("record has {found} trailing bytes")]
    TrailingBytes { found: usize },
}

/// Shape of the stored measurements; `Phi` is regenerated from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Geometry {
    pub m: u32,
    pub n: u32,
    pub phi_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiphertextRecord {
    pub flags: u8,
    pub index: u64,
    pub geometry: Geometry,
    pub payload: Vec<f64>,
}

impl CiphertextRecord {
    pub fn new(index: u64, flags: u8, geometry: Geometry, payload: Vec<f64>) -> Self {
        Self {
            flags,
            index,
            geometry,
            payload,
        }
    }

    /// Total encoded size for `m` measurements.
    pub fn encoded_len(m: usize) -> usize {
        HEADER_LEN + 8 * m + CRC_LEN
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::encoded_len(self.payload.len()));
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.flags);
        out.extend_from_slice(&self.index.to_le_bytes());
        out.extend_from_slice(&self.geometry.m.to_le_bytes());
        out.extend_from_slice(&self.geometry.n.to_le_bytes());
        out.extend_from_slice(&self.geometry.phi_seed.to_le_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Length of the record starting at `bytes[0]`, read from its header.
    pub fn peek_len(bytes: &[u8]) -> Result<usize, RecordError> {
        if bytes.len() < HEADER_LEN {
            return Err(RecordError::Truncated {
                needed: HEADER_LEN,
                have: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(RecordError::BadMagic(magic));
        }
        if bytes[4] != VERSION {
            return Err(RecordError::BadVersion(bytes[4]));
        }
        let m = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
        Ok(Self::encoded_len(m))
    }

    /// Decodes exactly one record occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self, RecordError> {
        let len = Self::peek_len(bytes)?;
        if bytes.len() < len {
            return Err(RecordError::Truncated {
                needed: len,
                have: bytes.len(),
            });
        }
        if bytes.len() > len {
            return Err(RecordError::TrailingBytes {
                found: bytes.len() - len,
            });
        }
        let (body, crc) = bytes.split_at(len - CRC_LEN);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(RecordError::Checksum);
        }
        let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(body[o..o + 8].try_into().unwrap());
        let payload = body[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            flags: body[5],
            index: u64_at(6),
            geometry: Geometry {
                m: u32_at(14),
                n: u32_at(18),
                phi_seed: u64_at(22),
            },
            payload,
        })
    }
}
