//! Length-prefixed query/reply frames.
//!
//! Every frame starts with its total length (including the 4-byte prefix)
//! as u32 LE.
//!
//! Query: `len | op: u8 | index: u64`.
//! Reply: `len | status: u8 | index: u64 | count: u32 | count x f64 | crc32`,
//! where the CRC covers every preceding byte of the frame.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const QUERY_FRAME_LEN: usize = 4 + 1 + 8;
const REPLY_FIXED_LEN: usize = 4 + 1 + 8 + 4 + 4;
/// Frames longer than this are rejected without being read.
pub const MAX_FRAME_LEN: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Op {
    FetchDecompressed = 1,
    FetchRaw = 2,
    StatCount = 3,
}

impl Op {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Op::FetchDecompressed),
            2 => Some(Op::FetchRaw),
            3 => Some(Op::StatCount),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    UnknownOp = 1,
    Malformed = 2,
    NotFound = 3,
    NotConverged = 4,
    Internal = 5,
}

impl Status {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Status::Ok),
            1 => Some(Status::UnknownOp),
            2 => Some(Status::Malformed),
            3 => Some(Status::NotFound),
            4 => Some(Status::NotConverged),
            5 => Some(Status::Internal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    /// Raw op code; unknown codes are answered with an error status.
    pub op: u8,
    pub index: u64,
}

impl Query {
    pub fn new(op: Op, index: u64) -> Self {
        Self {
            op: op as u8,
            index,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: Status,
    pub index: u64,
    pub payload: Vec<f64>,
}

impl Reply {
    pub fn error(status: Status, index: u64) -> Self {
        Self {
            status,
            index,
            payload: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("connection closed mid-frame")]
    Truncated,
    #[error("frame length {0} out of range")]
    BadLength(usize),
    #[error("reply checksum mismatch")]
    Checksum,
    #[error("unknown status code {0}")]
    BadStatus(u8),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads one frame body (without the length prefix). `Ok(None)` on a clean
/// end of stream before any byte of a new frame.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, FrameError> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(FrameError::Truncated),
            Ok(k) => got += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(prefix) as usize;
    if !(4..=MAX_FRAME_LEN).contains(&len) {
        return Err(FrameError::BadLength(len));
    }
    let mut body = vec![0u8; len - 4];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated,
        _ => FrameError::Io(e),
    })?;
    Ok(Some(body))
}

pub fn encode_query(q: &Query) -> Vec<u8> {
    let mut out = Vec::with_capacity(QUERY_FRAME_LEN);
    out.extend_from_slice(&(QUERY_FRAME_LEN as u32).to_le_bytes());
    out.push(q.op);
    out.extend_from_slice(&q.index.to_le_bytes());
    out
}

/// Parses a query body as returned by [`read_frame`].
pub fn decode_query(body: &[u8]) -> Result<Query, FrameError> {
    if body.len() != QUERY_FRAME_LEN - 4 {
        return Err(FrameError::BadLength(body.len() + 4));
    }
    Ok(Query {
        op: body[0],
        index: u64::from_le_bytes(body[1..9].try_into().unwrap()),
    })
}

pub fn encode_reply(r: &Reply) -> Vec<u8> {
    let len = REPLY_FIXED_LEN + 8 * r.payload.len();
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&(len as u32).to_le_bytes());
    out.push(r.status as u8);
    out.extend_from_slice(&r.index.to_le_bytes());
    out.extend_from_slice(&(r.payload.len() as u32).to_le_bytes());
    for v in &r.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parses a reply body as returned by [`read_frame`].
pub fn decode_reply(body: &[u8]) -> Result<Reply, FrameError> {
    let frame_len = body.len() + 4;
    if frame_len < REPLY_FIXED_LEN {
        return Err(FrameError::BadLength(frame_len));
    }
    let count = u32::from_le_bytes(body[9..13].try_into().unwrap()) as usize;
    if frame_len != REPLY_FIXED_LEN + 8 * count {
        return Err(FrameError::BadLength(frame_len));
    }
    let (data, crc) = body.split_at(body.len() - 4);
    let mut h = crc32fast::Hasher::new();
    h.update(&(frame_len as u32).to_le_bytes());
    h.update(data);
    if h.finalize() != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(FrameError::Checksum);
    }
    let status = Status::from_code(data[0]).ok_or(FrameError::BadStatus(data[0]))?;
    Ok(Reply {
        status,
        index: u64::from_le_bytes(data[1..9].try_into().unwrap()),
        payload: data[13..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    })
}

pub fn write_frame<W: Write>(w: &mut W, frame: &[u8]) -> io::Result<()> {
    w.write_all(frame)?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_layout() {
        let bytes = encode_query(&Query::new(Op::FetchRaw, 0x0102));
        assert_eq!(bytes, vec![13, 0, 0, 0, 2, 2, 1, 0, 0, 0, 0, 0, 0]);
        let body = read_frame(&mut bytes.as_slice()).unwrap().unwrap();
        assert_eq!(
            decode_query(&body).unwrap(),
            Query::new(Op::FetchRaw, 0x0102)
        );
    }

    #[test]
    fn reply_round_trip() {
        let r = Reply {
            status: Status::Ok,
            index: 42,
            payload: vec![1.5, -2.0, 0.0],
        };
        let bytes = encode_reply(&r);
        assert_eq!(bytes.len(), 21 + 24);
        assert_eq!(&bytes[..4], &(45u32).to_le_bytes());
        let body = read_frame(&mut bytes.as_slice()).unwrap().unwrap();
        assert_eq!(decode_reply(&body).unwrap(), r);

        let mut bad = bytes.clone();
        bad[20] ^= 1;
        let body = read_frame(&mut bad.as_slice()).unwrap().unwrap();
        assert!(matches!(decode_reply(&body), Err(FrameError::Checksum)));
    }

    #[test]
    fn framing_errors() {
        assert!(read_frame(&mut [].as_slice()).unwrap().is_none());
        assert!(matches!(
            read_frame(&mut [13u8, 0].as_slice()),
            Err(FrameError::Truncated)
        ));
        assert!(matches!(
            read_frame(&mut [13u8, 0, 0, 0, 1, 2].as_slice()),
            Err(FrameError::Truncated)
        ));
        assert!(matches!(
            read_frame(&mut [2u8, 0, 0, 0].as_slice()),
            Err(FrameError::BadLength(2))
        ));
        assert!(decode_query(&[1, 2, 3]).is_err());
    }
}
