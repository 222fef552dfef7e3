//! Frame layout and payload encodings.
//!
//! ```text
//! "KBTS" | version u8 | kind u8 | round u32 | seq u32 | len u32 | payload | crc32
//! ```
//!
//! All integers are big-endian. The CRC (IEEE) covers every preceding byte.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::bitpool::PaMode;

pub const MAGIC: &[u8; 4] = b"KBTS";
pub const VERSION: u8 = 1;
/// Bytes before the payload.
pub const HEADER_LEN: usize = 18;
/// Largest payload accepted from the wire.
pub const MAX_PAYLOAD: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("malformed frame: {0}")]
    Malformed(&'static str),
    #[error("frame CRC mismatch")]
    CrcMismatch,
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Hello = 1,
    Batch = 2,
    PaParams = 3,
    Ack = 4,
    Error = 5,
}

impl FrameKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => Self::Hello,
            2 => Self::Batch,
            3 => Self::PaParams,
            4 => Self::Ack,
            5 => Self::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub round: u32,
    pub seq: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameKind, round: u32, seq: u32, payload: Vec<u8>) -> Self {
        Self {
            kind,
            round,
            seq,
            payload,
        }
    }

    /// Total encoded size.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + 4
    }
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.encoded_len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(frame.kind as u8);
    out.extend_from_slice(&frame.round.to_be_bytes());
    out.extend_from_slice(&frame.seq.to_be_bytes());
    out.extend_from_slice(&(frame.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&frame.payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    out
}

fn header_payload_len(header: &[u8]) -> Result<usize, FrameError> {
    if &header[..4] != MAGIC {
        return Err(FrameError::Malformed("bad magic"));
    }
    let len = u32::from_be_bytes(header[14..18].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::Malformed("payload too large"));
    }
    Ok(len)
}

/// Checks CRC, then version, then kind, on a buffer already sized by its header.
fn finish_decode(bytes: &[u8]) -> Result<Frame, FrameError> {
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_be_bytes(trailer.try_into().expect("4 bytes")) {
        return Err(FrameError::CrcMismatch);
    }
    if body[4] != VERSION {
        return Err(FrameError::UnsupportedVersion(body[4]));
    }
    let kind = FrameKind::from_byte(body[5]).ok_or(FrameError::Malformed("unknown kind"))?;
    Ok(Frame {
        kind,
        round: u32::from_be_bytes(body[6..10].try_into().expect("4 bytes")),
        seq: u32::from_be_bytes(body[10..14].try_into().expect("4 bytes")),
        payload: body[HEADER_LEN..].to_vec(),
    })
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(FrameError::Malformed("truncated"));
    }
    let len = header_payload_len(&bytes[..HEADER_LEN])?;
    if bytes.len() != HEADER_LEN + len + 4 {
        return Err(FrameError::Malformed("length field disagrees with frame size"));
    }
    finish_decode(bytes)
}

/// Splits a transcript of concatenated frames.
pub fn split_frames(mut bytes: &[u8]) -> Result<Vec<Frame>, FrameError> {
    let mut frames = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < HEADER_LEN + 4 {
            return Err(FrameError::Malformed("truncated"));
        }
        let total = HEADER_LEN + header_payload_len(&bytes[..HEADER_LEN])? + 4;
        if bytes.len() < total {
            return Err(FrameError::Malformed("truncated"));
        }
        let (head, rest) = bytes.split_at(total);
        frames.push(finish_decode(head)?);
        bytes = rest;
    }
    Ok(frames)
}

/// Reads one frame. Framing problems surface as `InvalidData` wrapping a
/// [`FrameError`].
pub fn read_frame(reader: &mut dyn Read) -> io::Result<(Frame, Vec<u8>)> {
    let mut buf = vec![0u8; HEADER_LEN];
    reader.read_exact(&mut buf)?;
    let len = header_payload_len(&buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    buf.resize(HEADER_LEN + len + 4, 0);
    reader.read_exact(&mut buf[HEADER_LEN..])?;
    let frame = finish_decode(&buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    Ok((frame, buf))
}

/// Writes one frame and returns its encoding.
pub fn write_frame(writer: &mut dyn Write, frame: &Frame) -> io::Result<Vec<u8>> {
    let bytes = encode_frame(frame);
    writer.write_all(&bytes)?;
    writer.flush()?;
    Ok(bytes)
}

/// `BATCH` payload: code count (u32) then that many u16 codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPayload {
    pub codes: Vec<u16>,
}

impl BatchPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 2 * self.codes.len());
        out.extend_from_slice(&(self.codes.len() as u32).to_be_bytes());
        for c in &self.codes {
            out.extend_from_slice(&c.to_be_bytes());
        }
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Self, FrameError> {
        if payload.len() < 4 {
            return Err(FrameError::Malformed("short batch"));
        }
        let count = u32::from_be_bytes(payload[..4].try_into().expect("4 bytes")) as usize;
        let body = &payload[4..];
        if body.len() != 2 * count {
            return Err(FrameError::Malformed("batch count disagrees with payload"));
        }
        Ok(Self {
            codes: body
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect(),
        })
    }
}

/// `PA_PARAMS` payload: `a`, `t`, `λ` (u64 each), mode (u8), seed (16 bytes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaParamsPayload {
    pub a: u64,
    pub t: u64,
    pub lambda: u64,
    pub mode: PaMode,
    pub seed: [u8; 16],
}

impl PaParamsPayload {
    pub const LEN: usize = 41;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::LEN);
        out.extend_from_slice(&self.a.to_be_bytes());
        out.extend_from_slice(&self.t.to_be_bytes());
        out.extend_from_slice(&self.lambda.to_be_bytes());
        out.push(self.mode.to_byte());
        out.extend_from_slice(&self.seed);
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Self, FrameError> {
        if payload.len() != Self::LEN {
            return Err(FrameError::Malformed("PA_PARAMS length"));
        }
        let u = |i: usize| u64::from_be_bytes(payload[i..i + 8].try_into().expect("8 bytes"));
        Ok(Self {
            a: u(0),
            t: u(8),
            lambda: u(16),
            mode: PaMode::from_byte(payload[24]).ok_or(FrameError::Malformed("PA mode"))?,
            seed: payload[25..41].try_into().expect("16 bytes"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_ack_is_22_bytes() {
        let bytes = encode_frame(&Frame::new(FrameKind::Ack, 1, 0, vec![]));
        let head = [
            0x4B, 0x42, 0x54, 0x53, 0x01, 0x04, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0,
        ];
        assert_eq!(bytes.len(), 22);
        assert_eq!(&bytes[..18], &head);
        assert_eq!(&bytes[18..], &crc32fast::hash(&head).to_be_bytes());
    }

    fn arb_frame() -> impl Strategy<Value = Frame> {
        (1u8..=5, any::<u32>(), any::<u32>(), proptest::collection::vec(any::<u8>(), 0..200)).prop_map(
            |(k, round, seq, payload)| Frame::new(FrameKind::from_byte(k).unwrap(), round, seq, payload),
        )
    }

    proptest! {
        #[test]
        fn round_trip(frame in arb_frame()) {
            let bytes = encode_frame(&frame);
            prop_assert_eq!(decode_frame(&bytes).unwrap(), frame.clone());
            let (read, raw) = read_frame(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(read, frame);
            prop_assert_eq!(raw, bytes);
        }

        #[test]
        fn any_single_byte_corruption_is_rejected(frame in arb_frame(), pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
            let mut bytes = encode_frame(&frame);
            let i = pos.index(bytes.len());
            bytes[i] ^= flip;
            prop_assert!(decode_frame(&bytes).is_err());
        }

        #[test]
        fn batch_round_trip(codes in proptest::collection::vec(any::<u16>(), 0..300)) {
            let p = BatchPayload { codes };
            prop_assert_eq!(BatchPayload::decode(&p.encode()).unwrap(), p);
        }
    }

    #[test]
    fn flipped_payload_bit_is_a_crc_error() {
        let mut bytes = encode_frame(&Frame::new(FrameKind::Batch, 3, 7, vec![1, 2, 3, 4]));
        bytes[HEADER_LEN + 2] ^= 0x08;
        assert_eq!(decode_frame(&bytes), Err(FrameError::CrcMismatch));
    }

    #[test]
    fn errors_are_distinct() {
        let good = encode_frame(&Frame::new(FrameKind::Hello, 0, 0, vec![9; 8]));
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(decode_frame(&magic), Err(FrameError::Malformed(_))));
        let mut length = good.clone();
        length[17] += 1;
        assert!(matches!(decode_frame(&length), Err(FrameError::Malformed(_))));
        assert!(matches!(decode_frame(&good[..10]), Err(FrameError::Malformed(_))));
        let mut version = good[..good.len() - 4].to_vec();
        version[4] = 2;
        let crc = crc32fast::hash(&version);
        version.extend_from_slice(&crc.to_be_bytes());
        assert_eq!(decode_frame(&version), Err(FrameError::UnsupportedVersion(2)));
        let mut kind = good[..good.len() - 4].to_vec();
        kind[5] = 9;
        let crc = crc32fast::hash(&kind);
        kind.extend_from_slice(&crc.to_be_bytes());
        assert!(matches!(decode_frame(&kind), Err(FrameError::Malformed(_))));
    }

    #[test]
    fn transcripts_split_back_into_frames() {
        let frames = vec![
            Frame::new(FrameKind::Hello, 0, 0, vec![1; 32]),
            Frame::new(FrameKind::Batch, 0, 0, BatchPayload { codes: vec![5, 6] }.encode()),
            Frame::new(FrameKind::Ack, 0, 1, vec![]),
        ];
        let bytes: Vec<u8> = frames.iter().flat_map(encode_frame).collect();
        assert_eq!(split_frames(&bytes).unwrap(), frames);
        assert!(split_frames(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn pa_params_round_trip() {
        let p = PaParamsPayload {
            a: 4096,
            t: 339,
            lambda: 320,
            mode: PaMode::Toeplitz,
            seed: [7; 16],
        };
        let bytes = p.encode();
        assert_eq!(bytes.len(), PaParamsPayload::LEN);
        assert_eq!(PaParamsPayload::decode(&bytes).unwrap(), p);
        let mut bad = bytes;
        bad[24] = 7;
        assert!(PaParamsPayload::decode(&bad).is_err());
    }
}
