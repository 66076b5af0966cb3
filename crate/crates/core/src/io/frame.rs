//! Framed binary block stream (`.blk`).
//!
//! Frame layout, all little-endian:
//!
//! ```text
//! 0x24 0x40 | crc u16 | block_id u16 | length u16 | payload (length - 8 bytes)
//! ```
//!
//! `length` counts the whole frame and is a multiple of 4; payloads are
//! zero-padded. The CRC is CRC-16/XMODEM over block_id, length and payload.
//! The layout borrows the shape of common receiver framings but is its own
//! format.

use std::collections::BTreeMap;

use thiserror::Error;

use super::log::{quantize_cno, ObservableEpoch, SatId};

pub const SYNC: [u8; 2] = [0x24, 0x40];
pub const HEADER_LEN: usize = 8;
/// Largest payload whose padded frame length still fits the u16 field.
pub const MAX_PAYLOAD: usize = 65532 - HEADER_LEN;

pub const RECEIVER_STATUS_ID: u16 = 1;
pub const MEAS_EPOCH_ID: u16 = 2;

/// C/N0 code marking a satellite that lost lock.
pub const CNO_LOST: u16 = 0xFFFF;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum FrameError {
    #[error("no sync pattern at frame start")]
    BadSync,
    #[error("CRC mismatch: frame carries {stored:#06x}, computed {computed:#06x}")]
    BadCrc { stored: u16, computed: u16 },
    #[error("bad length: {0}")]
    BadLength(String),
    #[error("unknown block id {0}")]
    UnknownBlockId(u16),
    #[error("cannot encode: {0}")]
    Unencodable(String),
}

pub type Result<T> = std::result::Result<T, FrameError>;

/// CRC-16/XMODEM: polynomial 0x1021, initial value 0, no reflection.
pub fn crc16_xmodem(data: &[u8]) -> u16 {
    let mut crc: u16 = 0;
    for &b in data {
        crc ^= (b as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
        }
    }
    crc
}

/// A CRC-checked frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub block_id: u16,
    /// Payload including any zero padding.
    pub payload: Vec<u8>,
}

impl Frame {
    /// Total encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

fn padded(len: usize) -> usize {
    len.div_ceil(4) * 4
}

pub fn encode_block(block_id: u16, payload: &[u8]) -> Result<Vec<u8>> {
    if payload.len() > MAX_PAYLOAD {
        return Err(FrameError::BadLength(format!(
            "payload of {} bytes exceeds {MAX_PAYLOAD}",
            payload.len()
        )));
    }
    let length = HEADER_LEN + padded(payload.len());
    let mut out = Vec::with_capacity(length);
    out.extend_from_slice(&SYNC);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&block_id.to_le_bytes());
    out.extend_from_slice(&(length as u16).to_le_bytes());
    out.extend_from_slice(payload);
    out.resize(length, 0);
    let crc = crc16_xmodem(&out[4..]);
    out[2..4].copy_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Decodes the frame at the start of `bytes`; trailing bytes are ignored.
pub fn decode_block(bytes: &[u8]) -> Result<Frame> {
    if bytes.len() < 2 || bytes[..2] != SYNC {
        return Err(FrameError::BadSync);
    }
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::BadLength(format!("{} bytes cannot hold a header", bytes.len())));
    }
    let stored = u16::from_le_bytes([bytes[2], bytes[3]]);
    let block_id = u16::from_le_bytes([bytes[4], bytes[5]]);
    let length = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    if length < HEADER_LEN || !length.is_multiple_of(4) {
        return Err(FrameError::BadLength(format!("frame length {length} must be >= 8 and a multiple of 4")));
    }
    if length > bytes.len() {
        return Err(FrameError::BadLength(format!(
            "frame length {length} runs past the {} available bytes",
            bytes.len()
        )));
    }
    let computed = crc16_xmodem(&bytes[4..length]);
    if computed != stored {
        return Err(FrameError::BadCrc { stored, computed });
    }
    Ok(Frame { block_id, payload: bytes[HEADER_LEN..length].to_vec() })
}

/// Iterates over a byte stream, resynchronising on the next sync pattern
/// after any damaged frame. Errors are yielded with their byte offset and
/// never end the iteration.
pub struct FrameReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> FrameReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }
}

impl Iterator for FrameReader<'_> {
    type Item = std::result::Result<Frame, (usize, FrameError)>;

    fn next(&mut self) -> Option<Self::Item> {
        let rest = self.bytes.get(self.pos..)?;
        let skip = rest.windows(2).position(|w| w == SYNC)?;
        let at = self.pos + skip;
        match decode_block(&self.bytes[at..]) {
            Ok(frame) => {
                self.pos = at + frame.encoded_len();
                Some(Ok(frame))
            }
            Err(e) => {
                self.pos = at + 1;
                Some(Err((at, e)))
            }
        }
    }
}

/// Typed content of a frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    /// AGC reading.
    ReceiverStatus { tow_ms: u32, agc_db: f32 },
    /// Per-satellite C/N0 in 0.1 dB-Hz, [`CNO_LOST`] for lost satellites.
    MeasEpoch { tow_ms: u32, sats: Vec<(u8, u16)> },
}

impl Block {
    pub fn tow_ms(&self) -> u32 {
        match self {
            Block::ReceiverStatus { tow_ms, .. } | Block::MeasEpoch { tow_ms, .. } => *tow_ms,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        match self {
            Block::ReceiverStatus { tow_ms, agc_db } => {
                let mut p = Vec::with_capacity(8);
                p.extend_from_slice(&tow_ms.to_le_bytes());
                p.extend_from_slice(&agc_db.to_bits().to_le_bytes());
                encode_block(RECEIVER_STATUS_ID, &p)
            }
            Block::MeasEpoch { tow_ms, sats } => {
                let n = u8::try_from(sats.len())
                    .map_err(|_| FrameError::Unencodable(format!("{} satellites exceed 255", sats.len())))?;
                let mut p = Vec::with_capacity(5 + 3 * sats.len());
                p.extend_from_slice(&tow_ms.to_le_bytes());
                p.push(n);
                for (svid, cno) in sats {
                    p.push(*svid);
                    p.extend_from_slice(&cno.to_le_bytes());
                }
                encode_block(MEAS_EPOCH_ID, &p)
            }
        }
    }

    pub fn from_frame(frame: &Frame) -> Result<Self> {
        let p = &frame.payload;
        let short = |need: usize| {
            FrameError::BadLength(format!(
                "block {} needs {need} payload bytes, frame has {}",
                frame.block_id,
                p.len()
            ))
        };
        let u32_at = |i: usize| u32::from_le_bytes([p[i], p[i + 1], p[i + 2], p[i + 3]]);
        match frame.block_id {
            RECEIVER_STATUS_ID => {
                if p.len() < 8 {
                    return Err(short(8));
                }
                Ok(Block::ReceiverStatus { tow_ms: u32_at(0), agc_db: f32::from_bits(u32_at(4)) })
            }
            MEAS_EPOCH_ID => {
                if p.len() < 5 {
                    return Err(short(5));
                }
                let n = p[4] as usize;
                let need = 5 + 3 * n;
                if p.len() < need {
                    return Err(short(need));
                }
                let sats = (0..n)
                    .map(|k| {
                        let i = 5 + 3 * k;
                        (p[i], u16::from_le_bytes([p[i + 1], p[i + 2]]))
                    })
                    .collect();
                Ok(Block::MeasEpoch { tow_ms: u32_at(0), sats })
            }
            other => Err(FrameError::UnknownBlockId(other)),
        }
    }
}

fn tow_ms(t: f64) -> Result<u32> {
    let ms = (t * 1000.0).round();
    if !(0.0..=u32::MAX as f64).contains(&ms) || (t * 1000.0 - ms).abs() > 1e-6 {
        return Err(FrameError::Unencodable(format!("time {t} s is not a whole millisecond in u32 range")));
    }
    Ok(ms as u32)
}

/// Encodes epochs as a block stream: a ReceiverStatus block when AGC is
/// present, then a MeasEpoch block.
pub fn encode_epochs(epochs: &[ObservableEpoch]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for e in epochs {
        let tow = tow_ms(e.t)?;
        if let Some(g) = e.agc_db {
            out.extend(Block::ReceiverStatus { tow_ms: tow, agc_db: g as f32 }.encode()?);
        }
        let mut sats: Vec<(u8, u16)> = e.cno.iter().map(|(s, c)| (s.0, (c * 10.0).round() as u16)).collect();
        sats.extend(e.lost.iter().map(|s| (s.0, CNO_LOST)));
        out.extend(Block::MeasEpoch { tow_ms: tow, sats }.encode()?);
    }
    Ok(out)
}

/// Counters from [`decode_epochs`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecodeReport {
    pub frames: usize,
    pub unknown_blocks: usize,
    /// Damaged frames or stray sync patterns, with byte offsets.
    pub errors: Vec<(usize, FrameError)>,
}

/// Rebuilds epochs from a block stream, skipping damaged frames and unknown
/// block ids.
pub fn decode_epochs(bytes: &[u8]) -> (Vec<ObservableEpoch>, DecodeReport) {
    let mut report = DecodeReport::default();
    let mut by_tow: BTreeMap<u32, ObservableEpoch> = BTreeMap::new();
    for item in FrameReader::new(bytes) {
        let frame = match item {
            Ok(f) => f,
            Err(e) => {
                report.errors.push(e);
                continue;
            }
        };
        report.frames += 1;
        let block = match Block::from_frame(&frame) {
            Ok(b) => b,
            Err(FrameError::UnknownBlockId(_)) => {
                report.unknown_blocks += 1;
                continue;
            }
            Err(e) => {
                report.errors.push((usize::MAX, e));
                continue;
            }
        };
        let tow = block.tow_ms();
        let epoch = by_tow.entry(tow).or_insert_with(|| ObservableEpoch::new(tow as f64 / 1000.0));
        match block {
            Block::ReceiverStatus { agc_db, .. } => epoch.agc_db = Some(agc_db as f64),
            Block::MeasEpoch { sats, .. } => {
                for (svid, code) in sats {
                    if code == CNO_LOST {
                        epoch.lost.push(SatId(svid));
                    } else {
                        epoch.cno.insert(SatId(svid), quantize_cno(code as f64 / 10.0));
                    }
                }
            }
        }
    }
    (by_tow.into_values().collect(), report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn crc_reference_vector() {
        assert_eq!(crc16_xmodem(b"123456789"), 0x31C3);
        assert_eq!(crc16_xmodem(b""), 0);
    }

    #[test]
    fn frame_layout() {
        let f = encode_block(7, &[1, 2, 3]).unwrap();
        assert_eq!(f.len(), 12);
        assert_eq!(&f[..2], &SYNC);
        assert_eq!(u16::from_le_bytes([f[4], f[5]]), 7);
        assert_eq!(u16::from_le_bytes([f[6], f[7]]), 12);
        assert_eq!(&f[8..], &[1, 2, 3, 0]);
        let d = decode_block(&f).unwrap();
        assert_eq!(d.payload, vec![1, 2, 3, 0]);
        assert!(encode_block(1, &vec![0u8; MAX_PAYLOAD]).is_ok());
        assert!(encode_block(1, &vec![0u8; MAX_PAYLOAD + 1]).is_err());
    }

    #[test]
    fn decode_errors() {
        let f = encode_block(1, &[0; 8]).unwrap();
        assert_eq!(decode_block(&f[1..]), Err(FrameError::BadSync));
        assert!(matches!(decode_block(&f[..10]), Err(FrameError::BadLength(_))));
        let mut bad = f.clone();
        bad[9] ^= 0x10;
        assert!(matches!(decode_block(&bad), Err(FrameError::BadCrc { .. })));
        let mut odd = f.clone();
        odd[6] = 10;
        assert!(matches!(decode_block(&odd), Err(FrameError::BadLength(_))));
    }

    #[test]
    fn empty_receiver_status_rejected() {
        let f = decode_block(&encode_block(RECEIVER_STATUS_ID, &[]).unwrap()).unwrap();
        assert!(matches!(Block::from_frame(&f), Err(FrameError::BadLength(_))));
        let f = decode_block(&encode_block(9, &[]).unwrap()).unwrap();
        assert_eq!(Block::from_frame(&f), Err(FrameError::UnknownBlockId(9)));
    }

    #[test]
    fn unknown_blocks_skipped() {
        let mut e = ObservableEpoch::new(1.0);
        e.agc_db = Some(30.0);
        let mut bytes = encode_block(77, b"vendor").unwrap();
        bytes.extend(encode_epochs(&[e.clone()]).unwrap());
        let (back, rep) = decode_epochs(&bytes);
        assert_eq!(back, vec![e]);
        assert_eq!(rep.unknown_blocks, 1);
        assert!(rep.errors.is_empty());
    }

    #[test]
    fn corruption_loses_exactly_one_frame() {
        let frames: Vec<Vec<u8>> =
            (0..20u16).map(|k| encode_block(3, &k.to_le_bytes().repeat(5)).unwrap()).collect();
        let mut stream: Vec<u8> = frames.concat();
        // flip one payload bit of frame 7
        let off: usize = frames[..7].iter().map(Vec::len).sum();
        stream[off + 9] ^= 0x04;
        let ok: Vec<Frame> = FrameReader::new(&stream).filter_map(|r| r.ok()).collect();
        assert_eq!(ok.len(), 19);
        assert!(ok.iter().all(|f| f.payload[..2] != 7u16.to_le_bytes()));
    }

    proptest! {
        #[test]
        fn aligned_payload_round_trip(id: u16, words in prop::collection::vec(any::<u32>(), 0..64)) {
            let payload: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
            let f = decode_block(&encode_block(id, &payload).unwrap()).unwrap();
            prop_assert_eq!(f.block_id, id);
            prop_assert_eq!(f.payload, payload);
        }

        #[test]
        fn padding_is_zero(id: u16, payload in prop::collection::vec(any::<u8>(), 0..50)) {
            let f = decode_block(&encode_block(id, &payload).unwrap()).unwrap();
            prop_assert_eq!(&f.payload[..payload.len()], &payload[..]);
            prop_assert!(f.payload[payload.len()..].iter().all(|&b| b == 0));
            prop_assert_eq!(f.payload.len() % 4, 0);
        }
    }
}
