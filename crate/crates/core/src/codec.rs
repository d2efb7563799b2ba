//! SCL frame wire format.
//!
//! All multi-byte integers are little-endian. The magic is written as the
//! four ASCII characters `S C L 1`, i.e. `0x53434C31` in big-endian order.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SCL1"
//!      4     1  channel_id   (0 = PSS, 1 = RT monitor)
//!      5     1  msg_type     (1 Heartbeat, 2 ParamUpdate, 3 ParamAck, 4 Command, 5 Diagnostic)
//!      6     2  payload_len  (<= 1024)
//!      8     4  seqno
//!     12     8  timestamp_ns
//!     20     n  payload
//!   20+n     4  crc32c over bytes [0, 20+n)
//! ```
//!
//! Decoding treats its input as untrusted and never panics. Checks run in a
//! fixed order so the reported reason is deterministic: minimum length,
//! magic, declared length, CRC, then the enumerated fields.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crc::{crc32c, Crc32c};

pub const MAGIC: [u8; 4] = *b"SCL1";
pub const HEADER_LEN: usize = 20;
pub const CRC_LEN: usize = 4;
pub const MIN_FRAME_LEN: usize = HEADER_LEN + CRC_LEN;
pub const MAX_PAYLOAD: usize = 1024;
pub const MAX_FRAME_LEN: usize = MIN_FRAME_LEN + MAX_PAYLOAD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum ChannelId {
    Pss = 0,
    RtMonitor = 1,
}

impl ChannelId {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Pss),
            1 => Some(Self::RtMonitor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum MsgType {
    Heartbeat = 1,
    ParamUpdate = 2,
    ParamAck = 3,
    Command = 4,
    Diagnostic = 5,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Self::Heartbeat),
            2 => Some(Self::ParamUpdate),
            3 => Some(Self::ParamAck),
            4 => Some(Self::Command),
            5 => Some(Self::Diagnostic),
            _ => None,
        }
    }
}

/// One protected message. `magic`, `payload_len` and `crc` are derived on
/// encode and verified on decode, so they are not stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SclFrame {
    pub channel: ChannelId,
    pub msg_type: MsgType,
    pub seqno: u32,
    pub timestamp_ns: u64,
    pub payload: Vec<u8>,
}

impl SclFrame {
    pub fn new(channel: ChannelId, msg_type: MsgType, seqno: u32, timestamp_ns: u64, payload: Vec<u8>) -> Self {
        Self { channel, msg_type, seqno, timestamp_ns, payload }
    }

    pub fn encoded_len(&self) -> usize {
        MIN_FRAME_LEN + self.payload.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    PayloadTooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptReason {
    BadMagic,
    BadLength,
    BadCrc,
    UnknownMsgType,
    UnknownChannel,
}

/// Outcome of decoding untrusted bytes.
pub type Decoded = Result<SclFrame, CorruptReason>;

pub fn encode(frame: &SclFrame) -> Result<Vec<u8>, CodecError> {
    let len = frame.payload.len();
    if len > MAX_PAYLOAD {
        return Err(CodecError::PayloadTooLarge(len));
    }
    let mut out = Vec::with_capacity(MIN_FRAME_LEN + len);
    out.extend_from_slice(&MAGIC);
    out.push(frame.channel as u8);
    out.push(frame.msg_type as u8);
    out.extend_from_slice(&(len as u16).to_le_bytes());
    out.extend_from_slice(&frame.seqno.to_le_bytes());
    out.extend_from_slice(&frame.timestamp_ns.to_le_bytes());
    out.extend_from_slice(&frame.payload);
    let crc = crc32c(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode(raw: &[u8]) -> Decoded {
    if raw.len() < MIN_FRAME_LEN {
        return Err(CorruptReason::BadLength);
    }
    if raw[0..4] != MAGIC {
        return Err(CorruptReason::BadMagic);
    }
    let payload_len = u16::from_le_bytes([raw[6], raw[7]]) as usize;
    if payload_len > MAX_PAYLOAD || raw.len() != MIN_FRAME_LEN + payload_len {
        return Err(CorruptReason::BadLength);
    }
    let body_end = HEADER_LEN + payload_len;
    let mut crc = Crc32c::new();
    crc.update(&raw[..body_end]);
    let trailer = u32::from_le_bytes([raw[body_end], raw[body_end + 1], raw[body_end + 2], raw[body_end + 3]]);
    if crc.finish() != trailer {
        return Err(CorruptReason::BadCrc);
    }
    let msg_type = MsgType::from_u8(raw[5]).ok_or(CorruptReason::UnknownMsgType)?;
    let channel = ChannelId::from_u8(raw[4]).ok_or(CorruptReason::UnknownChannel)?;
    let seqno = u32::from_le_bytes([raw[8], raw[9], raw[10], raw[11]]);
    let mut ts = [0u8; 8];
    ts.copy_from_slice(&raw[12..20]);
    Ok(SclFrame {
        channel,
        msg_type,
        seqno,
        timestamp_ns: u64::from_le_bytes(ts),
        payload: raw[HEADER_LEN..body_end].to_vec(),
    })
}
