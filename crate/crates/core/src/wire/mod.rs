//! Binary framing for 24-bit sample streams.
//!
//! ```text
//! offset  size  field
//!      0     2  magic 0x45 0x58 ("EX")
//!      2     1  version (1)
//!      3     1  flags: bit0 DRL enabled, bit1 transport (0 serial, 1 BLE), rest 0
//!      4     2  seq, u16 little-endian, wrapping
//!      6     4  timestamp_us of the first sample, u32 little-endian, wrapping
//!     10     1  channel mask, bit i => AIN(i+1)
//!     11     1  sample_count per channel (>= 1)
//!     12   3*N  samples, 24-bit two's complement little-endian, tick-major
//!  12+3N     2  CRC-16/CCITT-FALSE over bytes 0..12+3N, big-endian
//! ```
//!
//! with `N = sample_count * popcount(mask)`.

mod crc;
mod frame;
mod packetize;
mod stream;

use thiserror::Error;

pub use crc::crc16_ccitt_false;
pub use frame::{
    decode_frame, encode_frame, encode_frame_into, frame_len, Frame, StreamDecoder,
    BYTES_PER_SAMPLE, CRC_LEN, HEADER_LEN, MAGIC, MAX_CHANNELS, SAMPLE_MAX, SAMPLE_MIN, VERSION,
};
pub use packetize::{
    check_transport_rate, plan_packetization, Packetizer, TransportClass, MAX_FRAME_PERIOD_S,
};
pub use stream::{track_stream, SeqGap, StreamStats, StreamTracker};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("length mismatch: expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("crc mismatch: frame carries {received:#06x}, computed {computed:#06x}")]
    CrcMismatch { received: u16, computed: u16 },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("sample {0} outside the signed 24-bit range")]
    SampleOutOfRange(i32),
    #[error("{sps} SPS exceeds the {transport:?} limit of {max} SPS")]
    TransportLimit {
        transport: TransportClass,
        sps: u32,
        max: u32,
    },
}

/// Hex dump with a space between bytes.
pub fn to_hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<Vec<_>>()
        .join(" ")
}
