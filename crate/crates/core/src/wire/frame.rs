use serde::{Deserialize, Serialize};

use super::crc::crc16_ccitt_false;
use super::{TransportClass, WireError};

pub const MAGIC: [u8; 2] = [0x45, 0x58];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 12;
pub const CRC_LEN: usize = 2;
pub const BYTES_PER_SAMPLE: usize = 3;
pub const MAX_CHANNELS: u32 = 7;

pub const SAMPLE_MIN: i32 = -(1 << 23);
pub const SAMPLE_MAX: i32 = (1 << 23) - 1;

const FLAG_DRL: u8 = 0b01;
const FLAG_BLE: u8 = 0b10;
const FLAG_RESERVED: u8 = !(FLAG_DRL | FLAG_BLE);

/// Total encoded length for a channel mask and per-channel sample count.
pub const fn frame_len(channel_mask: u8, sample_count: u8) -> usize {
    HEADER_LEN
        + BYTES_PER_SAMPLE * sample_count as usize * channel_mask.count_ones() as usize
        + CRC_LEN
}

/// One packet of 24-bit samples.
///
/// `samples` is tick-major: all channels of the first tick, then all
/// channels of the second, and so on. Channel order follows the mask bits
/// from low to high.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub drl_enabled: bool,
    pub transport: TransportClass,
    pub seq: u16,
    /// Time of the first sample, wrapping microseconds.
    pub timestamp_us: u32,
    /// Bit `i` set means AIN(i+1) is present.
    pub channel_mask: u8,
    pub samples: Vec<i32>,
}

impl Frame {
    pub fn n_channels(&self) -> usize {
        self.channel_mask.count_ones() as usize
    }

    /// Samples per channel, or 0 when the mask is empty.
    pub fn sample_count(&self) -> usize {
        match self.n_channels() {
            0 => 0,
            n => self.samples.len() / n,
        }
    }

    pub fn flags(&self) -> u8 {
        let mut f = 0;
        if self.drl_enabled {
            f |= FLAG_DRL;
        }
        if self.transport == TransportClass::Ble {
            f |= FLAG_BLE;
        }
        f
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + BYTES_PER_SAMPLE * self.samples.len() + CRC_LEN
    }

    pub fn validate(&self) -> Result<(), WireError> {
        let n = self.n_channels();
        if n == 0 || self.channel_mask & 0x80 != 0 {
            return Err(WireError::InvalidFrame(format!(
                "channel mask {:#04x} must select 1..=7 of AIN1..AIN7",
                self.channel_mask
            )));
        }
        if self.samples.is_empty() || !self.samples.len().is_multiple_of(n) {
            return Err(WireError::InvalidFrame(format!(
                "{} samples do not fill whole ticks of {n} channels",
                self.samples.len()
            )));
        }
        let count = self.samples.len() / n;
        if count > u8::MAX as usize {
            return Err(WireError::InvalidFrame(format!(
                "{count} samples per channel exceeds 255"
            )));
        }
        if let Some(&v) = self
            .samples
            .iter()
            .find(|&&v| !(SAMPLE_MIN..=SAMPLE_MAX).contains(&v))
        {
            return Err(WireError::SampleOutOfRange(v));
        }
        Ok(())
    }

    /// Tick `k` as a slice of per-channel codes.
    pub fn tick(&self, k: usize) -> &[i32] {
        let n = self.n_channels();
        &self.samples[k * n..(k + 1) * n]
    }
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(frame.encoded_len());
    encode_frame_into(frame, &mut out)?;
    Ok(out)
}

/// Append the encoding of `frame` to `out`.
pub fn encode_frame_into(frame: &Frame, out: &mut Vec<u8>) -> Result<(), WireError> {
    frame.validate()?;
    let start = out.len();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(frame.flags());
    out.extend_from_slice(&frame.seq.to_le_bytes());
    out.extend_from_slice(&frame.timestamp_us.to_le_bytes());
    out.push(frame.channel_mask);
    out.push(frame.sample_count() as u8);
    for &s in &frame.samples {
        out.extend_from_slice(&s.to_le_bytes()[..3]);
    }
    let crc = crc16_ccitt_false(&out[start..]);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(())
}

/// Parse one complete frame. Checks run in order magic, version, length,
/// CRC, then header semantics; the first failure is returned.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, WireError> {
    if bytes.len() < MAGIC.len() {
        return Err(WireError::LengthMismatch {
            expected: HEADER_LEN + CRC_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[..2] != MAGIC {
        return Err(WireError::BadMagic([bytes[0], bytes[1]]));
    }
    if bytes.len() < 3 {
        return Err(WireError::LengthMismatch {
            expected: HEADER_LEN + CRC_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[2] != VERSION {
        return Err(WireError::UnsupportedVersion(bytes[2]));
    }
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(WireError::LengthMismatch {
            expected: HEADER_LEN + CRC_LEN,
            actual: bytes.len(),
        });
    }
    let mask = bytes[10];
    let count = bytes[11];
    let expected = frame_len(mask, count);
    if bytes.len() != expected {
        return Err(WireError::LengthMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let body = &bytes[..expected - CRC_LEN];
    let received = u16::from_be_bytes([bytes[expected - 2], bytes[expected - 1]]);
    let computed = crc16_ccitt_false(body);
    if received != computed {
        return Err(WireError::CrcMismatch { received, computed });
    }
    let flags = bytes[3];
    if flags & FLAG_RESERVED != 0 {
        return Err(WireError::InvalidFrame(format!(
            "reserved flag bits set: {flags:#04x}"
        )));
    }
    if mask == 0 || mask & 0x80 != 0 || count == 0 {
        return Err(WireError::InvalidFrame(format!(
            "channel mask {mask:#04x} / sample count {count} not allowed"
        )));
    }
    let samples = body[HEADER_LEN..]
        .chunks_exact(BYTES_PER_SAMPLE)
        .map(|c| i32::from_le_bytes([0, c[0], c[1], c[2]]) >> 8)
        .collect();
    Ok(Frame {
        drl_enabled: flags & FLAG_DRL != 0,
        transport: if flags & FLAG_BLE != 0 {
            TransportClass::Ble
        } else {
            TransportClass::Serial
        },
        seq: u16::from_le_bytes([bytes[4], bytes[5]]),
        timestamp_us: u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]),
        channel_mask: mask,
        samples,
    })
}

/// Incremental decoder for a byte stream without message boundaries (a
/// serial line). Skips garbage up to the next magic and yields one result per
/// candidate frame.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame (or decode error), `None` when more bytes are
    /// needed. A frame that fails its CRC is reported and the decoder
    /// resynchronizes one byte further on.
    pub fn next_frame(&mut self) -> Option<Result<Frame, WireError>> {
        match self.buf.windows(2).position(|w| w == MAGIC) {
            Some(i) => {
                self.buf.drain(..i);
            }
            None => {
                // keep a trailing 0x45 that may begin the next magic
                let keep = usize::from(self.buf.last() == Some(&MAGIC[0]));
                let cut = self.buf.len() - keep;
                self.buf.drain(..cut);
                return None;
            }
        }
        if self.buf.len() < HEADER_LEN {
            return None;
        }
        let len = frame_len(self.buf[10], self.buf[11]);
        if self.buf.len() < len {
            return None;
        }
        let result = decode_frame(&self.buf[..len]);
        let consumed = if result.is_ok() { len } else { 1 };
        self.buf.drain(..consumed);
        Some(result)
    }
}
