use serde::{Deserialize, Serialize};

use super::frame::{frame_len, Frame, CRC_LEN, HEADER_LEN, MAX_CHANNELS};
use super::WireError;

/// Longest time one frame may span.
pub const MAX_FRAME_PERIOD_S: f64 = 0.05;

/// Transport classes and their rate ceilings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportClass {
    /// Wired USB serial, bounded by the converter at 19,200 SPS.
    Serial,
    /// Bluetooth LE, 500 SPS.
    Ble,
}

impl TransportClass {
    /// Highest sample rate per channel.
    pub fn max_sps(self) -> u32 {
        match self {
            TransportClass::Serial => 19_200,
            TransportClass::Ble => 500,
        }
    }

    pub fn mtu(self) -> usize {
        match self {
            TransportClass::Serial => 1024,
            TransportClass::Ble => 244,
        }
    }
}

pub fn check_transport_rate(sps: u32, transport: TransportClass) -> Result<(), WireError> {
    if sps == 0 || sps > transport.max_sps() {
        return Err(WireError::TransportLimit {
            transport,
            sps,
            max: transport.max_sps(),
        });
    }
    Ok(())
}

/// Samples per channel per frame: the largest count whose frame fits the
/// transport MTU, spans at most 50 ms and fits the one-byte count field.
pub fn plan_packetization(
    sps: u32,
    n_channels: usize,
    transport: TransportClass,
) -> Result<u8, WireError> {
    check_transport_rate(sps, transport)?;
    if n_channels == 0 || n_channels > MAX_CHANNELS as usize {
        return Err(WireError::InvalidFrame(format!(
            "{n_channels} channels; a frame carries 1..=7"
        )));
    }
    let by_mtu = (transport.mtu() - HEADER_LEN - CRC_LEN) / (3 * n_channels);
    let by_period = (MAX_FRAME_PERIOD_S * sps as f64).floor() as usize;
    let count = by_mtu.min(by_period).min(u8::MAX as usize).max(1);
    debug_assert!(frame_len(((1u16 << n_channels) - 1) as u8, count as u8) <= transport.mtu());
    Ok(count as u8)
}

/// Groups per-tick samples into frames with a wrapping sequence number.
#[derive(Debug, Clone)]
pub struct Packetizer {
    channel_mask: u8,
    n_channels: usize,
    sample_count: usize,
    transport: TransportClass,
    drl_enabled: bool,
    next_seq: u16,
    pending: Vec<i32>,
    pending_ts: u32,
}

impl Packetizer {
    pub fn new(channel_mask: u8, sample_count: u8, transport: TransportClass) -> Self {
        let n_channels = channel_mask.count_ones() as usize;
        Self {
            channel_mask,
            n_channels,
            sample_count: sample_count.max(1) as usize,
            transport,
            drl_enabled: false,
            next_seq: 0,
            pending: Vec::with_capacity(sample_count as usize * n_channels),
            pending_ts: 0,
        }
    }

    pub fn with_start_seq(mut self, seq: u16) -> Self {
        self.next_seq = seq;
        self
    }

    /// DRL flag stamped on frames started from now on.
    pub fn set_drl(&mut self, on: bool) {
        self.drl_enabled = on;
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Add one tick. Returns a frame when it completes one.
    pub fn push(&mut self, timestamp_us: u64, codes: &[i32]) -> Option<Frame> {
        debug_assert_eq!(codes.len(), self.n_channels);
        if self.pending.is_empty() {
            self.pending_ts = timestamp_us as u32;
        }
        self.pending.extend_from_slice(codes);
        if self.pending.len() >= self.sample_count * self.n_channels {
            self.take()
        } else {
            None
        }
    }

    /// Emit whatever is buffered as a short frame.
    pub fn flush(&mut self) -> Option<Frame> {
        if self.pending.is_empty() {
            None
        } else {
            self.take()
        }
    }

    fn take(&mut self) -> Option<Frame> {
        let samples = std::mem::replace(
            &mut self.pending,
            Vec::with_capacity(self.sample_count * self.n_channels),
        );
        let frame = Frame {
            drl_enabled: self.drl_enabled,
            transport: self.transport,
            seq: self.next_seq,
            timestamp_us: self.pending_ts,
            channel_mask: self.channel_mask,
            samples,
        };
        self.next_seq = self.next_seq.wrapping_add(1);
        Some(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serial_single_channel_is_capped_by_count_field() {
        // MTU alone would allow (1024 - 14) / 3 = 336 and 50 ms allows 960,
        // but the count field is one byte.
        assert_eq!(
            (TransportClass::Serial.mtu() - HEADER_LEN - CRC_LEN) / 3,
            336
        );
        assert_eq!(
            plan_packetization(19_200, 1, TransportClass::Serial).unwrap(),
            255
        );
    }

    #[test]
    fn ble_seven_channels() {
        assert_eq!(plan_packetization(500, 7, TransportClass::Ble).unwrap(), 10);
        assert!(frame_len(0x7f, 10) <= 244);
    }

    #[test]
    fn period_cap_binds_at_low_rates() {
        assert_eq!(plan_packetization(250, 1, TransportClass::Ble).unwrap(), 12);
        assert_eq!(
            plan_packetization(500, 1, TransportClass::Serial).unwrap(),
            25
        );
        assert_eq!(
            plan_packetization(10, 1, TransportClass::Serial).unwrap(),
            1
        );
    }

    #[test]
    fn transport_limits() {
        assert!(matches!(
            plan_packetization(20_000, 1, TransportClass::Serial),
            Err(WireError::TransportLimit { .. })
        ));
        assert!(plan_packetization(19_201, 2, TransportClass::Serial).is_err());
        assert!(plan_packetization(19_200, 2, TransportClass::Serial).is_ok());
        assert!(plan_packetization(501, 1, TransportClass::Ble).is_err());
        assert!(plan_packetization(500, 1, TransportClass::Ble).is_ok());
        assert!(plan_packetization(500, 0, TransportClass::Ble).is_err());
        assert!(plan_packetization(500, 8, TransportClass::Ble).is_err());
    }

    #[test]
    fn every_plan_fits_mtu() {
        for transport in [TransportClass::Serial, TransportClass::Ble] {
            for n in 1..=7usize {
                for sps in [1, 20, 100, 250, 500, 1000, 4800, 19_200] {
                    if sps > transport.max_sps() {
                        continue;
                    }
                    let c = plan_packetization(sps, n, transport).unwrap();
                    let mask = ((1u16 << n) - 1) as u8;
                    assert!(frame_len(mask, c) <= transport.mtu());
                }
            }
        }
    }

    #[test]
    fn packetizer_groups_ticks() {
        let mut p = Packetizer::new(0b11, 3, TransportClass::Serial).with_start_seq(65_535);
        let mut frames = Vec::new();
        for i in 0..7u64 {
            frames.extend(p.push(i * 100, &[i as i32, -(i as i32)]));
        }
        frames.extend(p.flush());
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[0].seq, 65_535);
        assert_eq!(frames[1].seq, 0);
        assert_eq!(frames[1].timestamp_us, 300);
        assert_eq!(frames[1].samples, vec![3, -3, 4, -4, 5, -5]);
        assert_eq!(frames[2].sample_count(), 1);
        assert!(p.flush().is_none());
    }
}
