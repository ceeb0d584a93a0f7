use serde::{Deserialize, Serialize};

use super::frame::Frame;
use super::WireError;

/// A sequence discontinuity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqGap {
    pub expected_seq: u16,
    pub received_seq: u16,
    /// Frames missing between the two, `None` when the jump points backwards
    /// (a duplicate or reordered frame).
    pub frames_lost: Option<u16>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamStats {
    pub frames_ok: u64,
    pub crc_failures: u64,
    /// Frames rejected for any other reason.
    pub decode_failures: u64,
    pub gaps: Vec<SeqGap>,
    pub samples_lost_estimate: u64,
}

/// Per-stream sequence tracker. Feed it decode results in arrival order.
#[derive(Debug, Clone, Default)]
pub struct StreamTracker {
    stats: StreamStats,
    last_seq: Option<u16>,
    last_sample_count: u64,
}

impl StreamTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record one good frame. Returns the gap it closes, if any.
    pub fn observe(&mut self, frame: &Frame) -> Option<SeqGap> {
        self.stats.frames_ok += 1;
        let gap = self.last_seq.and_then(|last| {
            let expected = last.wrapping_add(1);
            (frame.seq != expected).then(|| {
                let diff = frame.seq.wrapping_sub(expected);
                SeqGap {
                    expected_seq: expected,
                    received_seq: frame.seq,
                    frames_lost: (diff < 0x8000).then_some(diff),
                }
            })
        });
        if let Some(g) = gap {
            if let Some(lost) = g.frames_lost {
                self.stats.samples_lost_estimate += lost as u64 * self.last_sample_count;
            }
            self.stats.gaps.push(g);
        }
        self.last_seq = Some(frame.seq);
        self.last_sample_count = frame.sample_count() as u64;
        gap
    }

    pub fn observe_error(&mut self, err: &WireError) {
        match err {
            WireError::CrcMismatch { .. } => self.stats.crc_failures += 1,
            _ => self.stats.decode_failures += 1,
        }
    }

    pub fn push(&mut self, result: &Result<Frame, WireError>) -> Option<SeqGap> {
        match result {
            Ok(f) => self.observe(f),
            Err(e) => {
                self.observe_error(e);
                None
            }
        }
    }

    pub fn stats(&self) -> &StreamStats {
        &self.stats
    }

    pub fn into_stats(self) -> StreamStats {
        self.stats
    }
}

pub fn track_stream<'a, I>(results: I) -> StreamStats
where
    I: IntoIterator<Item = &'a Result<Frame, WireError>>,
{
    let mut t = StreamTracker::new();
    for r in results {
        t.push(r);
    }
    t.into_stats()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::TransportClass;
    use proptest::prelude::*;

    fn frame(seq: u16, count: usize) -> Result<Frame, WireError> {
        Ok(Frame {
            drl_enabled: false,
            transport: TransportClass::Serial,
            seq,
            timestamp_us: 0,
            channel_mask: 1,
            samples: vec![0; count],
        })
    }

    #[test]
    fn contiguous() {
        let s = track_stream(&[frame(0, 4), frame(1, 4), frame(2, 4), frame(3, 4)]);
        assert_eq!(s.frames_ok, 4);
        assert!(s.gaps.is_empty());
        assert_eq!(s.samples_lost_estimate, 0);
    }

    #[test]
    fn gap_counts_lost_frames() {
        let s = track_stream(&[frame(0, 24), frame(1, 24), frame(5, 24)]);
        assert_eq!(
            s.gaps,
            vec![SeqGap {
                expected_seq: 2,
                received_seq: 5,
                frames_lost: Some(3)
            }]
        );
        assert_eq!(s.samples_lost_estimate, 72);
    }

    #[test]
    fn wraparound_is_continuous() {
        let s = track_stream(&[frame(65_534, 1), frame(65_535, 1), frame(0, 1), frame(1, 1)]);
        assert!(s.gaps.is_empty());
    }

    #[test]
    fn crc_failures_counted() {
        let results = vec![
            frame(0, 1),
            Err(WireError::CrcMismatch {
                received: 1,
                computed: 2,
            }),
            Err(WireError::BadMagic([0, 0])),
            frame(2, 1),
        ];
        let s = track_stream(&results);
        assert_eq!(s.crc_failures, 1);
        assert_eq!(s.decode_failures, 1);
        assert_eq!(s.gaps.len(), 1);
        assert_eq!(s.samples_lost_estimate, 1);
    }

    #[test]
    fn duplicate_is_a_gap_without_loss() {
        let s = track_stream(&[frame(7, 1), frame(7, 1)]);
        assert_eq!(s.gaps[0].frames_lost, None);
        assert_eq!(s.samples_lost_estimate, 0);
    }

    proptest! {
        #[test]
        fn gap_structure_invariant_under_seq_offset(
            steps in proptest::collection::vec(1u16..5, 1..60),
            offset in any::<u16>(),
        ) {
            let mut seq = 0u16;
            let mut a = vec![frame(0, 3)];
            let mut b = vec![frame(offset, 3)];
            for s in steps {
                seq = seq.wrapping_add(s);
                a.push(frame(seq, 3));
                b.push(frame(seq.wrapping_add(offset), 3));
            }
            let sa = track_stream(&a);
            let sb = track_stream(&b);
            prop_assert_eq!(sa.gaps.len(), sb.gaps.len());
            prop_assert_eq!(sa.samples_lost_estimate, sb.samples_lost_estimate);
            for (ga, gb) in sa.gaps.iter().zip(&sb.gaps) {
                prop_assert_eq!(ga.frames_lost, gb.frames_lost);
                prop_assert_eq!(ga.expected_seq.wrapping_add(offset), gb.expected_seq);
            }
        }
    }
}
