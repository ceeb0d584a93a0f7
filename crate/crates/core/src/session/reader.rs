use std::fs::{self, File};
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{
    parse_annotations, read_meta, Annotation, SessionError, SessionMeta, ANNOTATIONS_FILE,
    BYTES_PER_CODE, RAW_FILE,
};
use crate::afe::code_to_input_uv;

/// Read-only view of the committed part of a session.
#[derive(Debug, Clone)]
pub struct SessionReader {
    dir: PathBuf,
    meta: SessionMeta,
    annotations: Vec<Annotation>,
}

pub fn read_annotations(dir: &Path) -> Result<Vec<Annotation>, SessionError> {
    let f = File::open(dir.join(ANNOTATIONS_FILE))?;
    parse_annotations(BufReader::new(f))
        .into_iter()
        .map(|(line, r)| {
            r.map_err(|e| SessionError::InvalidAnnotation(format!("line {line}: {e}")))
        })
        .collect()
}

impl SessionReader {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, SessionError> {
        let dir = dir.as_ref().to_path_buf();
        let meta = read_meta(&dir)?;
        let annotations = read_annotations(&dir)?;
        Ok(Self {
            dir,
            meta,
            annotations,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &SessionMeta {
        &self.meta
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn n_samples(&self) -> u64 {
        self.meta.samples_per_channel
    }

    pub fn n_channels(&self) -> usize {
        self.meta.n_channels
    }

    pub fn sps(&self) -> f64 {
        self.meta.sps as f64
    }

    /// Codes of samples `range`, tick-major (all channels of one tick
    /// together).
    pub fn read_range(&self, range: Range<u64>) -> Result<Vec<i32>, SessionError> {
        let len = self.n_samples();
        if range.start > range.end || range.end > len {
            return Err(SessionError::OutOfRange {
                start: range.start,
                end: range.end,
                len,
            });
        }
        let tick_bytes = (self.n_channels() * BYTES_PER_CODE) as u64;
        let mut f = File::open(self.dir.join(RAW_FILE))?;
        f.seek(SeekFrom::Start(range.start * tick_bytes))?;
        let mut bytes = vec![0u8; ((range.end - range.start) * tick_bytes) as usize];
        f.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(BYTES_PER_CODE)
            .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }

    pub fn channel_codes(&self, k: usize) -> Result<Vec<i32>, SessionError> {
        let n = self.n_channels();
        if k >= n {
            return Err(SessionError::InvalidMeta(format!(
                "channel {k} of a {n}-channel session"
            )));
        }
        let all = self.read_range(0..self.n_samples())?;
        Ok(all.iter().skip(k).step_by(n).copied().collect())
    }

    /// Input-referred microvolts of channel `k`.
    pub fn channel_uv(&self, k: usize) -> Result<Vec<f64>, SessionError> {
        let cfg = self.meta.channel_afe(k);
        Ok(self
            .channel_codes(k)?
            .into_iter()
            .map(|c| code_to_input_uv(c, &cfg))
            .collect())
    }

    /// Writes samples `range` as CSV: `t_us,ch1_uV,...`, LF line endings,
    /// shortest round-trip decimal values.
    pub fn export_csv(&self, range: Range<u64>, out: &mut impl Write) -> Result<(), SessionError> {
        let codes = self.read_range(range.clone())?;
        let n = self.n_channels();
        let cfgs: Vec<_> = (0..n).map(|k| self.meta.channel_afe(k)).collect();
        let header: Vec<String> = (1..=n).map(|k| format!("ch{k}_uV")).collect();
        writeln!(out, "t_us,{}", header.join(","))?;
        let mut line = String::new();
        for (i, tick) in range.zip(codes.chunks_exact(n.max(1))) {
            use std::fmt::Write as _;
            line.clear();
            write!(line, "{}", self.meta.time_of_us(i)).unwrap();
            for (c, cfg) in tick.iter().zip(&cfgs) {
                write!(line, ",{}", code_to_input_uv(*c, cfg)).unwrap();
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

/// CSV export of a session directory; `None` exports everything.
pub fn export_csv(
    dir: &Path,
    range: Option<Range<u64>>,
    out: &mut impl Write,
) -> Result<(), SessionError> {
    let r = SessionReader::open(dir)?;
    let range = range.unwrap_or(0..r.n_samples());
    r.export_csv(range, out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    /// `raw.bin` is not a whole number of ticks.
    Alignment {
        raw_bytes: u64,
        tick_bytes: u64,
    },
    /// `raw.bin` and the committed count in `meta.json` disagree.
    CountMismatch {
        meta_samples: u64,
        file_samples: u64,
    },
    /// Stored samples plus recorded losses do not cover the timestamp span.
    Continuity {
        expected_ticks: u64,
        stored: u64,
        recorded_lost: u64,
    },
    AnnotationsUnsorted {
        line: usize,
        t_us: u64,
        previous_us: u64,
    },
    AnnotationInvalid {
        line: usize,
        reason: String,
    },
    Meta {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegrityReport {
    pub session_id: Option<String>,
    pub raw_bytes: u64,
    pub samples_per_channel: u64,
    pub annotations: usize,
    pub violations: Vec<Violation>,
}

impl IntegrityReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a session directory. Never fails: problems become violations.
pub fn integrity_check(dir: &Path) -> IntegrityReport {
    let mut report = IntegrityReport {
        session_id: None,
        raw_bytes: 0,
        samples_per_channel: 0,
        annotations: 0,
        violations: Vec::new(),
    };
    let meta = match read_meta(dir) {
        Ok(m) => m,
        Err(e) => {
            report.violations.push(Violation::Meta {
                reason: e.to_string(),
            });
            return report;
        }
    };
    report.session_id = Some(meta.session_id.clone());
    if let Err(e) = meta.validate() {
        report.violations.push(Violation::Meta {
            reason: e.to_string(),
        });
    }

    let raw_bytes = fs::metadata(dir.join(RAW_FILE)).map(|m| m.len());
    match raw_bytes {
        Err(e) => report.violations.push(Violation::Meta {
            reason: format!("{RAW_FILE}: {e}"),
        }),
        Ok(len) => {
            report.raw_bytes = len;
            let tick_bytes = (meta.n_channels.max(1) * BYTES_PER_CODE) as u64;
            if len % tick_bytes != 0 {
                report.violations.push(Violation::Alignment {
                    raw_bytes: len,
                    tick_bytes,
                });
            }
            let stored = len / tick_bytes;
            report.samples_per_channel = stored;
            if stored != meta.samples_per_channel {
                report.violations.push(Violation::CountMismatch {
                    meta_samples: meta.samples_per_channel,
                    file_samples: stored,
                });
            }
            if let Some(last_us) = meta.last_tick_us {
                let expected_ticks = (last_us as f64 * meta.sps as f64 / 1e6).round() as u64 + 1;
                let recorded_lost = meta.lost_before(u64::MAX);
                if (stored + recorded_lost).abs_diff(expected_ticks) > 1 {
                    report.violations.push(Violation::Continuity {
                        expected_ticks,
                        stored,
                        recorded_lost,
                    });
                }
            } else if stored > 0 {
                report.violations.push(Violation::Meta {
                    reason: "samples stored but no timestamp span recorded".into(),
                });
            }
        }
    }

    match File::open(dir.join(ANNOTATIONS_FILE)) {
        Err(e) => report.violations.push(Violation::Meta {
            reason: format!("{ANNOTATIONS_FILE}: {e}"),
        }),
        Ok(f) => {
            let mut previous: Option<u64> = None;
            for (line, r) in parse_annotations(BufReader::new(f)) {
                match r {
                    Err(reason) => report
                        .violations
                        .push(Violation::AnnotationInvalid { line, reason }),
                    Ok(a) => {
                        report.annotations += 1;
                        if a.label.trim().is_empty() {
                            report.violations.push(Violation::AnnotationInvalid {
                                line,
                                reason: "empty label".into(),
                            });
                        }
                        if let Some(p) = previous.filter(|&p| a.t_us < p) {
                            report.violations.push(Violation::AnnotationsUnsorted {
                                line,
                                t_us: a.t_us,
                                previous_us: p,
                            });
                        }
                        previous = Some(a.t_us);
                    }
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::super::tests::frame;
    use super::super::{AnnotationSource, Session, SessionTransport};
    use super::*;
    use crate::afe::{input_uv_to_code, AfeConfig, Montage};
    use crate::wire::Frame;
    use std::fs::OpenOptions;

    fn session_with(frames: &[Frame]) -> (tempfile::TempDir, PathBuf) {
        let tmp = tempfile::tempdir().unwrap();
        let meta = SessionMeta::new(
            AfeConfig::default(),
            Montage::ear_study(),
            SessionTransport::Simulated,
        );
        let mut s = Session::create(tmp.path().join("s"), meta).unwrap();
        s.append_frames(frames).unwrap();
        s.annotate(&Annotation::new(
            0,
            "rest",
            AnnotationSource::ProtocolScript,
        ))
        .unwrap();
        let dir = s.dir().to_path_buf();
        s.finish().unwrap();
        (tmp, dir)
    }

    fn ten_frames() -> Vec<Frame> {
        (0..10u16)
            .map(|k| {
                let samples = (0..24).map(|i| k as i32 * 1000 - i).collect();
                frame(k, k as u32 * 48_000, samples)
            })
            .collect()
    }

    #[test]
    fn write_then_read_identity() {
        let frames = ten_frames();
        let (_tmp, dir) = session_with(&frames);
        let r = SessionReader::open(&dir).unwrap();
        let all: Vec<i32> = frames.iter().flat_map(|f| f.samples.clone()).collect();
        assert_eq!(r.read_range(0..240).unwrap(), all);
        assert_eq!(r.read_range(30..35).unwrap(), all[30..35].to_vec());
        assert!(r.read_range(200..241).is_err());
        assert_eq!(r.annotations().len(), 1);
    }

    #[test]
    fn pristine_session_is_clean() {
        let (_tmp, dir) = session_with(&ten_frames());
        let rep = integrity_check(&dir);
        assert!(rep.is_clean(), "{:?}", rep.violations);
        assert_eq!(rep.samples_per_channel, 240);
    }

    #[test]
    fn truncated_raw_is_misaligned() {
        let (_tmp, dir) = session_with(&ten_frames());
        let f = OpenOptions::new()
            .write(true)
            .open(dir.join(RAW_FILE))
            .unwrap();
        f.set_len(959).unwrap();
        let rep = integrity_check(&dir);
        assert!(rep
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Alignment { .. })));
    }

    #[test]
    fn deleted_frames_break_continuity() {
        let (_tmp, dir) = session_with(&ten_frames());
        let mut bytes = fs::read(dir.join(RAW_FILE)).unwrap();
        // drop frames 4 and 5
        bytes.drain(4 * 96..6 * 96);
        fs::write(dir.join(RAW_FILE), bytes).unwrap();
        let rep = integrity_check(&dir);
        assert!(
            rep.violations.iter().any(|v| matches!(
                v,
                Violation::Continuity {
                    expected_ticks: 240,
                    stored: 192,
                    ..
                }
            )),
            "{:?}",
            rep.violations
        );
    }

    #[test]
    fn recorded_gap_is_allowed() {
        let mut frames = ten_frames();
        frames.drain(4..6);
        let (_tmp, dir) = session_with(&frames);
        let rep = integrity_check(&dir);
        assert!(rep.is_clean(), "{:?}", rep.violations);
    }

    #[test]
    fn unsorted_annotations_reported() {
        let (_tmp, dir) = session_with(&ten_frames());
        let mut f = OpenOptions::new()
            .append(true)
            .open(dir.join(ANNOTATIONS_FILE))
            .unwrap();
        writeln!(f, r#"{{"t_us":500,"label":"a","source":"operator"}}"#).unwrap();
        writeln!(f, r#"{{"t_us":100,"label":"b","source":"operator"}}"#).unwrap();
        writeln!(f, "not json").unwrap();
        let rep = integrity_check(&dir);
        assert!(rep.violations.iter().any(|v| matches!(
            v,
            Violation::AnnotationsUnsorted {
                t_us: 100,
                previous_us: 500,
                ..
            }
        )));
        assert!(rep
            .violations
            .iter()
            .any(|v| matches!(v, Violation::AnnotationInvalid { line: 4, .. })));
    }

    #[test]
    fn csv_scaling_and_round_trip() {
        let frames = vec![frame(0, 0, vec![0, 1, -1, 8_388_607, -8_388_608, 123_456])];
        let (_tmp, dir) = session_with(&frames);
        let mut out = Vec::new();
        export_csv(&dir, None, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t_us,ch1_uV"));
        assert_eq!(lines.next(), Some("0,0"));
        let cfg = AfeConfig::default();
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "2000");
        let uv: f64 = row[1].parse().unwrap();
        assert!((uv - 3.934e-3).abs() < 1e-6, "{uv}");
        for (line, code) in text.lines().skip(1).zip(&frames[0].samples) {
            let uv: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
            assert_eq!(input_uv_to_code(uv, &cfg), *code);
        }
        assert!(!text.contains('\r'));
    }

    #[test]
    fn empty_range_is_header_only() {
        let (_tmp, dir) = session_with(&ten_frames());
        let mut out = Vec::new();
        export_csv(&dir, Some(5..5), &mut out).unwrap();
        assert_eq!(out, b"t_us,ch1_uV\n");
        assert!(export_csv(&dir, Some(0..241), &mut Vec::new()).is_err());
    }
}
