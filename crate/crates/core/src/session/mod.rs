//! On-disk sessions: `meta.json`, `raw.bin` and `annotations.jsonl` in one
//! directory.
//!
//! `raw.bin` holds every tick as `n_channels` sign-extended 32-bit
//! little-endian codes in channel order. `meta.json` is rewritten by rename
//! after each append and its `samples_per_channel` is the committed prefix
//! readers should trust.

mod reader;
mod record;

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::afe::{AfeConfig, Montage};
use crate::sim::{Scenario, SimError};
use crate::wire::{Frame, StreamTracker, WireError};

pub use reader::{
    export_csv, integrity_check, read_annotations, IntegrityReport, SessionReader, Violation,
};
pub use record::{record_scenario, RecordSummary};

pub const META_FILE: &str = "meta.json";
pub const RAW_FILE: &str = "raw.bin";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const FORMAT_VERSION: u32 = 1;
pub const BYTES_PER_CODE: usize = 4;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session I/O: {0}")]
    Io(#[from] io::Error),
    #[error("session JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("a session already exists at {0}")]
    Collision(PathBuf),
    #[error("invalid session metadata: {0}")]
    InvalidMeta(String),
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("frame does not fit this session: {0}")]
    FrameMismatch(String),
    #[error("range {start}..{end} outside a session of {len} samples")]
    OutOfRange { start: u64, end: u64, len: u64 },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionTransport {
    Serial,
    Ble,
    Simulated,
}

impl SessionTransport {
    /// Per-channel rate ceiling. The simulator honours the serial limit.
    pub fn max_sps(self) -> u32 {
        match self {
            SessionTransport::Serial | SessionTransport::Simulated => 19_200,
            SessionTransport::Ble => 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationSource {
    Operator,
    ProtocolScript,
}

/// One line of `annotations.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    /// Microseconds since the first recorded tick.
    pub t_us: u64,
    pub label: String,
    pub source: AnnotationSource,
}

impl Annotation {
    pub fn new(t_us: u64, label: impl Into<String>, source: AnnotationSource) -> Self {
        Self {
            t_us,
            label: label.into(),
            source,
        }
    }
}

/// A sequence discontinuity seen while appending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapRecord {
    /// Index of the first sample after the gap.
    pub at_sample: u64,
    pub expected_seq: u16,
    pub received_seq: u16,
    /// Ticks missing according to the frame timestamps.
    pub lost_samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub format_version: u32,
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub afe: AfeConfig,
    pub montage: Montage,
    pub sps: u32,
    pub transport: SessionTransport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    pub n_channels: usize,
    pub channel_mask: u8,
    #[serde(default)]
    pub samples_per_channel: u64,
    /// Raw timestamp of the first frame.
    #[serde(default)]
    pub first_ts_us: Option<u32>,
    /// Time of the last tick relative to the first, unwrapped.
    #[serde(default)]
    pub last_tick_us: Option<u64>,
    #[serde(default)]
    pub gaps: Vec<GapRecord>,
}

impl SessionMeta {
    /// Fresh metadata with a generated id. `sps` is taken from `afe`.
    pub fn new(afe: AfeConfig, montage: Montage, transport: SessionTransport) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            session_id: new_session_id(),
            created_at: Utc::now(),
            sps: afe.sps,
            n_channels: montage.n_channels(),
            channel_mask: montage.channel_mask(),
            afe,
            montage,
            transport,
            scenario: None,
            samples_per_channel: 0,
            first_ts_us: None,
            last_tick_us: None,
            gaps: Vec::new(),
        }
    }

    pub fn with_scenario(mut self, scenario: Scenario) -> Self {
        self.scenario = Some(scenario);
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.session_id = id.into();
        self
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: String| Err(SessionError::InvalidMeta(m));
        if self.session_id.is_empty()
            || self
                .session_id
                .chars()
                .any(|c| !(c.is_ascii_alphanumeric() || c == '-' || c == '_'))
        {
            return bad(format!("session id {:?}", self.session_id));
        }
        self.afe
            .validate()
            .map_err(|e| SessionError::InvalidMeta(e.to_string()))?;
        if self.sps != self.afe.sps {
            return bad(format!(
                "sps {} differs from afe.sps {}",
                self.sps, self.afe.sps
            ));
        }
        let max = self.transport.max_sps();
        if self.sps == 0 || self.sps > max {
            return bad(format!(
                "{} SPS exceeds the {:?} transport limit of {max} SPS",
                self.sps, self.transport
            ));
        }
        if self.n_channels != self.montage.n_channels()
            || self.channel_mask != self.montage.channel_mask()
        {
            return bad("channel count or mask disagrees with the montage".into());
        }
        Ok(())
    }

    /// Front-end configuration seen by channel `k`: direct inputs bypass the
    /// in-amp.
    pub fn channel_afe(&self, k: usize) -> AfeConfig {
        let mut cfg = self.afe.clone();
        if let Some(c) = self.montage.measurable().get(k) {
            if !c.role.has_inamp() {
                cfg.gain = 1.0;
            }
        }
        cfg
    }

    pub fn lost_before(&self, index: u64) -> u64 {
        self.gaps
            .iter()
            .filter(|g| g.at_sample <= index)
            .map(|g| g.lost_samples)
            .sum()
    }

    /// Converter tick of stored sample `index`, counting lost ticks.
    pub fn tick_of(&self, index: u64) -> u64 {
        index + self.lost_before(index)
    }

    pub fn time_of_us(&self, index: u64) -> u64 {
        self.tick_of(index) * 1_000_000 / self.sps as u64
    }

    /// Stored sample index at or after `t_us`. Times inside a gap map to the
    /// first sample after it.
    pub fn index_at_us(&self, t_us: u64) -> u64 {
        let mut tick = (t_us as u128 * self.sps as u128).div_ceil(1_000_000) as u64;
        let mut lost = 0;
        for g in &self.gaps {
            let gap_tick = g.at_sample + lost;
            if tick < gap_tick {
                break;
            }
            lost += g.lost_samples;
            tick = tick.max(gap_tick + g.lost_samples);
        }
        (tick - lost).min(self.samples_per_channel)
    }

    pub fn duration_s(&self) -> f64 {
        (self.samples_per_channel + self.lost_before(u64::MAX)) as f64 / self.sps as f64
    }
}

/// `YYYYMMDDTHHMMSSZ-xxxxxxxx` with a random suffix.
pub fn new_session_id() -> String {
    let suffix: u32 = rand::rng().random();
    format!("{}-{suffix:08x}", Utc::now().format("%Y%m%dT%H%M%SZ"))
}

pub(crate) fn write_meta(dir: &Path, meta: &SessionMeta) -> Result<(), SessionError> {
    let tmp = dir.join(".meta.json.tmp");
    let mut f = File::create(&tmp)?;
    serde_json::to_writer_pretty(&mut f, meta)?;
    f.write_all(b"\n")?;
    f.sync_data()?;
    fs::rename(tmp, dir.join(META_FILE))?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<SessionMeta, SessionError> {
    let f = File::open(dir.join(META_FILE))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

/// Timestamp unwrapping state for the stream tail.
#[derive(Debug, Clone, Copy)]
struct Tail {
    raw_ts: u32,
    rel_us: u64,
    count: u64,
}

/// Append-only writer for one session directory.
pub struct Session {
    dir: PathBuf,
    meta: SessionMeta,
    raw: File,
    annotations: File,
    tracker: StreamTracker,
    tail: Option<Tail>,
    last_annotation_us: Option<u64>,
    buf: Vec<u8>,
}

impl Session {
    /// Creates `dir` (if needed) with empty `raw.bin` and `annotations.jsonl`.
    /// Fails if `dir` already holds a session.
    pub fn create(dir: impl AsRef<Path>, meta: SessionMeta) -> Result<Self, SessionError> {
        let dir = dir.as_ref().to_path_buf();
        meta.validate()?;
        if dir.join(META_FILE).exists() {
            return Err(SessionError::Collision(dir));
        }
        fs::create_dir_all(&dir)?;
        let open_new = |name: &str| {
            OpenOptions::new()
                .create_new(true)
                .append(true)
                .read(true)
                .open(dir.join(name))
        };
        let raw = open_new(RAW_FILE).map_err(|e| collision_or(e, &dir))?;
        let annotations = open_new(ANNOTATIONS_FILE).map_err(|e| collision_or(e, &dir))?;
        let mut meta = meta;
        meta.samples_per_channel = 0;
        meta.first_ts_us = None;
        meta.last_tick_us = None;
        meta.gaps.clear();
        write_meta(&dir, &meta)?;
        log::info!("created session {} at {}", meta.session_id, dir.display());
        Ok(Self {
            dir,
            meta,
            raw,
            annotations,
            tracker: StreamTracker::new(),
            tail: None,
            last_annotation_us: None,
            buf: Vec::new(),
        })
    }

    /// Creates `root/<session_id>`.
    pub fn create_in(root: impl AsRef<Path>, meta: SessionMeta) -> Result<Self, SessionError> {
        let dir = root.as_ref().join(&meta.session_id);
        Self::create(dir, meta)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &SessionMeta {
        &self.meta
    }

    pub fn samples_per_channel(&self) -> u64 {
        self.meta.samples_per_channel
    }

    /// Relative time of the next tick the session expects.
    pub fn next_tick_us(&self) -> u64 {
        self.tail.map_or(0, |t| {
            t.rel_us + (t.count as f64 * 1e6 / self.meta.sps as f64).round() as u64
        })
    }

    /// Converts a raw 32-bit stream timestamp to session-relative time.
    pub fn relative_us(&self, raw_ts: u32) -> Option<u64> {
        self.tail
            .map(|t| t.rel_us + raw_ts.wrapping_sub(t.raw_ts) as u64)
            .or(self.meta.first_ts_us.map(|f| raw_ts.wrapping_sub(f) as u64))
    }

    /// Appends whole frames. All samples of the batch become visible together
    /// or, on a storage error, none do. Sequence gaps are recorded in the
    /// metadata, not rejected. Returns the number of frames written.
    pub fn append_frames(&mut self, frames: &[Frame]) -> Result<usize, SessionError> {
        if frames.is_empty() {
            return Ok(0);
        }
        for f in frames {
            f.validate()?;
            if f.channel_mask != self.meta.channel_mask {
                return Err(SessionError::FrameMismatch(format!(
                    "channel mask {:#04x}, session has {:#04x}",
                    f.channel_mask, self.meta.channel_mask
                )));
            }
        }

        let mut meta = self.meta.clone();
        let mut tracker = self.tracker.clone();
        let mut tail = self.tail;
        let period_us = 1e6 / meta.sps as f64;
        self.buf.clear();
        for f in frames {
            let rel_us = match tail {
                None => {
                    meta.first_ts_us = Some(f.timestamp_us);
                    0
                }
                Some(t) => t.rel_us + f.timestamp_us.wrapping_sub(t.raw_ts) as u64,
            };
            if let (Some(gap), Some(t)) = (tracker.observe(f), tail) {
                let expected_us = t.rel_us as f64 + t.count as f64 * period_us;
                let lost = ((rel_us as f64 - expected_us) / period_us).round().max(0.0) as u64;
                log::warn!(
                    "session {}: seq {} expected {}, {lost} samples lost",
                    meta.session_id,
                    gap.received_seq,
                    gap.expected_seq
                );
                meta.gaps.push(GapRecord {
                    at_sample: meta.samples_per_channel,
                    expected_seq: gap.expected_seq,
                    received_seq: gap.received_seq,
                    lost_samples: lost,
                });
            }
            for &s in &f.samples {
                self.buf.extend_from_slice(&s.to_le_bytes());
            }
            let count = f.sample_count() as u64;
            meta.samples_per_channel += count;
            meta.last_tick_us = Some(rel_us + ((count - 1) as f64 * period_us).round() as u64);
            tail = Some(Tail {
                raw_ts: f.timestamp_us,
                rel_us,
                count,
            });
        }

        let before = self.raw.metadata()?.len();
        if let Err(e) = self.raw.write_all(&self.buf) {
            self.raw.set_len(before)?;
            return Err(e.into());
        }
        if let Err(e) = write_meta(&self.dir, &meta) {
            self.raw.set_len(before)?;
            return Err(e);
        }
        self.meta = meta;
        self.tracker = tracker;
        self.tail = tail;
        Ok(frames.len())
    }

    /// Appends an annotation. Times must not go backwards.
    pub fn annotate(&mut self, annotation: &Annotation) -> Result<(), SessionError> {
        if annotation.label.trim().is_empty() {
            return Err(SessionError::InvalidAnnotation("empty label".into()));
        }
        if let Some(last) = self.last_annotation_us {
            if annotation.t_us < last {
                return Err(SessionError::InvalidAnnotation(format!(
                    "t_us {} precedes the previous annotation at {last}",
                    annotation.t_us
                )));
            }
        }
        let mut line = serde_json::to_vec(annotation)?;
        line.push(b'\n');
        self.annotations.write_all(&line)?;
        self.last_annotation_us = Some(annotation.t_us);
        Ok(())
    }

    pub fn last_annotation_us(&self) -> Option<u64> {
        self.last_annotation_us
    }

    pub fn set_scenario(&mut self, scenario: Scenario) -> Result<(), SessionError> {
        self.meta.scenario = Some(scenario);
        write_meta(&self.dir, &self.meta)
    }

    pub fn sync(&mut self) -> Result<(), SessionError> {
        self.raw.sync_data()?;
        self.annotations.sync_data()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<SessionMeta, SessionError> {
        self.sync()?;
        log::info!(
            "closed session {}: {} samples per channel, {} gaps",
            self.meta.session_id,
            self.meta.samples_per_channel,
            self.meta.gaps.len()
        );
        Ok(self.meta)
    }
}

fn collision_or(e: io::Error, dir: &Path) -> SessionError {
    if e.kind() == io::ErrorKind::AlreadyExists {
        SessionError::Collision(dir.to_path_buf())
    } else {
        e.into()
    }
}

pub(crate) fn parse_annotations(reader: impl BufRead) -> Vec<(usize, Result<Annotation, String>)> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some((i + 1, serde_json::from_str(&l).map_err(|e| e.to_string()))),
            Err(e) => Some((i + 1, Err(e.to_string()))),
        })
        .collect()
}

/// RFC 3339 with a `Z` suffix, as written in `meta.json`.
pub fn format_utc(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}
