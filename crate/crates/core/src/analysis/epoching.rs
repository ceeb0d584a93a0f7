use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::session::{Annotation, SessionMeta};
use crate::sim::{CLENCH, REST};

/// Service-written records that bracket running intervals.
pub const RESERVED_LABELS: [&str; 2] = ["start", "stop"];

/// Operator labels that stand for a condition.
pub fn canonical_label(label: &str) -> &str {
    match label {
        "clench-start" => CLENCH,
        "clench-end" => REST,
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSpan {
    pub label: String,
    /// Stored sample indices.
    pub start: u64,
    pub end: u64,
}

impl EpochSpan {
    pub fn range(&self) -> Range<usize> {
        self.start as usize..self.end as usize
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Epoching {
    pub epochs: Vec<EpochSpan>,
    /// Labels outside the requested set, in order of first appearance.
    pub unknown_labels: Vec<String>,
    pub warnings: Vec<String>,
}

impl Epoching {
    pub fn with_label<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a EpochSpan> + 'a {
        self.epochs.iter().filter(move |e| e.label == label)
    }
}

/// Splits a session at its annotations. An annotation whose label is in
/// `label_set` opens an epoch; the next annotation of any kind, or the end of
/// the session, closes it. Zero-length epochs are dropped with a warning.
pub fn epoch_by_annotation(
    meta: &SessionMeta,
    annotations: &[Annotation],
    label_set: &[&str],
) -> Epoching {
    let mut out = Epoching::default();
    let end_of_session = meta.samples_per_channel;
    for (k, a) in annotations.iter().enumerate() {
        let label = canonical_label(&a.label);
        if !label_set.contains(&label) {
            if !RESERVED_LABELS.contains(&label) && !out.unknown_labels.iter().any(|u| u == label) {
                out.unknown_labels.push(label.to_string());
            }
            continue;
        }
        let start = meta.index_at_us(a.t_us);
        let end = annotations
            .get(k + 1)
            .map_or(end_of_session, |next| meta.index_at_us(next.t_us))
            .max(start);
        if end == start {
            let msg = format!("zero-length {label} epoch at {} us dropped", a.t_us);
            log::warn!("{msg}");
            out.warnings.push(msg);
            continue;
        }
        out.epochs.push(EpochSpan {
            label: label.to_string(),
            start,
            end,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::afe::{AfeConfig, Montage};
    use crate::session::{AnnotationSource, SessionTransport};
    use proptest::prelude::*;

    fn meta(seconds: u64) -> SessionMeta {
        let mut m = SessionMeta::new(
            AfeConfig::default(),
            Montage::ear_study(),
            SessionTransport::Simulated,
        );
        m.samples_per_channel = seconds * 500;
        m.last_tick_us = Some(seconds * 1_000_000 - 2000);
        m
    }

    fn ann(t_s: f64, label: &str) -> Annotation {
        Annotation::new((t_s * 1e6) as u64, label, AnnotationSource::Operator)
    }

    #[test]
    fn open_closed_timeline() {
        let e = epoch_by_annotation(
            &meta(240),
            &[ann(0.0, "eyes-open"), ann(120.0, "eyes-closed")],
            &["eyes-open", "eyes-closed"],
        );
        assert_eq!(
            e.epochs,
            vec![
                EpochSpan {
                    label: "eyes-open".into(),
                    start: 0,
                    end: 60_000
                },
                EpochSpan {
                    label: "eyes-closed".into(),
                    start: 60_000,
                    end: 120_000
                },
            ]
        );
        assert!(e.unknown_labels.is_empty() && e.warnings.is_empty());
    }

    #[test]
    fn empty_and_unknown() {
        assert!(epoch_by_annotation(&meta(10), &[], &["rest"])
            .epochs
            .is_empty());
        let e = epoch_by_annotation(
            &meta(10),
            &[
                ann(0.0, "start"),
                ann(1.0, "rest"),
                ann(3.0, "blink"),
                ann(5.0, "clench-start"),
                ann(7.0, "clench-end"),
                ann(9.0, "stop"),
            ],
            &["rest", "clench"],
        );
        assert_eq!(e.unknown_labels, vec!["blink".to_string()]);
        let spans: Vec<(&str, u64, u64)> = e
            .epochs
            .iter()
            .map(|s| (s.label.as_str(), s.start, s.end))
            .collect();
        assert_eq!(
            spans,
            vec![
                ("rest", 500, 1500),
                ("clench", 2500, 3500),
                ("rest", 3500, 4500)
            ]
        );
    }

    #[test]
    fn same_timestamp_warns() {
        let e = epoch_by_annotation(
            &meta(10),
            &[ann(2.0, "rest"), ann(2.0, "clench")],
            &["rest", "clench"],
        );
        assert_eq!(e.epochs.len(), 1);
        assert_eq!(e.warnings.len(), 1);
        assert_eq!(e.epochs[0].label, "clench");
    }

    proptest! {
        #[test]
        fn epochs_partition(mut times in proptest::collection::vec(0u64..20_000_000, 0..30),
                            labels in proptest::collection::vec(0usize..3, 30)) {
            times.sort_unstable();
            let names = ["rest", "clench", "other"];
            let anns: Vec<Annotation> = times
                .iter()
                .zip(&labels)
                .map(|(&t, &l)| Annotation::new(t, names[l], AnnotationSource::Operator))
                .collect();
            let m = meta(20);
            let e = epoch_by_annotation(&m, &anns, &["rest", "clench"]);
            for w in e.epochs.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            for s in &e.epochs {
                prop_assert!(s.start < s.end && s.end <= m.samples_per_channel);
                prop_assert!(s.start >= m.index_at_us(times[0]));
            }
        }
    }
}
