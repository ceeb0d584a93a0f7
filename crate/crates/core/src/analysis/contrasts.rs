use serde::{Deserialize, Serialize};

use super::epoching::{epoch_by_annotation, EpochSpan, Epoching};
use super::report::{Plot, Table, Trace};
use super::AnalysisError;
use crate::dsp::{
    band_power, design_bandpass, design_lowpass, detect_deflections, median, rms_envelope,
    welch_psd, Deflection, ALPHA_BAND,
};
use crate::session::SessionReader;
use crate::sim::{GazeSide, Physiology, CLENCH, EYES_CLOSED, EYES_OPEN, REST};

pub const ALPHA_PASS_RATIO: f64 = 1.5;
pub const CLENCH_PASS_RATIO: f64 = 3.0;
pub const PURSUIT_PASS_ACCURACY: f64 = 0.9;
/// Largest onset difference at which a detection counts as a truth event.
pub const MATCH_WINDOW_S: f64 = 0.25;

pub const EEG_BAND: (f64, f64) = (1.0, 40.0);
pub const WELCH_WINDOW_S: f64 = 2.0;
pub const WELCH_OVERLAP: f64 = 0.5;
pub const EMG_BAND: (f64, f64) = (20.0, 150.0);
pub const ENVELOPE_WINDOW_S: f64 = 0.25;
pub const EOG_LOWPASS_HZ: f64 = 10.0;
pub const DEFLECTION_MIN_S: f64 = 0.2;
/// Detection threshold as a share of the 99th percentile of the absolute
/// deviation from the median.
pub const DEFLECTION_THRESHOLD_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    /// Index into the session's measured channels.
    pub channel: usize,
    /// Leading seconds ignored while the analysis filters settle.
    pub settle_s: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            channel: 0,
            settle_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub label: String,
    pub start_s: f64,
    pub duration_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_power_uv2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_power_uv2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rms_uv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<Deflection>>,
}

impl EpochMetrics {
    fn new(label: &str, start_s: f64, duration_s: f64) -> Self {
        Self {
            label: label.to_string(),
            start_s,
            duration_s,
            alpha_power_uv2: None,
            total_power_uv2: None,
            rms_uv: None,
            events: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaReport {
    pub session_id: String,
    pub channel: usize,
    pub open_uv2: f64,
    pub closed_uv2: f64,
    pub ratio: f64,
    pub threshold: f64,
    pub pass: bool,
    pub epochs: Vec<EpochMetrics>,
    pub unknown_labels: Vec<String>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub spectrum: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClenchReport {
    pub session_id: String,
    pub channel: usize,
    pub rest_rms_uv: f64,
    pub clench_rms_uv: f64,
    pub ratio: f64,
    pub threshold: f64,
    pub pass: bool,
    pub epochs: Vec<EpochMetrics>,
    pub unknown_labels: Vec<String>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub envelope: (Vec<f64>, Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub onset_s: f64,
    pub side: GazeSide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMatch {
    pub truth_onset_s: f64,
    pub side: GazeSide,
    pub detected_onset_s: Option<f64>,
    pub amplitude_uv: Option<f64>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PursuitReport {
    pub session_id: String,
    pub channel: usize,
    pub n_truth: usize,
    pub n_detected: usize,
    pub n_matched: usize,
    pub direction_accuracy: f64,
    pub mean_amplitude_left_uv: Option<f64>,
    pub mean_amplitude_right_uv: Option<f64>,
    pub opposite_signs: bool,
    pub threshold_uv: f64,
    pub accuracy_threshold: f64,
    pub pass: bool,
    pub matches: Vec<EventMatch>,
    pub detections: Vec<Deflection>,
    #[serde(skip)]
    pub trace: (Vec<f64>, Vec<f64>),
}

struct Loaded {
    session_id: String,
    sps: f64,
    x: Vec<f64>,
    epoching: Epoching,
    settle: u64,
}

fn load(
    reader: &SessionReader,
    opts: &AnalysisOptions,
    labels: &[&str],
) -> Result<Loaded, AnalysisError> {
    let meta = reader.meta();
    if opts.channel >= reader.n_channels() {
        return Err(AnalysisError::Protocol(format!(
            "channel {} requested from a {}-channel session",
            opts.channel,
            reader.n_channels()
        )));
    }
    Ok(Loaded {
        session_id: meta.session_id.clone(),
        sps: reader.sps(),
        x: reader.channel_uv(opts.channel)?,
        epoching: epoch_by_annotation(meta, reader.annotations(), labels),
        settle: (opts.settle_s.max(0.0) * reader.sps()).round() as u64,
    })
}

/// Spans clipped to the settled part of the record; spans shorter than
/// `min_len` are skipped with a warning.
fn usable<'a>(
    l: &'a Loaded,
    label: &'a str,
    min_len: u64,
    warnings: &'a mut Vec<String>,
) -> Vec<EpochSpan> {
    l.epoching
        .with_label(label)
        .filter_map(|e| {
            let start = e.start.max(l.settle);
            if e.end < start + min_len {
                warnings.push(format!(
                    "{} epoch at {:.3} s too short to analyse",
                    e.label,
                    e.start as f64 / l.sps
                ));
                None
            } else {
                Some(EpochSpan {
                    label: e.label.clone(),
                    start,
                    end: e.end,
                })
            }
        })
        .collect()
}

fn weighted_mean(values: &[(f64, f64)]) -> f64 {
    let w: f64 = values.iter().map(|(_, w)| w).sum();
    values.iter().map(|(v, w)| v * w).sum::<f64>() / w
}

fn missing(label: &str) -> AnalysisError {
    AnalysisError::Protocol(format!("session has no usable {label} epoch"))
}

/// Eyes-closed over eyes-open alpha band power.
pub fn alpha_contrast(
    reader: &SessionReader,
    opts: &AnalysisOptions,
) -> Result<AlphaReport, AnalysisError> {
    let l = load(reader, opts, &[EYES_OPEN, EYES_CLOSED])?;
    let mut warnings = l.epoching.warnings.clone();
    let nyq_cap = EEG_BAND.1.min(0.45 * l.sps);
    let y = design_bandpass(EEG_BAND.0, nyq_cap, l.sps)?.process(&l.x);
    let min_len = (WELCH_WINDOW_S * l.sps).round() as u64;

    let mut epochs = Vec::new();
    let mut per_condition = Vec::new();
    let mut spectra = Vec::new();
    for label in [EYES_OPEN, EYES_CLOSED] {
        let spans = usable(&l, label, min_len, &mut warnings);
        if spans.is_empty() {
            return Err(missing(label));
        }
        let mut powers = Vec::new();
        let mut avg: Option<(Vec<f64>, Vec<f64>)> = None;
        for s in &spans {
            let psd = welch_psd(&y[s.range()], l.sps, WELCH_WINDOW_S, WELCH_OVERLAP)?;
            let alpha = band_power(&psd, ALPHA_BAND.0, ALPHA_BAND.1)?;
            let total = band_power(&psd, EEG_BAND.0, nyq_cap)?;
            let dur = s.len() as f64 / l.sps;
            powers.push((alpha, dur));
            let entry = avg.get_or_insert_with(|| (psd.freqs.clone(), vec![0.0; psd.freqs.len()]));
            for (a, p) in entry.1.iter_mut().zip(&psd.power) {
                *a += p * dur;
            }
            let mut m = EpochMetrics::new(label, s.start as f64 / l.sps, dur);
            m.alpha_power_uv2 = Some(alpha);
            m.total_power_uv2 = Some(total);
            epochs.push(m);
        }
        let total_dur: f64 = powers.iter().map(|(_, w)| w).sum();
        let (freqs, mut power) = avg.expect("at least one span");
        power.iter_mut().for_each(|p| *p /= total_dur);
        spectra.push((freqs, power));
        per_condition.push(weighted_mean(&powers));
    }
    epochs.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let (open, closed) = (per_condition[0], per_condition[1]);
    let ratio = closed / open;
    let (freqs, open_psd) = spectra.swap_remove(0);
    let closed_psd = spectra.swap_remove(0).1;
    Ok(AlphaReport {
        session_id: l.session_id,
        channel: opts.channel,
        open_uv2: open,
        closed_uv2: closed,
        ratio,
        threshold: ALPHA_PASS_RATIO,
        pass: ratio > ALPHA_PASS_RATIO,
        epochs,
        unknown_labels: l.epoching.unknown_labels,
        warnings,
        spectrum: Some((freqs, open_psd, closed_psd)),
    })
}

/// Clench over rest mean RMS envelope of the EMG band.
pub fn clench_contrast(
    reader: &SessionReader,
    opts: &AnalysisOptions,
) -> Result<ClenchReport, AnalysisError> {
    let l = load(reader, opts, &[REST, CLENCH])?;
    let mut warnings = l.epoching.warnings.clone();
    let hi = EMG_BAND.1.min(0.45 * l.sps);
    let y = design_bandpass(EMG_BAND.0, hi, l.sps)?.process(&l.x);
    let min_len = (ENVELOPE_WINDOW_S * l.sps).round() as u64;

    let mut epochs = Vec::new();
    let mut per_condition = Vec::new();
    for label in [REST, CLENCH] {
        let spans = usable(&l, label, min_len, &mut warnings);
        if spans.is_empty() {
            return Err(missing(label));
        }
        let mut values = Vec::new();
        for s in &spans {
            let env = rms_envelope(&y[s.range()], ENVELOPE_WINDOW_S, l.sps)?;
            let mean = env.iter().sum::<f64>() / env.len() as f64;
            let dur = s.len() as f64 / l.sps;
            values.push((mean, dur));
            let mut m = EpochMetrics::new(label, s.start as f64 / l.sps, dur);
            m.rms_uv = Some(mean);
            epochs.push(m);
        }
        per_condition.push(weighted_mean(&values));
    }
    epochs.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let (rest, clench) = (per_condition[0], per_condition[1]);
    let ratio = clench / rest;

    let settled = &y[(l.settle as usize).min(y.len())..];
    let envelope = match rms_envelope(settled, ENVELOPE_WINDOW_S, l.sps) {
        Ok(env) => {
            let t0 = l.settle as f64 / l.sps;
            let t = (0..env.len())
                .map(|k| t0 + crate::dsp::envelope_time(k, ENVELOPE_WINDOW_S, l.sps))
                .collect();
            (t, env)
        }
        Err(_) => (Vec::new(), Vec::new()),
    };
    Ok(ClenchReport {
        session_id: l.session_id,
        channel: opts.channel,
        rest_rms_uv: rest,
        clench_rms_uv: clench,
        ratio,
        threshold: CLENCH_PASS_RATIO,
        pass: ratio > CLENCH_PASS_RATIO,
        epochs,
        unknown_labels: l.epoching.unknown_labels,
        warnings,
        envelope,
    })
}

/// Truth events for a session: pursuit annotations if there are any,
/// otherwise the sweeps of the scenario the session was simulated from.
pub fn ground_truth(reader: &SessionReader) -> Result<Vec<TruthEvent>, AnalysisError> {
    let meta = reader.meta();
    let from_annotations: Vec<TruthEvent> = reader
        .annotations()
        .iter()
        .filter_map(|a| {
            GazeSide::from_label(&a.label).map(|side| TruthEvent {
                onset_s: a.t_us as f64 / 1e6,
                side,
            })
        })
        .collect();
    if !from_annotations.is_empty() {
        return Ok(from_annotations);
    }
    if let Some(s) = &meta.scenario {
        if let Physiology::Eog { .. } = &s.physiology {
            let r = s.physiology.render(meta.sps as f64)?;
            return Ok(r
                .truth
                .iter()
                .map(|e| TruthEvent {
                    onset_s: e.onset_s,
                    side: e.side,
                })
                .collect());
        }
    }
    Ok(Vec::new())
}

fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    let k = ((q * (v.len() - 1) as f64).round() as usize).min(v.len() - 1);
    *v.select_nth_unstable_by(k, f64::total_cmp).1
}

/// Detected horizontal deflections scored against `truth`.
pub fn pursuit_report(
    reader: &SessionReader,
    truth: &[TruthEvent],
    opts: &AnalysisOptions,
) -> Result<PursuitReport, AnalysisError> {
    let l = load(reader, opts, &[])?;
    let meta = reader.meta();
    let y = design_lowpass(EOG_LOWPASS_HZ, l.sps)?.process(&l.x);
    let base = median(&y).unwrap_or(0.0);
    let dev: Vec<f64> = y.iter().map(|v| (v - base).abs()).collect();
    let threshold = DEFLECTION_THRESHOLD_FRACTION * percentile(&dev, 0.99);
    let mut detections = if threshold > 0.0 {
        detect_deflections(&y, l.sps, threshold, DEFLECTION_MIN_S)?
    } else {
        Vec::new()
    };
    for d in &mut detections {
        let idx = (d.onset_s * l.sps).round() as u64;
        d.onset_s = meta.time_of_us(idx) as f64 / 1e6;
    }
    if truth.is_empty() {
        return Err(AnalysisError::Protocol(if detections.is_empty() {
            "no pursuit events in either the recording or the ground truth".into()
        } else {
            "no ground truth to score detections against".into()
        }));
    }

    let mut used = vec![false; detections.len()];
    let mut matches = Vec::with_capacity(truth.len());
    for t in truth {
        let best = detections
            .iter()
            .enumerate()
            .filter(|(i, d)| !used[*i] && (d.onset_s - t.onset_s).abs() <= MATCH_WINDOW_S)
            .min_by(|a, b| {
                (a.1.onset_s - t.onset_s)
                    .abs()
                    .total_cmp(&(b.1.onset_s - t.onset_s).abs())
            })
            .map(|(i, _)| i);
        matches.push(match best {
            Some(i) => {
                used[i] = true;
                let d = &detections[i];
                EventMatch {
                    truth_onset_s: t.onset_s,
                    side: t.side,
                    detected_onset_s: Some(d.onset_s),
                    amplitude_uv: Some(d.amplitude_uv),
                    correct: d.direction == t.side.direction(),
                }
            }
            None => EventMatch {
                truth_onset_s: t.onset_s,
                side: t.side,
                detected_onset_s: None,
                amplitude_uv: None,
                correct: false,
            },
        });
    }

    let side_mean = |side: GazeSide| {
        let a: Vec<f64> = matches
            .iter()
            .filter(|m| m.side == side)
            .filter_map(|m| m.amplitude_uv)
            .collect();
        (!a.is_empty()).then(|| a.iter().sum::<f64>() / a.len() as f64)
    };
    let left = side_mean(GazeSide::Left);
    let right = side_mean(GazeSide::Right);
    let opposite_signs = matches!((left, right), (Some(a), Some(b)) if a * b < 0.0);
    let n_matched = matches
        .iter()
        .filter(|m| m.detected_onset_s.is_some())
        .count();
    let accuracy = matches.iter().filter(|m| m.correct).count() as f64 / truth.len() as f64;
    let t: Vec<f64> = (0..y.len())
        .map(|i| meta.time_of_us(i as u64) as f64 / 1e6)
        .collect();
    Ok(PursuitReport {
        session_id: l.session_id,
        channel: opts.channel,
        n_truth: truth.len(),
        n_detected: detections.len(),
        n_matched,
        direction_accuracy: accuracy,
        mean_amplitude_left_uv: left,
        mean_amplitude_right_uv: right,
        opposite_signs,
        threshold_uv: threshold,
        accuracy_threshold: PURSUIT_PASS_ACCURACY,
        pass: accuracy >= PURSUIT_PASS_ACCURACY && opposite_signs,
        matches,
        detections,
        trace: (t, y),
    })
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn epoch_table(name: &str, epochs: &[EpochMetrics]) -> Table {
    Table {
        file_name: format!("{name}_epochs.csv"),
        header: vec![
            "label".into(),
            "start_s".into(),
            "duration_s".into(),
            "alpha_power_uV2".into(),
            "total_power_uV2".into(),
            "rms_uV".into(),
        ],
        rows: epochs
            .iter()
            .map(|e| {
                vec![
                    e.label.clone(),
                    fmt(e.start_s),
                    fmt(e.duration_s),
                    opt(e.alpha_power_uv2),
                    opt(e.total_power_uv2),
                    opt(e.rms_uv),
                ]
            })
            .collect(),
    }
}

impl AlphaReport {
    pub fn tables(&self) -> Vec<Table> {
        let mut t = vec![epoch_table("alpha", &self.epochs)];
        if let Some((f, open, closed)) = &self.spectrum {
            t.push(Table {
                file_name: "alpha_psd.csv".into(),
                header: vec![
                    "freq_hz".into(),
                    "open_uV2_per_Hz".into(),
                    "closed_uV2_per_Hz".into(),
                ],
                rows: f
                    .iter()
                    .zip(open)
                    .zip(closed)
                    .map(|((f, o), c)| vec![fmt(*f), fmt(*o), fmt(*c)])
                    .collect(),
            });
        }
        t
    }

    pub fn plot(&self) -> Option<Plot> {
        let (f, open, closed) = self.spectrum.as_ref()?;
        let keep: Vec<usize> = (0..f.len()).filter(|&i| f[i] <= EEG_BAND.1).collect();
        let pick = |v: &Vec<f64>| keep.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        Some(Plot {
            title: format!("Alpha power, closed/open ratio {:.2}", self.ratio),
            x_label: "Hz".into(),
            y_label: "uV^2/Hz (log)".into(),
            log_y: true,
            traces: vec![
                Trace::new(EYES_OPEN, pick(f), pick(open)),
                Trace::new(EYES_CLOSED, pick(f), pick(closed)),
            ],
            markers: vec![
                (ALPHA_BAND.0, "8 Hz".into()),
                (ALPHA_BAND.1, "12 Hz".into()),
            ],
        })
    }
}

impl ClenchReport {
    pub fn tables(&self) -> Vec<Table> {
        let (t, env) = &self.envelope;
        vec![
            epoch_table("emg", &self.epochs),
            Table {
                file_name: "emg_envelope.csv".into(),
                header: vec!["t_s".into(), "envelope_uV".into()],
                rows: t
                    .iter()
                    .zip(env)
                    .map(|(t, e)| vec![fmt(*t), fmt(*e)])
                    .collect(),
            },
        ]
    }

    pub fn plot(&self) -> Option<Plot> {
        let (t, env) = &self.envelope;
        if t.is_empty() {
            return None;
        }
        Some(Plot {
            title: format!("EMG envelope, clench/rest ratio {:.2}", self.ratio),
            x_label: "s".into(),
            y_label: "uV RMS".into(),
            log_y: false,
            traces: vec![Trace::new("envelope", t.clone(), env.clone())],
            markers: self
                .epochs
                .iter()
                .map(|e| (e.start_s, e.label.clone()))
                .collect(),
        })
    }
}

impl PursuitReport {
    pub fn tables(&self) -> Vec<Table> {
        vec![Table {
            file_name: "eog_events.csv".into(),
            header: vec![
                "truth_onset_s".into(),
                "side".into(),
                "detected_onset_s".into(),
                "amplitude_uV".into(),
                "correct".into(),
            ],
            rows: self
                .matches
                .iter()
                .map(|m| {
                    vec![
                        fmt(m.truth_onset_s),
                        m.side.label().to_string(),
                        opt(m.detected_onset_s),
                        opt(m.amplitude_uv),
                        m.correct.to_string(),
                    ]
                })
                .collect(),
        }]
    }

    pub fn plot(&self) -> Option<Plot> {
        let (t, y) = &self.trace;
        if t.is_empty() {
            return None;
        }
        Some(Plot {
            title: format!(
                "EOG deflections, direction accuracy {:.2}",
                self.direction_accuracy
            ),
            x_label: "s".into(),
            y_label: "uV".into(),
            log_y: false,
            traces: vec![Trace::new("horizontal EOG", t.clone(), y.clone())],
            markers: self
                .matches
                .iter()
                .map(|m| (m.truth_onset_s, m.side.label().to_string()))
                .collect(),
        })
    }
}
