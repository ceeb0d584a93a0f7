//! Session analyses for the three protocols: alpha power with eyes closed
//! versus open, EMG envelope while clenching versus at rest, and EOG
//! deflection direction during smooth pursuit.
//!
//! Every contrast is a ratio of homogeneous quantities or a sign test, so
//! results do not depend on the overall gain of the recording.

mod contrasts;
mod epoching;
mod report;

use thiserror::Error;

use crate::dsp::DspError;
use crate::session::SessionError;
use crate::sim::SimError;

pub use contrasts::{
    alpha_contrast, clench_contrast, ground_truth, pursuit_report, AlphaReport, AnalysisOptions,
    ClenchReport, EpochMetrics, EventMatch, PursuitReport, TruthEvent, ALPHA_PASS_RATIO,
    CLENCH_PASS_RATIO, DEFLECTION_MIN_S, DEFLECTION_THRESHOLD_FRACTION, EEG_BAND, EMG_BAND,
    ENVELOPE_WINDOW_S, EOG_LOWPASS_HZ, MATCH_WINDOW_S, PURSUIT_PASS_ACCURACY, WELCH_OVERLAP,
    WELCH_WINDOW_S,
};
pub use epoching::{canonical_label, epoch_by_annotation, EpochSpan, Epoching, RESERVED_LABELS};
pub use report::{write_report, Plot, Table, Trace, MAX_PLOT_POINTS};

#[derive(Debug, Error)]
pub enum AnalysisError {
    /// The session does not contain what the analysis needs.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("report I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("report JSON: {0}")]
    Json(#[from] serde_json::Error),
}
