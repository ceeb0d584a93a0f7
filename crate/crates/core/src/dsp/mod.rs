//! Signal processing: IIR filter design, Welch spectra, RMS envelopes and
//! deflection detection.
//!
//! Filter instances ([`SosFilter`]) carry per-stream state. The spectral and
//! envelope estimators are pure functions over slices.

mod deflection;
mod envelope;
mod filter;
mod spectral;

use thiserror::Error;

pub use deflection::{detect_deflections, median, Deflection, Direction};
pub use envelope::{envelope_time, rms_envelope};
pub use filter::{
    design_bandpass, design_highpass, design_lowpass, design_notch, highpass_section,
    lowpass_section, Biquad, BiquadCoeffs, SosFilter,
};
pub use spectral::{band_power, hann, tone_amplitude, welch_psd, PsdEstimate};

/// Conventional alpha band edges in Hz.
pub const ALPHA_BAND: (f64, f64) = (8.0, 12.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("{name} = {freq} Hz must lie strictly between 0 and Nyquist ({nyquist} Hz)")]
    FrequencyOutOfRange {
        name: &'static str,
        freq: f64,
        nyquist: f64,
    },
    #[error("invalid band [{lo}, {hi}] Hz")]
    InvalidBand { lo: f64, hi: f64 },
    #[error("series too short: need {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("{0}")]
    InvalidParameter(String),
}
