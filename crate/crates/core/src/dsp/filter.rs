//! Second-order IIR sections and the filter designs built from them.
//!
//! Coefficient formulas follow the usual bilinear-transform cookbook forms
//! with frequency pre-warping, so notch centres and Butterworth corners land
//! exactly where requested.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::DspError;

/// Butterworth section Qs for a 4th-order response.
const BUTTER4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_6];

/// Normalized biquad coefficients (`a0 == 1`).
///
/// Transfer function `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadCoeffs {
    /// Both poles strictly inside the unit circle (stability triangle).
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    /// Magnitude of the frequency response at `freq` Hz.
    pub fn magnitude_at(&self, freq: f64, sps: f64) -> f64 {
        let w = 2.0 * PI * freq / sps;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num_re = self.b0 + self.b1 * c1 + self.b2 * c2;
        let num_im = self.b1 * s1 + self.b2 * s2;
        let den_re = 1.0 + self.a1 * c1 + self.a2 * c2;
        let den_im = self.a1 * s1 + self.a2 * s2;
        (num_re.hypot(num_im)) / (den_re.hypot(den_im))
    }

    fn from_raw(b: [f64; 3], a: [f64; 3]) -> Self {
        Self {
            b0: b[0] / a[0],
            b1: b[1] / a[0],
            b2: b[2] / a[0],
            a1: a[1] / a[0],
            a2: a[2] / a[0],
        }
    }
}

/// A single biquad with transposed direct-form II state.
#[derive(Debug, Clone)]
pub struct Biquad {
    coeffs: BiquadCoeffs,
    s1: f64,
    s2: f64,
}

impl Biquad {
    pub fn new(coeffs: BiquadCoeffs) -> Self {
        Self {
            coeffs,
            s1: 0.0,
            s2: 0.0,
        }
    }

    pub fn coeffs(&self) -> &BiquadCoeffs {
        &self.coeffs
    }

    #[inline]
    pub fn process_sample(&mut self, x: f64) -> f64 {
        let c = &self.coeffs;
        let y = c.b0 * x + self.s1;
        self.s1 = c.b1 * x - c.a1 * y + self.s2;
        self.s2 = c.b2 * x - c.a2 * y;
        y
    }

    pub fn reset(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
    }
}

/// Cascade of biquads (second-order sections).
///
/// Holds per-stream state: use one instance per channel.
#[derive(Debug, Clone, Default)]
pub struct SosFilter {
    sections: Vec<Biquad>,
}

impl SosFilter {
    pub fn new(coeffs: impl IntoIterator<Item = BiquadCoeffs>) -> Self {
        Self {
            sections: coeffs.into_iter().map(Biquad::new).collect(),
        }
    }

    /// Identity filter with no sections.
    pub fn passthrough() -> Self {
        Self::default()
    }

    pub fn sections(&self) -> impl Iterator<Item = &BiquadCoeffs> {
        self.sections.iter().map(Biquad::coeffs)
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    /// Append the sections of `other` after this filter's sections.
    pub fn chain(mut self, other: SosFilter) -> Self {
        self.sections.extend(other.sections);
        self
    }

    #[inline]
    pub fn process_sample(&mut self, x: f64) -> f64 {
        self.sections
            .iter_mut()
            .fold(x, |acc, s| s.process_sample(acc))
    }

    pub fn process(&mut self, input: &[f64]) -> Vec<f64> {
        input.iter().map(|&x| self.process_sample(x)).collect()
    }

    pub fn process_in_place(&mut self, data: &mut [f64]) {
        for x in data {
            *x = self.process_sample(*x);
        }
    }

    pub fn reset(&mut self) {
        self.sections.iter_mut().for_each(Biquad::reset);
    }

    pub fn magnitude_at(&self, freq: f64, sps: f64) -> f64 {
        self.sections
            .iter()
            .map(|s| s.coeffs().magnitude_at(freq, sps))
            .product()
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(|s| s.coeffs().is_stable())
    }
}

fn check_freq(name: &'static str, f: f64, sps: f64) -> Result<(), DspError> {
    if !(sps > 0.0) || !sps.is_finite() {
        return Err(DspError::InvalidParameter(format!(
            "sample rate must be positive, got {sps}"
        )));
    }
    if !(f > 0.0 && f < sps / 2.0) {
        return Err(DspError::FrequencyOutOfRange {
            name,
            freq: f,
            nyquist: sps / 2.0,
        });
    }
    Ok(())
}

/// Notch at `f0` with quality factor `q` (bandwidth `f0 / q` between the
/// -3 dB points).
pub fn design_notch(f0: f64, q: f64, sps: f64) -> Result<BiquadCoeffs, DspError> {
    check_freq("f0", f0, sps)?;
    if !(q > 0.0) {
        return Err(DspError::InvalidParameter(format!(
            "notch q must be positive, got {q}"
        )));
    }
    let w0 = 2.0 * PI * f0 / sps;
    let alpha = w0.sin() / (2.0 * q);
    let cw = w0.cos();
    Ok(BiquadCoeffs::from_raw(
        [1.0, -2.0 * cw, 1.0],
        [1.0 + alpha, -2.0 * cw, 1.0 - alpha],
    ))
}

/// Second-order low-pass section with cutoff `fc` and quality `q`.
pub fn lowpass_section(fc: f64, q: f64, sps: f64) -> Result<BiquadCoeffs, DspError> {
    check_freq("cutoff", fc, sps)?;
    let w0 = 2.0 * PI * fc / sps;
    let alpha = w0.sin() / (2.0 * q);
    let cw = w0.cos();
    Ok(BiquadCoeffs::from_raw(
        [(1.0 - cw) / 2.0, 1.0 - cw, (1.0 - cw) / 2.0],
        [1.0 + alpha, -2.0 * cw, 1.0 - alpha],
    ))
}

/// Second-order high-pass section with cutoff `fc` and quality `q`.
pub fn highpass_section(fc: f64, q: f64, sps: f64) -> Result<BiquadCoeffs, DspError> {
    check_freq("cutoff", fc, sps)?;
    let w0 = 2.0 * PI * fc / sps;
    let alpha = w0.sin() / (2.0 * q);
    let cw = w0.cos();
    Ok(BiquadCoeffs::from_raw(
        [(1.0 + cw) / 2.0, -(1.0 + cw), (1.0 + cw) / 2.0],
        [1.0 + alpha, -2.0 * cw, 1.0 - alpha],
    ))
}

/// 4th-order Butterworth low-pass.
pub fn design_lowpass(fc: f64, sps: f64) -> Result<SosFilter, DspError> {
    let s = BUTTER4_Q
        .iter()
        .map(|&q| lowpass_section(fc, q, sps))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SosFilter::new(s))
}

/// 4th-order Butterworth high-pass.
pub fn design_highpass(fc: f64, sps: f64) -> Result<SosFilter, DspError> {
    let s = BUTTER4_Q
        .iter()
        .map(|&q| highpass_section(fc, q, sps))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SosFilter::new(s))
}

/// Band-pass built as a 4th-order Butterworth high-pass at `lo` followed by a
/// 4th-order Butterworth low-pass at `hi` (24 dB/octave skirts on both sides).
pub fn design_bandpass(lo: f64, hi: f64, sps: f64) -> Result<SosFilter, DspError> {
    check_freq("lo", lo, sps)?;
    check_freq("hi", hi, sps)?;
    if lo >= hi {
        return Err(DspError::InvalidBand { lo, hi });
    }
    Ok(design_highpass(lo, sps)?.chain(design_lowpass(hi, sps)?))
}
