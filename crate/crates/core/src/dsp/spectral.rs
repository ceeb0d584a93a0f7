//! Welch power spectral density and band integration.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::DspError;

/// One-sided power spectral density in (input unit)^2 / Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    /// Bin centres, ascending from 0 to Nyquist.
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub window_s: f64,
    pub overlap: f64,
}

impl PsdEstimate {
    pub fn resolution(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }

    pub fn nyquist(&self) -> f64 {
        self.freqs.last().copied().unwrap_or(0.0)
    }

    /// Power integrated over the whole estimate.
    pub fn total_power(&self) -> f64 {
        band_power(self, 0.0, self.nyquist()).unwrap_or(0.0)
    }
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Welch estimate: Hann-windowed, mean-detrended segments of `window_s`
/// seconds, advancing by `window_s * (1 - overlap)`, periodograms averaged.
pub fn welch_psd(
    series: &[f64],
    sps: f64,
    window_s: f64,
    overlap: f64,
) -> Result<PsdEstimate, DspError> {
    if !(sps > 0.0) || !(window_s > 0.0) {
        return Err(DspError::InvalidParameter(format!(
            "sample rate and window must be positive (sps {sps}, window {window_s})"
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(DspError::InvalidParameter(format!(
            "overlap must be in [0, 1), got {overlap}"
        )));
    }
    let nseg = (window_s * sps).round() as usize;
    if nseg < 2 || series.len() < nseg {
        return Err(DspError::TooShort {
            needed: nseg.max(2),
            got: series.len(),
        });
    }
    let step = (((1.0 - overlap) * nseg as f64).round() as usize).max(1);

    let window = hann(nseg);
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nseg);
    let nbins = nseg / 2 + 1;
    let mut acc = vec![0.0; nbins];
    let mut buf = vec![Complex::new(0.0, 0.0); nseg];
    let mut count = 0usize;

    let mut start = 0;
    while start + nseg <= series.len() {
        let seg = &series[start..start + nseg];
        let mean = seg.iter().sum::<f64>() / nseg as f64;
        for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += step;
    }

    let scale = 1.0 / (sps * wss * count as f64);
    let power = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let one_sided = if k == 0 || (nseg.is_multiple_of(2) && k == nbins - 1) {
                1.0
            } else {
                2.0
            };
            p * scale * one_sided
        })
        .collect();
    let df = sps / nseg as f64;
    Ok(PsdEstimate {
        freqs: (0..nbins).map(|k| k as f64 * df).collect(),
        power,
        window_s,
        overlap,
    })
}

fn interp(psd: &PsdEstimate, f: f64) -> f64 {
    let df = psd.resolution();
    let pos = f / df;
    let i = (pos.floor() as usize).min(psd.freqs.len() - 1);
    if i + 1 >= psd.freqs.len() {
        return psd.power[i];
    }
    let t = pos - i as f64;
    psd.power[i] * (1.0 - t) + psd.power[i + 1] * t
}

/// Trapezoidal integral of the PSD over `[lo, hi]` Hz, interpolating linearly
/// at band edges that fall between bins.
pub fn band_power(psd: &PsdEstimate, lo: f64, hi: f64) -> Result<f64, DspError> {
    let nyq = psd.nyquist();
    if psd.freqs.len() < 2 || !(lo < hi) || lo < 0.0 || hi > nyq + 1e-9 {
        return Err(DspError::InvalidBand { lo, hi });
    }
    let hi = hi.min(nyq);
    let mut pts: Vec<(f64, f64)> = vec![(lo, interp(psd, lo))];
    pts.extend(
        psd.freqs
            .iter()
            .zip(&psd.power)
            .filter(|(&f, _)| f > lo && f < hi)
            .map(|(&f, &p)| (f, p)),
    );
    pts.push((hi, interp(psd, hi)));
    Ok(pts
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum())
}

/// Amplitude of the `freq` component by single-bin DFT (Goertzel form).
///
/// Exact for a sinusoid spanning an integer number of cycles.
pub fn tone_amplitude(series: &[f64], freq: f64, sps: f64) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let w = 2.0 * PI * freq / sps;
    let coeff = 2.0 * w.cos();
    let (mut s1, mut s2) = (0.0, 0.0);
    for &x in series {
        let s0 = x + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
    }
    let re = s1 - s2 * w.cos();
    let im = s2 * w.sin();
    2.0 * re.hypot(im) / series.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sine(freq: f64, amp: f64, sps: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / sps).sin())
            .collect()
    }

    fn variance(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
    }

    #[test]
    fn sine_power_concentrates_in_alpha_band() {
        let x = sine(10.0, 1.0, 500.0, 500 * 60);
        let psd = welch_psd(&x, 500.0, 2.0, 0.5).unwrap();
        let total = psd.total_power();
        let alpha = band_power(&psd, 8.0, 12.0).unwrap();
        assert!(alpha / total >= 0.95, "{}", alpha / total);
        // sine of amplitude 1 has variance 1/2
        assert!((total - 0.5).abs() < 0.5 * 0.05);
        let off = band_power(&psd, 20.0, 30.0).unwrap();
        assert!(off < 1e-6 * total);
    }

    #[test]
    fn zero_series_zero_psd() {
        let psd = welch_psd(&vec![0.0; 5000], 250.0, 2.0, 0.5).unwrap();
        assert!(psd.power.iter().all(|&p| p == 0.0));
        assert_eq!(psd.freqs.first(), Some(&0.0));
        assert_eq!(psd.nyquist(), 125.0);
    }

    #[test]
    fn white_noise_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..100_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                3.0 * z
            })
            .collect();
        let psd = welch_psd(&x, 500.0, 2.0, 0.5).unwrap();
        let rel = (psd.total_power() - variance(&x)).abs() / variance(&x);
        assert!(rel < 0.05, "{rel}");
    }

    #[test]
    fn too_short_and_bad_params() {
        assert!(matches!(
            welch_psd(&[1.0; 10], 500.0, 2.0, 0.5),
            Err(DspError::TooShort { .. })
        ));
        assert!(welch_psd(&[1.0; 2000], 500.0, 2.0, 1.0).is_err());
        assert!(welch_psd(&[1.0; 2000], 500.0, 2.0, -0.1).is_err());
    }

    #[test]
    fn band_power_edges() {
        let x = sine(10.0, 1.0, 500.0, 5000);
        let psd = welch_psd(&x, 500.0, 2.0, 0.5).unwrap();
        assert!(band_power(&psd, 12.0, 8.0).is_err());
        assert!(band_power(&psd, 8.0, 300.0).is_err());
        let full = band_power(&psd, 0.0, 250.0).unwrap();
        assert_eq!(full, psd.total_power());
        // interpolated edges are additive
        let a = band_power(&psd, 7.3, 10.1).unwrap();
        let b = band_power(&psd, 10.1, 12.7).unwrap();
        let ab = band_power(&psd, 7.3, 12.7).unwrap();
        assert!((a + b - ab).abs() < 1e-12 * ab.max(1.0));
    }

    #[test]
    fn goertzel_amplitude() {
        let x = sine(50.0, 0.37, 500.0, 1000);
        assert!((tone_amplitude(&x, 50.0, 500.0) - 0.37).abs() < 1e-9);
        assert!(tone_amplitude(&x, 10.0, 500.0) < 1e-9);
        assert_eq!(tone_amplitude(&[], 10.0, 500.0), 0.0);
    }
}
