use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::protocol::{
    StimulusProtocol, CLENCH, EYES_CLOSED, EYES_OPEN, PURSUIT_LEFT, PURSUIT_RIGHT, REST,
};
use super::SimError;
use crate::dsp::{design_bandpass, Direction};

const MM_PER_INCH: f64 = 25.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlphaParams {
    pub alpha_hz: f64,
    /// Peak alpha amplitude with eyes open.
    pub a_open_uv: f64,
    /// Peak alpha amplitude with eyes closed.
    pub a_closed_uv: f64,
    /// RMS of the 1/f background.
    pub background_uv_rms: f64,
}

impl Default for AlphaParams {
    fn default() -> Self {
        Self {
            alpha_hz: 10.0,
            a_open_uv: 2.0,
            a_closed_uv: 10.0,
            background_uv_rms: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClenchParams {
    pub r_rest_uv: f64,
    pub r_clench_uv: f64,
    pub band_lo_hz: f64,
    /// Upper band edge, lowered to 0.45 * sps when that is smaller.
    pub band_hi_hz: f64,
}

impl Default for ClenchParams {
    fn default() -> Self {
        Self {
            r_rest_uv: 2.0,
            r_clench_uv: 50.0,
            band_lo_hz: 20.0,
            band_hi_hz: 150.0,
        }
    }
}

/// Smooth-pursuit task: screen, viewing distance and sweep timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PursuitGeometry {
    pub screen_diag_inch: f64,
    pub resolution_px: (u32, u32),
    pub distance_mm: f64,
    pub sweep_deg: f64,
    pub sweep_duration_s: f64,
    pub reps_per_side: u32,
    /// Central fixation before each sweep, and after the last one.
    pub fixation_s: f64,
    /// Time held at the sweep end before returning to centre.
    pub hold_s: f64,
}

impl Default for PursuitGeometry {
    fn default() -> Self {
        Self {
            screen_diag_inch: 23.0,
            resolution_px: (1920, 1080),
            distance_mm: 400.0,
            sweep_deg: 52.8,
            sweep_duration_s: 0.5,
            reps_per_side: 15,
            fixation_s: 1.0,
            hold_s: 0.5,
        }
    }
}

impl PursuitGeometry {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            self.screen_diag_inch,
            self.distance_mm,
            self.sweep_deg,
            self.sweep_duration_s,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite())
            || self.resolution_px.0 == 0
            || self.resolution_px.1 == 0
        {
            return Err(SimError::InvalidParameter(
                "pursuit geometry values must be positive".into(),
            ));
        }
        if self.sweep_deg >= 180.0 {
            return Err(SimError::InvalidParameter(format!(
                "sweep of {} deg is not below 180",
                self.sweep_deg
            )));
        }
        if !(self.fixation_s >= 0.0) || !(self.hold_s >= 0.0) {
            return Err(SimError::InvalidParameter(
                "fixation and hold times must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Pixel pitch in millimetres from the diagonal and resolution.
    pub fn px_pitch_mm(&self) -> f64 {
        let (w, h) = self.resolution_px;
        self.screen_diag_inch * MM_PER_INCH / (w as f64).hypot(h as f64)
    }

    /// Length of one rep: fixation, sweep out, hold, sweep back.
    pub fn rep_s(&self) -> f64 {
        self.fixation_s + 2.0 * self.sweep_duration_s + self.hold_s
    }

    pub fn total_s(&self) -> f64 {
        2.0 * self.reps_per_side as f64 * self.rep_s() + self.fixation_s
    }
}

/// Visual angle subtended by `px_offset` pixels centred on the line of sight.
/// The sign of the offset carries over to the angle.
pub fn px_to_deg(px_offset: f64, geometry: &PursuitGeometry) -> f64 {
    let half_mm = px_offset.abs() * geometry.px_pitch_mm() / 2.0;
    px_offset.signum() * 2.0 * (half_mm / geometry.distance_mm).atan().to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GazeSide {
    Left,
    Right,
}

impl GazeSide {
    /// Leftward gaze reads positive on a left-minus-right ear montage.
    pub fn direction(self) -> Direction {
        match self {
            GazeSide::Left => Direction::Positive,
            GazeSide::Right => Direction::Negative,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            GazeSide::Left => PURSUIT_LEFT,
            GazeSide::Right => PURSUIT_RIGHT,
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            PURSUIT_LEFT => Some(GazeSide::Left),
            PURSUIT_RIGHT => Some(GazeSide::Right),
            _ => None,
        }
    }
}

/// One generated sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PursuitEvent {
    pub onset_s: f64,
    pub side: GazeSide,
    /// Signed plateau of the ramp, electrode-referred.
    pub amplitude_uv: f64,
    pub ramp_s: f64,
}

fn n_samples(duration_s: f64, sps: f64) -> usize {
    (duration_s * sps).round().max(0.0) as usize
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// White noise shaped to a 1/f spectrum with Kellet's six-pole filter bank,
/// then scaled to `target_rms`.
pub fn pink_noise(n: usize, target_rms: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const POLES: [(f64, f64); 6] = [
        (0.99886, 0.055_517_9),
        (0.99332, 0.075_075_9),
        (0.96900, 0.153_852_0),
        (0.86650, 0.310_485_6),
        (0.55000, 0.532_952_2),
        (-0.7616, -0.016_898_0),
    ];
    let mut state = [0.0f64; 6];
    let mut b6 = 0.0;
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w = standard_normal(rng);
            let mut y = b6 + w * 0.5362;
            for (s, (p, g)) in state.iter_mut().zip(POLES) {
                *s = p * *s + w * g;
                y += *s;
            }
            b6 = w * 0.115_926;
            y
        })
        .collect();
    let mean = out.iter().sum::<f64>() / n.max(1) as f64;
    out.iter_mut().for_each(|v| *v -= mean);
    let r = rms(&out);
    if r > 0.0 {
        out.iter_mut().for_each(|v| *v *= target_rms / r);
    }
    out
}

/// Electrode-referred EEG in microvolts: 1/f background plus a 10 Hz alpha
/// rhythm whose amplitude follows the eyes-open/eyes-closed epochs.
pub fn gen_eeg_alpha(
    protocol: &StimulusProtocol,
    sps: f64,
    params: &AlphaParams,
) -> Result<Vec<f64>, SimError> {
    protocol.check_labels(&[EYES_OPEN, EYES_CLOSED])?;
    let n = n_samples(protocol.end_s(), sps);
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed());
    let mut out = pink_noise(n, params.background_uv_rms, &mut rng);
    let w = 2.0 * PI * params.alpha_hz / sps;
    for (i, v) in out.iter_mut().enumerate() {
        let t = i as f64 / sps;
        let amp = match protocol.label_at(t) {
            Some(EYES_CLOSED) => params.a_closed_uv,
            Some(_) => params.a_open_uv,
            None => 0.0,
        };
        *v += amp * (w * i as f64).sin();
    }
    Ok(out)
}

/// Band-limited noise bursts: RMS `r_clench_uv` during clench epochs and
/// `r_rest_uv` elsewhere.
pub fn gen_emg_clench(
    protocol: &StimulusProtocol,
    sps: f64,
    params: &ClenchParams,
) -> Result<Vec<f64>, SimError> {
    protocol.check_labels(&[REST, CLENCH])?;
    let n = n_samples(protocol.end_s(), sps);
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed());
    let hi = params.band_hi_hz.min(0.45 * sps);
    let mut bp = design_bandpass(params.band_lo_hz, hi, sps)?;
    let white: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
    let mut shaped = bp.process(&white);
    let r = rms(&shaped);
    if r > 0.0 {
        shaped.iter_mut().for_each(|v| *v /= r);
    }
    for (i, v) in shaped.iter_mut().enumerate() {
        let amp = match protocol.label_at(i as f64 / sps) {
            Some(CLENCH) => params.r_clench_uv,
            _ => params.r_rest_uv,
        };
        *v *= amp;
    }
    Ok(shaped)
}

/// Horizontal EOG for alternating left/right sweeps, with the onset of every
/// sweep as ground truth.
pub fn gen_eog_pursuit(
    geometry: &PursuitGeometry,
    sps: f64,
    uv_per_deg: f64,
) -> Result<(Vec<f64>, Vec<PursuitEvent>), SimError> {
    geometry.validate()?;
    let n = n_samples(geometry.total_s(), sps);
    let peak = uv_per_deg * geometry.sweep_deg;
    let ramp = geometry.sweep_duration_s;
    let events: Vec<PursuitEvent> = (0..2 * geometry.reps_per_side)
        .map(|k| {
            let side = if k % 2 == 0 {
                GazeSide::Left
            } else {
                GazeSide::Right
            };
            PursuitEvent {
                onset_s: k as f64 * geometry.rep_s() + geometry.fixation_s,
                side,
                amplitude_uv: side.direction().sign() * peak,
                ramp_s: ramp,
            }
        })
        .collect();

    let mut out = vec![0.0; n];
    for ev in &events {
        let i0 = (ev.onset_s * sps).ceil() as usize;
        let i1 = ((ev.onset_s + 2.0 * ramp + geometry.hold_s) * sps).ceil() as usize;
        for (i, v) in out.iter_mut().enumerate().take(i1.min(n)).skip(i0) {
            let dt = i as f64 / sps - ev.onset_s;
            let frac = if dt < ramp {
                dt / ramp
            } else if dt < ramp + geometry.hold_s {
                1.0
            } else {
                (1.0 - (dt - ramp - geometry.hold_s) / ramp).max(0.0)
            };
            *v = ev.amplitude_uv * frac;
        }
    }
    Ok((out, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{band_power, rms_envelope, welch_psd};

    fn alpha_ratio(x: &[f64], sps: f64, split_s: f64) -> f64 {
        let k = (split_s * sps) as usize;
        let open = welch_psd(&x[..k], sps, 2.0, 0.5).unwrap();
        let closed = welch_psd(&x[k..], sps, 2.0, 0.5).unwrap();
        band_power(&closed, 8.0, 12.0).unwrap() / band_power(&open, 8.0, 12.0).unwrap()
    }

    #[test]
    fn eeg_alpha_contrast() {
        let p = StimulusProtocol::eyes_open_closed(42);
        let x = gen_eeg_alpha(&p, 500.0, &AlphaParams::default()).unwrap();
        assert_eq!(x.len(), 120_000);
        // (10/2)^2 = 25, pulled down by the shared background
        let r = alpha_ratio(&x, 500.0, 120.0);
        assert!((4.0..25.0).contains(&r), "{r}");
    }

    #[test]
    fn eeg_symmetric_amplitudes() {
        let p = StimulusProtocol::eyes_open_closed(3);
        let params = AlphaParams {
            a_open_uv: 6.0,
            a_closed_uv: 6.0,
            ..AlphaParams::default()
        };
        let x = gen_eeg_alpha(&p, 500.0, &params).unwrap();
        let r = alpha_ratio(&x, 500.0, 120.0);
        assert!((r - 1.0).abs() < 0.15, "{r}");
    }

    #[test]
    fn eeg_empty_and_bad_labels() {
        let empty = StimulusProtocol::empty(1);
        assert!(gen_eeg_alpha(&empty, 500.0, &AlphaParams::default())
            .unwrap()
            .is_empty());
        let p = StimulusProtocol::rest_clench_rest(1);
        assert!(matches!(
            gen_eeg_alpha(&p, 500.0, &AlphaParams::default()),
            Err(SimError::Protocol(_))
        ));
    }

    #[test]
    fn eeg_deterministic() {
        let p = StimulusProtocol::eyes_open_closed(42);
        let a = gen_eeg_alpha(&p, 250.0, &AlphaParams::default()).unwrap();
        let b = gen_eeg_alpha(&p, 250.0, &AlphaParams::default()).unwrap();
        assert_eq!(a, b);
        let c = gen_eeg_alpha(&p.with_seed(43), 250.0, &AlphaParams::default()).unwrap();
        assert_ne!(a, c);
    }

    fn segment_rms(x: &[f64], sps: f64, from_s: f64, to_s: f64) -> f64 {
        let env = rms_envelope(
            &x[(from_s * sps) as usize..(to_s * sps) as usize],
            0.25,
            sps,
        )
        .unwrap();
        env.iter().sum::<f64>() / env.len() as f64
    }

    #[test]
    fn emg_clench_envelope() {
        for sps in [500.0, 1000.0] {
            let p = StimulusProtocol::rest_clench_rest(9);
            let x = gen_emg_clench(&p, sps, &ClenchParams::default()).unwrap();
            let rest = segment_rms(&x, sps, 1.0, 9.5);
            let clench = segment_rms(&x, sps, 10.5, 19.5);
            assert!(clench / rest >= 10.0, "sps {sps}: {}", clench / rest);
        }
    }

    #[test]
    fn emg_equal_and_all_rest() {
        let p = StimulusProtocol::rest_clench_rest(9);
        let params = ClenchParams {
            r_clench_uv: 2.0,
            ..ClenchParams::default()
        };
        let x = gen_emg_clench(&p, 1000.0, &params).unwrap();
        let r = segment_rms(&x, 1000.0, 10.5, 19.5) / segment_rms(&x, 1000.0, 1.0, 9.5);
        assert!((r - 1.0).abs() < 0.15, "{r}");

        let rest = StimulusProtocol::sequence([(REST, 20.0)], 2).unwrap();
        let x = gen_emg_clench(&rest, 1000.0, &ClenchParams::default()).unwrap();
        let a = segment_rms(&x, 1000.0, 1.0, 10.0);
        let b = segment_rms(&x, 1000.0, 10.0, 19.0);
        assert!(a < 5.0 && b < 5.0 && (a / b - 1.0).abs() < 0.2);

        let bad = StimulusProtocol::eyes_open_closed(1);
        assert!(gen_emg_clench(&bad, 500.0, &ClenchParams::default()).is_err());
    }

    #[test]
    fn eog_ramp_amplitude_and_events() {
        let g = PursuitGeometry::default();
        let (x, events) = gen_eog_pursuit(&g, 500.0, 4.0).unwrap();
        assert_eq!(events.len(), 30);
        assert_eq!(
            events.iter().filter(|e| e.side == GazeSide::Left).count(),
            15
        );
        let max = x.iter().cloned().fold(f64::MIN, f64::max);
        let min = x.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - 211.2).abs() < 1e-9, "{max}");
        assert!((min + 211.2).abs() < 1e-9, "{min}");
        assert_eq!(events[0].side, GazeSide::Left);
        assert!(events[0].amplitude_uv > 0.0 && events[1].amplitude_uv < 0.0);
        // centre between reps
        let mid = ((events[1].onset_s - 0.5) * 500.0) as usize;
        assert_eq!(x[mid], 0.0);
    }

    #[test]
    fn eog_zero_reps_is_flat() {
        let g = PursuitGeometry {
            reps_per_side: 0,
            ..PursuitGeometry::default()
        };
        let (x, events) = gen_eog_pursuit(&g, 500.0, 4.0).unwrap();
        assert!(events.is_empty());
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn geometry_validation() {
        let g = PursuitGeometry {
            sweep_deg: 180.0,
            ..PursuitGeometry::default()
        };
        assert!(gen_eog_pursuit(&g, 500.0, 4.0).is_err());
        let g = PursuitGeometry {
            distance_mm: 0.0,
            ..PursuitGeometry::default()
        };
        assert!(g.validate().is_err());
    }

    #[test]
    fn visual_angle() {
        let g = PursuitGeometry::default();
        assert_eq!(px_to_deg(0.0, &g), 0.0);
        // 23" 16:9 panel is 509.2 mm wide
        let width_mm = 1920.0 * g.px_pitch_mm();
        assert!((width_mm - 509.2).abs() < 0.1, "{width_mm}");
        let full = px_to_deg(1920.0, &g);
        let oracle = 2.0 * (254.6f64 / 400.0).atan().to_degrees();
        assert!((full - oracle).abs() < 0.05, "{full} vs {oracle}");
        assert!((full - 65.1).abs() < 0.2, "{full}");
        assert_eq!(px_to_deg(-700.0, &g), -px_to_deg(700.0, &g));
    }
}
