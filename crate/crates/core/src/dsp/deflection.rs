use serde::{Deserialize, Serialize};

use super::DspError;

/// Onsets are traced back from the threshold crossing to where the excursion
/// leaves this fraction of the threshold.
const ONSET_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Positive,
    Negative,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Positive => 1.0,
            Direction::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Direction::Positive => Direction::Negative,
            Direction::Negative => Direction::Positive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deflection {
    pub onset_s: f64,
    pub direction: Direction,
    /// Signed peak deviation from the baseline.
    pub amplitude_uv: f64,
    pub duration_s: f64,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if v.len() % 2 == 1 {
        Some(upper)
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(0.5 * (lower + upper))
    }
}

/// Threshold excursion detector.
///
/// The series median is taken as baseline. Every contiguous run with
/// `|x - baseline| > threshold_uv` of one sign, lasting at least
/// `min_duration_s`, is reported once.
pub fn detect_deflections(
    series: &[f64],
    sps: f64,
    threshold_uv: f64,
    min_duration_s: f64,
) -> Result<Vec<Deflection>, DspError> {
    if !(threshold_uv > 0.0) || !(sps > 0.0) || min_duration_s < 0.0 {
        return Err(DspError::InvalidParameter(format!(
            "threshold and sample rate must be positive (threshold {threshold_uv}, sps {sps})"
        )));
    }
    let Some(baseline) = median(series) else {
        return Ok(Vec::new());
    };
    let dev: Vec<f64> = series.iter().map(|x| x - baseline).collect();
    let sign_of = |d: f64| {
        if d > threshold_uv {
            Some(Direction::Positive)
        } else if d < -threshold_uv {
            Some(Direction::Negative)
        } else {
            None
        }
    };

    let mut events = Vec::new();
    let mut last_end = 0usize;
    let mut i = 0usize;
    while i < dev.len() {
        let Some(dir) = sign_of(dev[i]) else {
            i += 1;
            continue;
        };
        let start = i;
        let mut peak = dev[i];
        while i < dev.len() && sign_of(dev[i]) == Some(dir) {
            if dev[i] * dir.sign() > peak * dir.sign() {
                peak = dev[i];
            }
            i += 1;
        }
        let end = i;
        let duration_s = (end - start) as f64 / sps;
        if duration_s >= min_duration_s {
            let mut onset = start;
            while onset > last_end && dev[onset - 1] * dir.sign() > ONSET_FRACTION * threshold_uv {
                onset -= 1;
            }
            events.push(Deflection {
                onset_s: onset as f64 / sps,
                direction: dir,
                amplitude_uv: peak,
                duration_s,
            });
            last_end = end;
        }
    }
    Ok(events)
}
