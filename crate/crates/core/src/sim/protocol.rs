use serde::{Deserialize, Serialize};

use super::SimError;

pub const EYES_OPEN: &str = "eyes-open";
pub const EYES_CLOSED: &str = "eyes-closed";
pub const REST: &str = "rest";
pub const CLENCH: &str = "clench";
pub const PURSUIT_LEFT: &str = "pursuit-left";
pub const PURSUIT_RIGHT: &str = "pursuit-right";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub label: String,
    pub start_s: f64,
    pub duration_s: f64,
}

impl Epoch {
    pub fn new(label: impl Into<String>, start_s: f64, duration_s: f64) -> Self {
        Self {
            label: label.into(),
            start_s,
            duration_s,
        }
    }

    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }
}

/// Timeline of labelled experiment epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProtocolRepr", into = "ProtocolRepr")]
pub struct StimulusProtocol {
    epochs: Vec<Epoch>,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ProtocolRepr {
    epochs: Vec<Epoch>,
    #[serde(default)]
    seed: u64,
}

impl TryFrom<ProtocolRepr> for StimulusProtocol {
    type Error = SimError;
    fn try_from(r: ProtocolRepr) -> Result<Self, SimError> {
        StimulusProtocol::new(r.epochs, r.seed)
    }
}

impl From<StimulusProtocol> for ProtocolRepr {
    fn from(p: StimulusProtocol) -> Self {
        ProtocolRepr {
            epochs: p.epochs,
            seed: p.seed,
        }
    }
}

impl StimulusProtocol {
    /// Epochs must have positive durations, be sorted by start and not
    /// overlap.
    pub fn new(epochs: Vec<Epoch>, seed: u64) -> Result<Self, SimError> {
        for e in &epochs {
            if !(e.duration_s > 0.0) || !(e.start_s >= 0.0) {
                return Err(SimError::Protocol(format!(
                    "epoch {:?} needs start >= 0 and duration > 0",
                    e.label
                )));
            }
        }
        for w in epochs.windows(2) {
            if w[1].start_s < w[0].end_s() {
                return Err(SimError::Protocol(format!(
                    "epoch {:?} at {} s overlaps or precedes {:?}",
                    w[1].label, w[1].start_s, w[0].label
                )));
            }
        }
        Ok(Self { epochs, seed })
    }

    pub fn empty(seed: u64) -> Self {
        Self {
            epochs: Vec::new(),
            seed,
        }
    }

    /// Back-to-back epochs with the given `(label, seconds)` durations.
    pub fn sequence<'a>(
        parts: impl IntoIterator<Item = (&'a str, f64)>,
        seed: u64,
    ) -> Result<Self, SimError> {
        let mut t = 0.0;
        let epochs = parts
            .into_iter()
            .map(|(label, d)| {
                let e = Epoch::new(label, t, d);
                t += d;
                e
            })
            .collect();
        Self::new(epochs, seed)
    }

    /// Two minutes eyes open then two minutes eyes closed.
    pub fn eyes_open_closed(seed: u64) -> Self {
        Self::sequence([(EYES_OPEN, 120.0), (EYES_CLOSED, 120.0)], seed)
            .expect("static protocol is valid")
    }

    /// Ten seconds of clenching between two ten-second rest epochs.
    pub fn rest_clench_rest(seed: u64) -> Self {
        Self::sequence([(REST, 10.0), (CLENCH, 10.0), (REST, 10.0)], seed)
            .expect("static protocol is valid")
    }

    pub fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn end_s(&self) -> f64 {
        self.epochs.last().map_or(0.0, Epoch::end_s)
    }

    pub fn check_labels(&self, allowed: &[&str]) -> Result<(), SimError> {
        match self
            .epochs
            .iter()
            .find(|e| !allowed.contains(&e.label.as_str()))
        {
            Some(e) => Err(SimError::Protocol(format!(
                "unknown label {:?}; expected one of {allowed:?}",
                e.label
            ))),
            None => Ok(()),
        }
    }

    /// Label active at `t` seconds, if any.
    pub fn label_at(&self, t: f64) -> Option<&str> {
        let i = self.epochs.partition_point(|e| e.start_s <= t);
        i.checked_sub(1)
            .map(|i| &self.epochs[i])
            .filter(|e| t < e.end_s())
            .map(|e| e.label.as_str())
    }
}

/// Common-mode and differential contamination added on top of physiology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Peak of the body common mode at the powerline frequency.
    pub powerline_amp_uv: f64,
    pub white_uv_rms: f64,
    /// Peak of the slow electrode drift.
    pub drift_uv: f64,
    /// Share of the common mode that leaks into the differential signal
    /// through electrode imbalance.
    pub cm_to_diff_fraction: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            powerline_amp_uv: 1000.0,
            white_uv_rms: 1.0,
            drift_uv: 10.0,
            cm_to_diff_fraction: 0.01,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            powerline_amp_uv: 0.0,
            white_uv_rms: 0.0,
            drift_uv: 0.0,
            cm_to_diff_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let amps = [self.powerline_amp_uv, self.white_uv_rms, self.drift_uv];
        if amps.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(SimError::InvalidParameter(
                "noise amplitudes must be finite and >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.cm_to_diff_fraction) {
            return Err(SimError::InvalidParameter(format!(
                "cm_to_diff_fraction {} outside [0, 1]",
                self.cm_to_diff_fraction
            )));
        }
        Ok(())
    }
}
