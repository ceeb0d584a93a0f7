//! Synthetic physiology, contamination and acquisition through the front-end
//! model.

mod acquisition;
mod generators;
mod protocol;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::afe::{AfeConfig, AfeError, Montage};
use crate::dsp::DspError;

pub use acquisition::{simulate_acquisition, Acquisition, Tick};
pub use generators::{
    gen_eeg_alpha, gen_emg_clench, gen_eog_pursuit, pink_noise, px_to_deg, AlphaParams,
    ClenchParams, GazeSide, PursuitEvent, PursuitGeometry,
};
pub use protocol::{
    Epoch, NoiseModel, StimulusProtocol, CLENCH, EYES_CLOSED, EYES_OPEN, PURSUIT_LEFT,
    PURSUIT_RIGHT, REST,
};

/// Electrode-referred EOG sensitivity used by the presets.
pub const DEFAULT_UV_PER_DEG: f64 = 4.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Afe(#[from] AfeError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn default_uv_per_deg() -> f64 {
    DEFAULT_UV_PER_DEG
}

/// What the electrodes pick up before any contamination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Physiology {
    Eeg {
        protocol: StimulusProtocol,
        #[serde(default)]
        params: AlphaParams,
    },
    Emg {
        protocol: StimulusProtocol,
        #[serde(default)]
        params: ClenchParams,
    },
    Eog {
        #[serde(default)]
        geometry: PursuitGeometry,
        #[serde(default = "default_uv_per_deg")]
        uv_per_deg: f64,
    },
    Silence {
        duration_s: f64,
    },
}

/// A label the protocol script emits at a point in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptMark {
    pub t_s: f64,
    pub label: String,
}

/// Physiology rendered at a sample rate, with its script and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub series_uv: Vec<f64>,
    pub marks: Vec<ScriptMark>,
    pub truth: Vec<PursuitEvent>,
}

impl Physiology {
    pub fn kind(&self) -> &'static str {
        match self {
            Physiology::Eeg { .. } => "eeg",
            Physiology::Emg { .. } => "emg",
            Physiology::Eog { .. } => "eog",
            Physiology::Silence { .. } => "silence",
        }
    }

    pub fn render(&self, sps: f64) -> Result<Rendered, SimError> {
        let epoch_marks = |p: &StimulusProtocol| {
            p.epochs()
                .iter()
                .map(|e| ScriptMark {
                    t_s: e.start_s,
                    label: e.label.clone(),
                })
                .collect()
        };
        Ok(match self {
            Physiology::Eeg { protocol, params } => Rendered {
                series_uv: gen_eeg_alpha(protocol, sps, params)?,
                marks: epoch_marks(protocol),
                truth: Vec::new(),
            },
            Physiology::Emg { protocol, params } => Rendered {
                series_uv: gen_emg_clench(protocol, sps, params)?,
                marks: epoch_marks(protocol),
                truth: Vec::new(),
            },
            Physiology::Eog {
                geometry,
                uv_per_deg,
            } => {
                let (series_uv, truth) = gen_eog_pursuit(geometry, sps, *uv_per_deg)?;
                let marks = truth
                    .iter()
                    .map(|e| ScriptMark {
                        t_s: e.onset_s,
                        label: e.side.label().to_string(),
                    })
                    .collect();
                Rendered {
                    series_uv,
                    marks,
                    truth,
                }
            }
            Physiology::Silence { duration_s } => {
                if !(*duration_s >= 0.0) {
                    return Err(SimError::InvalidParameter(format!(
                        "silence duration {duration_s} s"
                    )));
                }
                Rendered {
                    series_uv: vec![0.0; (duration_s * sps).round() as usize],
                    marks: Vec::new(),
                    truth: Vec::new(),
                }
            }
        })
    }

    fn reseed(&mut self, seed: u64) {
        match self {
            Physiology::Eeg { protocol, .. } | Physiology::Emg { protocol, .. } => {
                *protocol = protocol.clone().with_seed(seed);
            }
            Physiology::Eog { .. } | Physiology::Silence { .. } => {}
        }
    }
}

/// A complete simulated recording setup, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    /// Seeds the contamination; the physiology uses its protocol seed.
    #[serde(default)]
    pub seed: u64,
    pub physiology: Physiology,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub afe: AfeConfig,
    #[serde(default = "Montage::ear_study")]
    pub montage: Montage,
}

impl Scenario {
    pub fn new(name: impl Into<String>, physiology: Physiology) -> Self {
        Self {
            name: name.into(),
            seed: 0,
            physiology,
            noise: NoiseModel::default(),
            afe: AfeConfig::default(),
            montage: Montage::ear_study(),
        }
    }

    /// Two minutes eyes open, two minutes eyes closed, 500 SPS.
    pub fn eeg_default() -> Self {
        Self::new(
            "eeg-alpha",
            Physiology::Eeg {
                protocol: StimulusProtocol::eyes_open_closed(0),
                params: AlphaParams::default(),
            },
        )
    }

    /// Rest, 10 s clench, rest at 500 SPS.
    pub fn emg_default() -> Self {
        Self::new(
            "emg-clench",
            Physiology::Emg {
                protocol: StimulusProtocol::rest_clench_rest(0),
                params: ClenchParams::default(),
            },
        )
    }

    /// Fifteen sweeps per side at 500 SPS.
    pub fn eog_default() -> Self {
        Self::new(
            "eog-pursuit",
            Physiology::Eog {
                geometry: PursuitGeometry::default(),
                uv_per_deg: DEFAULT_UV_PER_DEG,
            },
        )
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "eeg" | "eeg-alpha" => Some(Self::eeg_default()),
            "emg" | "emg-clench" => Some(Self::emg_default()),
            "eog" | "eog-pursuit" => Some(Self::eog_default()),
            _ => None,
        }
    }

    /// Sets both the contamination seed and the physiology seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.physiology.reseed(seed);
        self
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_afe(mut self, afe: AfeConfig) -> Self {
        self.afe = afe;
        self
    }

    pub fn with_montage(mut self, montage: Montage) -> Self {
        self.montage = montage;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.afe.validate()?;
        self.noise.validate()?;
        if let Physiology::Eog { geometry, .. } = &self.physiology {
            geometry.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}
