//! Analog front-end model: instrumentation amplifier, driven-right-leg
//! feedback, virtual ground and the 24-bit sigma-delta converter.
//!
//! The signal chain for one in-amp channel is
//!
//! ```text
//! electrode diff + body common mode
//!     -> DRL (common mode scaled by 1 / (1 + G) when active)
//!     -> in-amp: Vg + gain * v_diff + gain * v_cm / CMRR, clipped to [0, Vref]
//!     -> ADC line-rejection filter (50 Hz and 60 Hz notches)
//!     -> bipolar quantizer referenced to AIN0 = Vg
//! ```
//!
//! Every function here is a pure function of its arguments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{design_notch, SosFilter};

/// Resistor constant of the single-resistor in-amp gain law `1 + 100k / Rg`.
pub const INAMP_GAIN_RESISTOR_OHMS: f64 = 100_000.0;

/// Largest common-mode input for which the in-amp's CMRR figure holds.
pub const MAX_COMMON_MODE_V: f64 = 5.0;

/// Input-referred artifact resolution used when sizing the converter.
pub const ARTIFACT_TARGET_V: f64 = 1e-6;

/// Upper bound on the converter's line-frequency rejection.
pub const LINE_REJECTION_CEILING_DB: f64 = 130.0;

/// Quality factor of each line-rejection notch.
pub const LINE_NOTCH_Q: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AfeError {
    #[error("gain resistor must be positive, got {0} ohm")]
    NonPositiveResistance(f64),
    #[error("invalid front-end config: {0}")]
    InvalidConfig(String),
    #[error("common-mode input {0} V outside the +-5 V validity range")]
    CommonModeOutOfRange(f64),
    #[error("resolution target must be positive and reachable, got {0} V")]
    InvalidTarget(f64),
    #[error("frequency {freq} Hz outside (0, {nyquist}) Hz")]
    FrequencyOutOfRange { freq: f64, nyquist: f64 },
    #[error("invalid montage: {0}")]
    InvalidMontage(String),
}

fn default_vref() -> f64 {
    3.3
}
fn default_bits() -> u32 {
    24
}
fn default_gain() -> f64 {
    50.0
}
fn default_cmrr() -> f64 {
    120.0
}
fn default_loop_gain() -> f64 {
    99.0
}
fn default_powerline() -> u32 {
    50
}
fn default_sps() -> u32 {
    500
}
fn default_true() -> bool {
    true
}

/// Full parameterization of the analog front end.
///
/// The virtual ground is not stored: it is always `vref / 2`
/// (see [`AfeConfig::virtual_ground`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfeConfig {
    #[serde(default = "default_vref")]
    pub vref: f64,
    #[serde(default = "default_bits")]
    pub bits: u32,
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default = "default_cmrr")]
    pub cmrr_db: f64,
    #[serde(default)]
    pub drl_enabled: bool,
    #[serde(default = "default_loop_gain")]
    pub drl_loop_gain: f64,
    #[serde(default = "default_powerline")]
    pub powerline_hz: u32,
    #[serde(default = "default_sps")]
    pub sps: u32,
    /// Whether the converter's 50/60 Hz rejection filter is in the chain.
    #[serde(default = "default_true")]
    pub line_filter: bool,
}

impl Default for AfeConfig {
    fn default() -> Self {
        Self {
            vref: default_vref(),
            bits: default_bits(),
            gain: default_gain(),
            cmrr_db: default_cmrr(),
            drl_enabled: false,
            drl_loop_gain: default_loop_gain(),
            powerline_hz: default_powerline(),
            sps: default_sps(),
            line_filter: true,
        }
    }
}

impl AfeConfig {
    pub fn virtual_ground(&self) -> f64 {
        self.vref / 2.0
    }

    pub fn validate(&self) -> Result<(), AfeError> {
        let bad = |m: String| Err(AfeError::InvalidConfig(m));
        if !(self.vref > 0.0) || !self.vref.is_finite() {
            return bad(format!("vref must be positive, got {}", self.vref));
        }
        if !(1..=32).contains(&self.bits) {
            return bad(format!("bits must be in 1..=32, got {}", self.bits));
        }
        if !(self.gain >= 1.0) || !self.gain.is_finite() {
            return bad(format!("gain must be >= 1, got {}", self.gain));
        }
        if !self.cmrr_db.is_finite() {
            return bad(format!("cmrr_db must be finite, got {}", self.cmrr_db));
        }
        if !(self.drl_loop_gain >= 0.0) || !self.drl_loop_gain.is_finite() {
            return bad(format!(
                "drl_loop_gain must be >= 0, got {}",
                self.drl_loop_gain
            ));
        }
        if self.powerline_hz != 50 && self.powerline_hz != 60 {
            return bad(format!(
                "powerline_hz must be 50 or 60, got {}",
                self.powerline_hz
            ));
        }
        if self.sps == 0 {
            return bad("sps must be positive".into());
        }
        Ok(())
    }

    /// Converter step before the analog gain, `vref / 2^bits`.
    pub fn adc_lsb(&self) -> f64 {
        self.vref / 2f64.powi(self.bits as i32)
    }

    pub fn code_range(&self) -> (i64, i64) {
        let half = 1i64 << (self.bits - 1);
        (-half, half - 1)
    }
}

/// In-amp gain set by a single resistor: `1 + 100 kOhm / rg`.
pub fn gain_from_resistor(rg_ohms: f64) -> Result<f64, AfeError> {
    if !(rg_ohms > 0.0) {
        return Err(AfeError::NonPositiveResistance(rg_ohms));
    }
    Ok(1.0 + INAMP_GAIN_RESISTOR_OHMS / rg_ohms)
}

/// Input-referred step: `vref / 2^bits / gain`.
pub fn lsb_volts(cfg: &AfeConfig) -> f64 {
    resolution(cfg.vref, cfg.bits, cfg.gain)
}

/// `vref / 2^bits / gain` without building a config.
pub fn resolution(vref: f64, bits: u32, gain: f64) -> f64 {
    vref / 2f64.powi(bits as i32) / gain
}

/// Smallest bit count whose input-referred step is at most `target` volts.
pub fn min_bits(vref: f64, gain: f64, target: f64) -> Result<u32, AfeError> {
    if !(target > 0.0) {
        return Err(AfeError::InvalidTarget(target));
    }
    (0..=64)
        .find(|&n| resolution(vref, n, gain) <= target)
        .ok_or(AfeError::InvalidTarget(target))
}

/// Instrumentation amplifier output in volts, rail-clipped to `[0, vref]`.
pub fn inamp_transfer(v_diff: f64, v_cm: f64, cfg: &AfeConfig) -> Result<f64, AfeError> {
    if !(v_cm.abs() < MAX_COMMON_MODE_V) {
        return Err(AfeError::CommonModeOutOfRange(v_cm));
    }
    Ok(inamp_unchecked(v_diff, v_cm, cfg))
}

#[inline]
pub(crate) fn inamp_unchecked(v_diff: f64, v_cm: f64, cfg: &AfeConfig) -> f64 {
    let cm_gain = cfg.gain / 10f64.powf(cfg.cmrr_db / 20.0);
    (cfg.virtual_ground() + cfg.gain * v_diff + cm_gain * v_cm).clamp(0.0, cfg.vref)
}

/// Closed-loop common-mode scale factor of the DRL stage.
pub fn drl_factor(cfg: &AfeConfig) -> f64 {
    if cfg.drl_enabled {
        1.0 / (1.0 + cfg.drl_loop_gain)
    } else {
        1.0
    }
}

/// Common mode seen by the electrodes after DRL feedback. Pass-through when
/// the DRL switch is off.
pub fn drl_apply(cm_series: &[f64], cfg: &AfeConfig) -> Vec<f64> {
    let k = drl_factor(cfg);
    cm_series.iter().map(|v| v * k).collect()
}

/// Bipolar code of an ADC input voltage measured against AIN0 (the virtual
/// ground). Saturates at the code range.
pub fn adc_quantize(v: f64, cfg: &AfeConfig) -> i32 {
    let (lo, hi) = cfg.code_range();
    let code = ((v - cfg.virtual_ground()) / cfg.adc_lsb()).round();
    code.clamp(lo as f64, hi as f64) as i32
}

/// Inverse affine map of [`adc_quantize`]: ADC input voltage of a code.
pub fn dequantize(code: i32, cfg: &AfeConfig) -> f64 {
    cfg.virtual_ground() + code as f64 * cfg.adc_lsb()
}

/// Input-referred microvolts of a code (gain removed, virtual ground at 0).
pub fn code_to_input_uv(code: i32, cfg: &AfeConfig) -> f64 {
    code as f64 * lsb_volts(cfg) * 1e6
}

/// Nearest code for an input-referred microvolt value.
pub fn input_uv_to_code(uv: f64, cfg: &AfeConfig) -> i32 {
    let (lo, hi) = cfg.code_range();
    (uv / (lsb_volts(cfg) * 1e6))
        .round()
        .clamp(lo as f64, hi as f64) as i32
}

/// The converter's line-rejection filter at `cfg.sps`: a notch at 50 Hz and a
/// notch at 60 Hz, each omitted when it would sit at or above Nyquist.
pub fn line_rejection_filter(cfg: &AfeConfig) -> SosFilter {
    let sps = cfg.sps as f64;
    SosFilter::new(
        [50.0, 60.0]
            .into_iter()
            .filter(|&f| f < sps / 2.0)
            .filter_map(|f| design_notch(f, LINE_NOTCH_Q, sps).ok()),
    )
}

/// Attenuation of the line-rejection filter at `f` Hz, in dB, capped at
/// [`LINE_REJECTION_CEILING_DB`].
pub fn powerline_rejection_db(f: f64, cfg: &AfeConfig) -> Result<f64, AfeError> {
    let nyquist = cfg.sps as f64 / 2.0;
    if !(f > 0.0 && f < nyquist) {
        return Err(AfeError::FrequencyOutOfRange { freq: f, nyquist });
    }
    let mag = line_rejection_filter(cfg).magnitude_at(f, cfg.sps as f64);
    if mag <= 0.0 {
        return Ok(LINE_REJECTION_CEILING_DB);
    }
    Ok((-20.0 * mag.log10()).clamp(0.0, LINE_REJECTION_CEILING_DB))
}

/// ADC inputs AIN0..AIN7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AdcInput(u8);

impl AdcInput {
    pub const AIN0: AdcInput = AdcInput(0);
    pub const AIN1: AdcInput = AdcInput(1);
    pub const AIN2: AdcInput = AdcInput(2);

    pub fn new(index: u8) -> Result<Self, AfeError> {
        if index <= 7 {
            Ok(Self(index))
        } else {
            Err(AfeError::InvalidMontage(format!(
                "no such input AIN{index}"
            )))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }
}

impl fmt::Display for AdcInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AIN{}", self.0)
    }
}

impl FromStr for AdcInput {
    type Err = AfeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix("AIN")
            .and_then(|n| n.parse::<u8>().ok())
            .ok_or_else(|| AfeError::InvalidMontage(format!("bad ADC input name {s:?}")))
            .and_then(AdcInput::new)
    }
}

impl Serialize for AdcInput {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AdcInput {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelRole {
    VirtualGround,
    #[serde(rename = "inamp-electrode-1")]
    InampElectrode1,
    #[serde(rename = "inamp-electrode-2")]
    InampElectrode2,
    /// Wired straight to the ADC, no in-amp stage.
    Direct,
    Unused,
}

impl ChannelRole {
    pub fn is_measurable(self) -> bool {
        matches!(
            self,
            ChannelRole::InampElectrode1 | ChannelRole::InampElectrode2 | ChannelRole::Direct
        )
    }

    pub fn has_inamp(self) -> bool {
        matches!(
            self,
            ChannelRole::InampElectrode1 | ChannelRole::InampElectrode2
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundMode {
    /// No ground electrode attached.
    None,
    /// Ground electrode on the active (DRL) pin.
    Drl,
    /// Ground electrode held at the virtual ground.
    VirtualGround,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelAssignment {
    pub input: AdcInput,
    pub role: ChannelRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MontageRepr {
    channels: Vec<ChannelAssignment>,
    reference: String,
    ground: GroundMode,
}

/// Electrode-to-input assignment. Construction enforces the board topology:
/// AIN0 is the virtual ground, the two in-amp channels are AIN1 and AIN2, and
/// AIN3..AIN7 are direct inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MontageRepr", into = "MontageRepr")]
pub struct Montage {
    channels: Vec<ChannelAssignment>,
    reference: String,
    ground: GroundMode,
}

impl TryFrom<MontageRepr> for Montage {
    type Error = AfeError;
    fn try_from(r: MontageRepr) -> Result<Self, Self::Error> {
        Montage::new(r.channels, r.reference, r.ground)
    }
}

impl From<Montage> for MontageRepr {
    fn from(m: Montage) -> Self {
        MontageRepr {
            channels: m.channels,
            reference: m.reference,
            ground: m.ground,
        }
    }
}

impl Montage {
    pub fn new(
        channels: Vec<ChannelAssignment>,
        reference: impl Into<String>,
        ground: GroundMode,
    ) -> Result<Self, AfeError> {
        let bad = |m: String| Err(AfeError::InvalidMontage(m));
        let mut seen = [false; 8];
        for c in &channels {
            let i = c.input.index() as usize;
            if seen[i] {
                return bad(format!("{} assigned twice", c.input));
            }
            seen[i] = true;
            let ok = match (i, c.role) {
                (0, ChannelRole::VirtualGround) => true,
                (0, _) | (_, ChannelRole::VirtualGround) => false,
                (1, ChannelRole::InampElectrode1 | ChannelRole::Unused) => true,
                (2, ChannelRole::InampElectrode2 | ChannelRole::Unused) => true,
                (1 | 2, _) => false,
                (_, ChannelRole::Direct | ChannelRole::Unused) => true,
                (_, _) => false,
            };
            if !ok {
                return bad(format!("{} cannot take role {:?}", c.input, c.role));
            }
        }
        let mut channels = channels;
        channels.sort_by_key(|c| c.input);
        let m = Self {
            channels,
            reference: reference.into(),
            ground,
        };
        if m.measurable().is_empty() {
            return bad("no measurable channel".into());
        }
        Ok(m)
    }

    /// Left-ear measurement on electrode 1 against a right-ear reference, no
    /// ground electrode.
    pub fn ear_study() -> Self {
        Self::new(
            vec![
                ChannelAssignment {
                    input: AdcInput::AIN0,
                    role: ChannelRole::VirtualGround,
                },
                ChannelAssignment {
                    input: AdcInput::AIN1,
                    role: ChannelRole::InampElectrode1,
                },
            ],
            "right-ear",
            GroundMode::None,
        )
        .expect("static montage is valid")
    }

    /// Both in-amp channels, with a ground electrode on the DRL pin.
    pub fn dual_inamp_drl() -> Self {
        Self::new(
            vec![
                ChannelAssignment {
                    input: AdcInput::AIN0,
                    role: ChannelRole::VirtualGround,
                },
                ChannelAssignment {
                    input: AdcInput::AIN1,
                    role: ChannelRole::InampElectrode1,
                },
                ChannelAssignment {
                    input: AdcInput::AIN2,
                    role: ChannelRole::InampElectrode2,
                },
            ],
            "right-ear",
            GroundMode::Drl,
        )
        .expect("static montage is valid")
    }

    pub fn with_ground(mut self, ground: GroundMode) -> Self {
        self.ground = ground;
        self
    }

    pub fn channels(&self) -> &[ChannelAssignment] {
        &self.channels
    }

    pub fn reference(&self) -> &str {
        &self.reference
    }

    pub fn ground(&self) -> GroundMode {
        self.ground
    }

    /// Measurable channels in input order.
    pub fn measurable(&self) -> Vec<ChannelAssignment> {
        self.channels
            .iter()
            .copied()
            .filter(|c| c.role.is_measurable())
            .collect()
    }

    pub fn n_channels(&self) -> usize {
        self.measurable().len()
    }

    /// Wire-format channel mask: bit `i` set when AIN(i+1) is measured.
    pub fn channel_mask(&self) -> u8 {
        self.measurable()
            .iter()
            .fold(0u8, |m, c| m | 1 << (c.input.index() - 1))
    }

    /// DRL feedback only reaches the body through a ground electrode on the
    /// DRL pin.
    pub fn drl_active(&self, cfg: &AfeConfig) -> bool {
        cfg.drl_enabled && self.ground == GroundMode::Drl
    }
}
