use std::f64::consts::PI;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{PursuitEvent, Rendered, Scenario, ScriptMark, SimError};
use crate::afe::{
    adc_quantize, drl_factor, inamp_unchecked, line_rejection_filter, AfeConfig, GroundMode,
};
use crate::dsp::SosFilter;

const DRIFT_HZ: [f64; 3] = [0.05, 0.11, 0.23];

/// One converter tick: time since start and one code per measured channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tick {
    pub t_us: u64,
    pub codes: Vec<i32>,
}

struct Channel {
    cfg: AfeConfig,
    line: Option<SosFilter>,
    rng: ChaCha8Rng,
    drift_phase: [f64; 3],
}

/// Sample-by-sample acquisition of a scenario through DRL, in-amp, line
/// filter and converter.
///
/// The DRL switch can be flipped while iterating through the handle from
/// [`Acquisition::drl_switch`].
pub struct Acquisition {
    sps: u32,
    index: u64,
    looping: bool,
    rendered: Rendered,
    channels: Vec<Channel>,
    channel_mask: u8,
    cm_amp_v: f64,
    cm_phase: f64,
    line_w: f64,
    white_uv: f64,
    drift_uv: f64,
    cm_fraction: f64,
    drl: Arc<AtomicBool>,
    drl_factor: f64,
    ground_drl: bool,
}

/// Renders the scenario's physiology and prepares the acquisition chain.
pub fn simulate_acquisition(scenario: &Scenario) -> Result<Acquisition, SimError> {
    Acquisition::new(scenario)
}

impl Acquisition {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let afe = &scenario.afe;
        let sps = afe.sps as f64;
        let rendered = scenario.physiology.render(sps)?;

        let mut cm_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        let cm_phase = cm_rng.random::<f64>() * 2.0 * PI;
        let channels = scenario
            .montage
            .measurable()
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let mut cfg = afe.clone();
                if !c.role.has_inamp() {
                    cfg.gain = 1.0;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
                rng.set_stream(k as u64 + 1);
                let drift_phase = [0; 3].map(|_| rng.random::<f64>() * 2.0 * PI);
                Channel {
                    line: afe.line_filter.then(|| line_rejection_filter(&cfg)),
                    cfg,
                    rng,
                    drift_phase,
                }
            })
            .collect();

        let mut drl_on = afe.clone();
        drl_on.drl_enabled = true;
        Ok(Self {
            sps: afe.sps,
            index: 0,
            looping: false,
            rendered,
            channels,
            channel_mask: scenario.montage.channel_mask(),
            cm_amp_v: scenario.noise.powerline_amp_uv * 1e-6,
            cm_phase,
            line_w: 2.0 * PI * afe.powerline_hz as f64 / sps,
            white_uv: scenario.noise.white_uv_rms,
            drift_uv: scenario.noise.drift_uv,
            cm_fraction: scenario.noise.cm_to_diff_fraction,
            drl: Arc::new(AtomicBool::new(afe.drl_enabled)),
            drl_factor: drl_factor(&drl_on),
            ground_drl: scenario.montage.ground() == GroundMode::Drl,
        })
    }

    /// Repeat the physiology indefinitely; contamination and timestamps keep
    /// running.
    pub fn looping(mut self) -> Self {
        self.looping = true;
        self
    }

    pub fn sps(&self) -> u32 {
        self.sps
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel_mask(&self) -> u8 {
        self.channel_mask
    }

    /// Samples per channel in one pass of the physiology.
    pub fn len(&self) -> u64 {
        self.rendered.series_uv.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.rendered.series_uv.is_empty()
    }

    pub fn position(&self) -> u64 {
        self.index
    }

    pub fn marks(&self) -> &[ScriptMark] {
        &self.rendered.marks
    }

    pub fn truth(&self) -> &[PursuitEvent] {
        &self.rendered.truth
    }

    pub fn drl_switch(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.drl)
    }

    pub fn set_drl(&self, on: bool) {
        self.drl.store(on, Ordering::Relaxed);
    }

    pub fn drl_enabled(&self) -> bool {
        self.drl.load(Ordering::Relaxed)
    }

    /// Timestamp of sample `i`: `floor(i * 1e6 / sps)` microseconds.
    pub fn timestamp_us(&self, i: u64) -> u64 {
        i * 1_000_000 / self.sps as u64
    }

    /// Writes the next tick into `codes` (one slot per channel) and returns
    /// its timestamp.
    pub fn next_into(&mut self, codes: &mut [i32]) -> Option<u64> {
        let n = self.rendered.series_uv.len() as u64;
        if n == 0 || (!self.looping && self.index >= n) {
            return None;
        }
        let i = self.index;
        let phys = self.rendered.series_uv[(i % n) as usize];
        let t = i as f64 / self.sps as f64;

        let mut cm = self.cm_amp_v * (self.line_w * i as f64 + self.cm_phase).sin();
        if self.ground_drl && self.drl.load(Ordering::Relaxed) {
            cm *= self.drl_factor;
        }
        let leak_uv = self.cm_fraction * cm * 1e6;

        for (ch, out) in self.channels.iter_mut().zip(codes.iter_mut()) {
            let mut diff_uv = phys + leak_uv;
            if self.white_uv > 0.0 {
                let z: f64 = StandardNormal.sample(&mut ch.rng);
                diff_uv += self.white_uv * z;
            }
            if self.drift_uv > 0.0 {
                let d: f64 = DRIFT_HZ
                    .iter()
                    .zip(ch.drift_phase)
                    .map(|(f, p)| (2.0 * PI * f * t + p).sin())
                    .sum();
                diff_uv += self.drift_uv * d / DRIFT_HZ.len() as f64;
            }
            let mut v = inamp_unchecked(diff_uv * 1e-6, cm, &ch.cfg);
            if let Some(f) = ch.line.as_mut() {
                let vg = ch.cfg.virtual_ground();
                v = vg + f.process_sample(v - vg);
            }
            *out = adc_quantize(v, &ch.cfg);
        }
        self.index += 1;
        Some(self.timestamp_us(i))
    }
}

impl Iterator for Acquisition {
    type Item = Tick;

    fn next(&mut self) -> Option<Tick> {
        let mut codes = vec![0; self.channels.len()];
        self.next_into(&mut codes).map(|t_us| Tick { t_us, codes })
    }
}
