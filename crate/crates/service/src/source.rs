//! Sample producers the service can drive.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use earexg::afe::{AfeConfig, Montage};
use earexg::session::SessionReader;
use earexg::session::SessionTransport;
use earexg::sim::{simulate_acquisition, Acquisition, NoiseModel, Scenario};
use earexg::wire::TransportClass;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

/// Validated acquisition settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub afe: AfeConfig,
    pub montage: Montage,
    pub transport: TransportClass,
}

/// A tick-by-tick sample producer.
pub trait SampleSource: Send {
    fn sps(&self) -> u32;
    fn channel_mask(&self) -> u8;
    fn n_channels(&self) -> usize {
        self.channel_mask().count_ones() as usize
    }
    /// Writes the next tick into `codes` and returns its timestamp in
    /// microseconds since the source started, or `None` when exhausted.
    fn next_tick(&mut self, codes: &mut [i32]) -> Result<Option<u64>, ServiceError>;
    /// Live DRL switch, when the source has one.
    fn drl_switch(&self) -> Option<Arc<AtomicBool>> {
        None
    }
}

/// Opens a fresh source for each run.
pub trait SourceFactory: Send + Sync {
    fn describe(&self) -> String;
    /// Configuration the source imposes, if it cannot be reconfigured.
    fn fixed_config(&self) -> Option<StreamConfig> {
        None
    }
    /// Scenario metadata to store with recordings.
    fn scenario(&self, _cfg: &StreamConfig) -> Option<Scenario> {
        None
    }
    /// Transport recorded in session metadata.
    fn session_transport(&self, cfg: &StreamConfig) -> SessionTransport {
        match cfg.transport {
            TransportClass::Serial => SessionTransport::Serial,
            TransportClass::Ble => SessionTransport::Ble,
        }
    }
    fn open(&self, cfg: &StreamConfig) -> Result<Box<dyn SampleSource>, ServiceError>;
}

pub struct SimulatorSource {
    acq: Acquisition,
}

impl SimulatorSource {
    pub fn new(acq: Acquisition) -> Self {
        Self { acq }
    }
}

impl SampleSource for SimulatorSource {
    fn sps(&self) -> u32 {
        self.acq.sps()
    }

    fn channel_mask(&self) -> u8 {
        self.acq.channel_mask()
    }

    fn n_channels(&self) -> usize {
        self.acq.n_channels()
    }

    fn next_tick(&mut self, codes: &mut [i32]) -> Result<Option<u64>, ServiceError> {
        Ok(self.acq.next_into(codes))
    }

    fn drl_switch(&self) -> Option<Arc<AtomicBool>> {
        Some(self.acq.drl_switch())
    }
}

/// Runs a scenario with the configured front end and montage.
#[derive(Debug, Clone)]
pub struct SimulatorFactory {
    scenario: Scenario,
    looping: bool,
}

impl SimulatorFactory {
    /// The physiology repeats, so the source never runs out.
    pub fn looping(scenario: Scenario) -> Self {
        Self {
            scenario,
            looping: true,
        }
    }

    /// The source ends with the scenario.
    pub fn once(scenario: Scenario) -> Self {
        Self {
            scenario,
            looping: false,
        }
    }

    pub fn scenario_for(&self, cfg: &StreamConfig) -> Scenario {
        Scenario {
            afe: cfg.afe.clone(),
            montage: cfg.montage.clone(),
            ..self.scenario.clone()
        }
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.scenario.noise
    }

    /// Front end and montage the scenario was written for.
    pub fn default_config(&self, transport: TransportClass) -> StreamConfig {
        StreamConfig {
            afe: self.scenario.afe.clone(),
            montage: self.scenario.montage.clone(),
            transport,
        }
    }
}

impl SourceFactory for SimulatorFactory {
    fn describe(&self) -> String {
        format!(
            "simulator:{}{}",
            self.scenario.physiology.kind(),
            if self.looping { " (looping)" } else { "" }
        )
    }

    fn scenario(&self, cfg: &StreamConfig) -> Option<Scenario> {
        Some(self.scenario_for(cfg))
    }

    fn session_transport(&self, _cfg: &StreamConfig) -> SessionTransport {
        SessionTransport::Simulated
    }

    fn open(&self, cfg: &StreamConfig) -> Result<Box<dyn SampleSource>, ServiceError> {
        let acq = simulate_acquisition(&self.scenario_for(cfg))?;
        Ok(Box::new(SimulatorSource::new(if self.looping {
            acq.looping()
        } else {
            acq
        })))
    }
}

/// Re-streams a recorded session with its original timing.
pub struct ReplaySource {
    codes: Vec<i32>,
    times_us: Vec<u64>,
    n_channels: usize,
    channel_mask: u8,
    sps: u32,
    pos: usize,
    drl: Arc<AtomicBool>,
}

impl ReplaySource {
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        let r = SessionReader::open(dir)?;
        let meta = r.meta();
        let n = r.n_samples();
        Ok(Self {
            codes: r.read_range(0..n)?,
            times_us: (0..n).map(|i| meta.time_of_us(i)).collect(),
            n_channels: meta.n_channels,
            channel_mask: meta.channel_mask,
            sps: meta.sps,
            pos: 0,
            drl: Arc::new(AtomicBool::new(meta.afe.drl_enabled)),
        })
    }
}

impl SampleSource for ReplaySource {
    fn sps(&self) -> u32 {
        self.sps
    }

    fn channel_mask(&self) -> u8 {
        self.channel_mask
    }

    fn n_channels(&self) -> usize {
        self.n_channels
    }

    fn next_tick(&mut self, codes: &mut [i32]) -> Result<Option<u64>, ServiceError> {
        let Some(&t) = self.times_us.get(self.pos) else {
            return Ok(None);
        };
        let n = self.n_channels;
        codes.copy_from_slice(&self.codes[self.pos * n..(self.pos + 1) * n]);
        self.pos += 1;
        Ok(Some(t))
    }

    /// The recorded data cannot change, but the flag still travels in the
    /// frame header.
    fn drl_switch(&self) -> Option<Arc<AtomicBool>> {
        Some(Arc::clone(&self.drl))
    }
}

#[derive(Debug, Clone)]
pub struct ReplayFactory {
    dir: PathBuf,
    config: StreamConfig,
    recorded_transport: SessionTransport,
}

impl ReplayFactory {
    pub fn new(dir: impl Into<PathBuf>, transport: TransportClass) -> Result<Self, ServiceError> {
        let dir = dir.into();
        let r = SessionReader::open(&dir)?;
        Ok(Self {
            config: StreamConfig {
                afe: r.meta().afe.clone(),
                montage: r.meta().montage.clone(),
                transport,
            },
            recorded_transport: r.meta().transport,
            dir,
        })
    }
}

impl SourceFactory for ReplayFactory {
    fn describe(&self) -> String {
        format!("replay:{}", self.dir.display())
    }

    fn fixed_config(&self) -> Option<StreamConfig> {
        Some(self.config.clone())
    }

    fn session_transport(&self, _cfg: &StreamConfig) -> SessionTransport {
        self.recorded_transport
    }

    fn open(&self, _cfg: &StreamConfig) -> Result<Box<dyn SampleSource>, ServiceError> {
        let s = ReplaySource::open(&self.dir)?;
        let drl = s.drl_switch().expect("replay has a flag");
        drl.store(self.config.afe.drl_enabled, Ordering::Relaxed);
        Ok(Box::new(s))
    }
}

/// Placeholder for a wired device on a serial port. The device-side GATT and
/// serial framing are not published, so opening always fails.
#[derive(Debug, Clone)]
pub struct SerialFactory {
    pub port: String,
}

impl SourceFactory for SerialFactory {
    fn describe(&self) -> String {
        format!("serial:{}", self.port)
    }

    fn open(&self, _cfg: &StreamConfig) -> Result<Box<dyn SampleSource>, ServiceError> {
        Err(ServiceError::Source(format!(
            "no hardware driver for serial port {}",
            self.port
        )))
    }
}
