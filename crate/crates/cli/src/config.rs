//! `--config` file: a JSON object whose fields act as defaults for command
//! flags. Flags given on the command line win.

use std::path::{Path, PathBuf};

use earexg::sim::Scenario;
use earexg::wire::TransportClass;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    /// Listen address for `serve` and `replay`.
    pub addr: Option<String>,
    /// WebSocket URL for `record`.
    pub url: Option<String>,
    pub transport: Option<TransportClass>,
    /// Root directory for sessions recorded by `serve` and `replay`.
    pub record_dir: Option<PathBuf>,
    /// Frames a WebSocket client may fall behind before the oldest is dropped.
    pub queue_depth: Option<usize>,
    /// Scenario used by `simulate` and `serve` when no flag names one.
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub channel: Option<usize>,
    pub settle_s: Option<f64>,
    pub svg: Option<bool>,
}

impl CliConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))?;
        let cfg: CliConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))?;
        if let Some(s) = &cfg.scenario {
            s.validate()?;
        }
        Ok(cfg)
    }
}
