//! Live streaming service. A pump thread pulls ticks from a
//! [`SampleSource`] and encodes them into wire frames. Every encoded frame
//! goes to the recorder over a bounded blocking channel, where it is decoded
//! and stored, and to UI subscribers through drop-oldest queues. A slow
//! browser therefore loses frames on screen but never on disk.
//!
//! [`ws::serve`] exposes the service over a WebSocket: JSON control in text
//! messages, frames in binary messages.

pub mod broadcast;
pub mod control;
mod quality;
mod service;
pub mod source;
pub mod ws;

use earexg::afe::AfeError;
use earexg::session::SessionError;
use earexg::sim::SimError;
use earexg::wire::WireError;
use thiserror::Error;

pub use broadcast::{
    Broadcaster, DropOldestQueue, SubscriberPolicy, SubscriberStatus, Subscription,
};
pub use control::{ControlMessage, Request, RunState, ServerMessage, StatusReport};
pub use quality::LineQuality;
pub use service::{Pacing, RunSummary, ServiceOptions, StreamService};
pub use source::{
    ReplayFactory, SampleSource, SerialFactory, SimulatorFactory, SourceFactory, StreamConfig,
};

/// Default listen address for `serve`.
pub const DEFAULT_ADDR: &str = "127.0.0.1:8843";
/// Overrides the port of [`DEFAULT_ADDR`].
pub const PORT_ENV: &str = "EAREXG_PORT";

/// Listen address after applying [`PORT_ENV`].
pub fn default_addr() -> Result<std::net::SocketAddr, ServiceError> {
    let mut addr: std::net::SocketAddr = DEFAULT_ADDR.parse().expect("static address");
    if let Ok(p) = std::env::var(PORT_ENV) {
        let port = p
            .trim()
            .parse::<u16>()
            .map_err(|_| ServiceError::Config(format!("{PORT_ENV}={p:?} is not a port")))?;
        addr.set_port(port);
    }
    Ok(addr)
}

#[derive(Debug, Error)]
pub enum ServiceError {
    /// The command is not allowed in the current state.
    #[error("illegal transition: {command} while {state}")]
    IllegalTransition {
        command: &'static str,
        state: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("source: {0}")]
    Source(String),
    #[error("recorder: {0}")]
    Recorder(String),
    #[error(transparent)]
    Afe(#[from] AfeError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/streaming.md")]
mod book_streaming {}
