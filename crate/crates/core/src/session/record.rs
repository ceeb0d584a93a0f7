use std::path::Path;

use super::{Annotation, AnnotationSource, Session, SessionError, SessionMeta, SessionTransport};
use crate::sim::{simulate_acquisition, Scenario};
use crate::wire::{plan_packetization, Packetizer, TransportClass};

const APPEND_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct RecordSummary {
    pub meta: SessionMeta,
    pub frames: u64,
    pub annotations: usize,
}

/// Runs a scenario to completion and stores it as a session in `dir`,
/// framed exactly as a serial link would carry it. The protocol script's
/// labels become annotations.
pub fn record_scenario(scenario: &Scenario, dir: &Path) -> Result<RecordSummary, SessionError> {
    let mut acq = simulate_acquisition(scenario)?;
    let meta = SessionMeta::new(
        scenario.afe.clone(),
        scenario.montage.clone(),
        SessionTransport::Simulated,
    )
    .with_scenario(scenario.clone());
    let mut session = Session::create(dir, meta)?;

    let count = plan_packetization(acq.sps(), acq.n_channels(), TransportClass::Serial)?;
    let mut packetizer = Packetizer::new(acq.channel_mask(), count, TransportClass::Serial);
    packetizer.set_drl(acq.drl_enabled());
    let mut codes = vec![0; acq.n_channels()];
    let mut batch = Vec::with_capacity(APPEND_BATCH);
    let mut frames = 0u64;
    while let Some(t_us) = acq.next_into(&mut codes) {
        if let Some(f) = packetizer.push(t_us, &codes) {
            batch.push(f);
            if batch.len() == APPEND_BATCH {
                frames += session.append_frames(&batch)? as u64;
                batch.clear();
            }
        }
    }
    batch.extend(packetizer.flush());
    frames += session.append_frames(&batch)? as u64;

    let sps = acq.sps() as f64;
    for m in acq.marks() {
        let tick = (m.t_s * sps).round() as u64;
        session.annotate(&Annotation::new(
            acq.timestamp_us(tick),
            m.label.clone(),
            AnnotationSource::ProtocolScript,
        ))?;
    }
    let annotations = acq.marks().len();
    let meta = session.finish()?;
    Ok(RecordSummary {
        meta,
        frames,
        annotations,
    })
}
