use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use crossbeam_channel::{bounded, Receiver, Sender, TryRecvError};
use earexg::afe::{code_to_input_uv, AfeConfig};
use earexg::session::{Annotation, AnnotationSource, Session, SessionMeta};
use earexg::wire::{decode_frame, encode_frame, plan_packetization, Frame, Packetizer};
use serde::{Deserialize, Serialize};

use crate::broadcast::{Broadcaster, SubscriberPolicy, Subscription};
use crate::control::{ConfigurePayload, ControlMessage, RunState, StatusReport};
use crate::quality::LineQuality;
use crate::source::{SampleSource, SourceFactory, StreamConfig};
use crate::ServiceError;

/// Frames the recorder writes per storage call at most.
const RECORD_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pacing {
    /// Ticks leave no earlier than their timestamps.
    RealTime,
    /// As fast as the source, recorder and encoder allow.
    Fast,
}

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    /// Each run records into a fresh session under this directory.
    pub record_dir: Option<PathBuf>,
    pub pacing: Pacing,
    /// Frames buffered between pump and recorder before the pump waits.
    pub recorder_queue_frames: usize,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            record_dir: None,
            pacing: Pacing::RealTime,
            recorder_queue_frames: 1024,
        }
    }
}

/// Outcome of one start..stop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames_emitted: u64,
    pub frames_recorded: u64,
    pub samples_emitted: u64,
    /// The source ran out before `stop`.
    pub exhausted: bool,
    pub elapsed_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<SessionMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Default)]
struct RunShared {
    stop: AtomicBool,
    finished: AtomicBool,
    exhausted: AtomicBool,
    frames_emitted: AtomicU64,
    frames_recorded: AtomicU64,
    samples: AtomicU64,
    clock_us: AtomicU64,
    quality_bits: AtomicU64,
}

impl RunShared {
    fn quality(&self) -> Option<f64> {
        let q = f64::from_bits(self.quality_bits.load(Ordering::Relaxed));
        q.is_finite().then_some(q)
    }
}

enum RecMsg {
    /// Encoded exactly as on the wire; the recorder decodes it.
    Frame(Bytes),
    Annotate {
        t_us: u64,
        label: String,
        source: AnnotationSource,
        reply: Sender<Result<Annotation, String>>,
    },
    Finish {
        t_us: u64,
    },
}

struct Recorder {
    tx: Sender<RecMsg>,
    thread: JoinHandle<Result<SessionMeta, ServiceError>>,
    dir: PathBuf,
}

struct Run {
    shared: Arc<RunShared>,
    drl: Option<Arc<AtomicBool>>,
    pump: JoinHandle<Result<(), ServiceError>>,
    recorder: Option<Recorder>,
    started: Instant,
}

struct Inner {
    config: StreamConfig,
    run: Option<Run>,
    last: Option<RunSummary>,
    last_error: Option<String>,
}

/// Start/stop state machine around one source factory.
pub struct StreamService {
    factory: Arc<dyn SourceFactory>,
    options: ServiceOptions,
    frames: Broadcaster<Bytes>,
    inner: Mutex<Inner>,
}

fn validate_config(cfg: &StreamConfig) -> Result<(), ServiceError> {
    cfg.afe.validate()?;
    plan_packetization(cfg.afe.sps, cfg.montage.n_channels(), cfg.transport)?;
    Ok(())
}

impl StreamService {
    /// A factory with a fixed configuration overrides `config`.
    pub fn new(
        factory: Arc<dyn SourceFactory>,
        config: StreamConfig,
        options: ServiceOptions,
    ) -> Result<Self, ServiceError> {
        let config = factory.fixed_config().unwrap_or(config);
        validate_config(&config)?;
        Ok(Self {
            factory,
            options,
            frames: Broadcaster::new(),
            inner: Mutex::new(Inner {
                config,
                run: None,
                last: None,
                last_error: None,
            }),
        })
    }

    pub fn options(&self) -> &ServiceOptions {
        &self.options
    }

    /// Receives every encoded frame while subscribed.
    pub fn subscribe(&self, policy: SubscriberPolicy) -> Subscription<Bytes> {
        self.frames.subscribe(policy)
    }

    pub fn config(&self) -> StreamConfig {
        self.lock().config.clone()
    }

    pub fn state(&self) -> RunState {
        let mut inner = self.lock();
        self.reap(&mut inner);
        if inner.run.is_some() {
            RunState::Running
        } else {
            RunState::Stopped
        }
    }

    /// Summary of the most recent finished run.
    pub fn last_run(&self) -> Option<RunSummary> {
        let mut inner = self.lock();
        self.reap(&mut inner);
        inner.last.clone()
    }

    pub fn configure(&self, p: ConfigurePayload) -> Result<StreamConfig, ServiceError> {
        let mut inner = self.lock();
        self.reap(&mut inner);
        if inner.run.is_some() {
            return Err(ServiceError::IllegalTransition {
                command: "configure",
                state: "running",
            });
        }
        let mut cfg = inner.config.clone();
        if let Some(afe) = p.afe {
            cfg.afe = afe;
        }
        if let Some(m) = p.montage {
            cfg.montage = m;
        }
        if let Some(t) = p.transport {
            cfg.transport = t;
        }
        if let Some(sps) = p.sps {
            cfg.afe.sps = sps;
        }
        if let Some(fixed) = self.factory.fixed_config() {
            if cfg != fixed {
                return Err(ServiceError::Config(format!(
                    "{} has a fixed configuration",
                    self.factory.describe()
                )));
            }
        }
        validate_config(&cfg)?;
        inner.config = cfg.clone();
        Ok(cfg)
    }

    /// `record` overrides whether this run is recorded; recording needs a
    /// record directory.
    pub fn start(&self, record: Option<bool>) -> Result<StatusReport, ServiceError> {
        let mut inner = self.lock();
        self.reap(&mut inner);
        if inner.run.is_some() {
            return Err(ServiceError::IllegalTransition {
                command: "start",
                state: "running",
            });
        }
        let cfg = inner.config.clone();
        let record = record.unwrap_or(self.options.record_dir.is_some());
        let root = match (record, &self.options.record_dir) {
            (false, _) => None,
            (true, Some(d)) => Some(d.clone()),
            (true, None) => {
                return Err(ServiceError::Config(
                    "recording needs a record directory".into(),
                ))
            }
        };

        let source = self.factory.open(&cfg)?;
        if source.channel_mask() != cfg.montage.channel_mask() || source.sps() != cfg.afe.sps {
            return Err(ServiceError::Source(
                "source disagrees with the configured montage or rate".into(),
            ));
        }
        let drl = source.drl_switch();
        if let Some(d) = &drl {
            d.store(cfg.afe.drl_enabled, Ordering::Relaxed);
        }
        let shared = Arc::new(RunShared::default());
        shared
            .quality_bits
            .store(f64::NAN.to_bits(), Ordering::Relaxed);

        let recorder = match root {
            None => None,
            Some(root) => {
                let mut meta = SessionMeta::new(
                    cfg.afe.clone(),
                    cfg.montage.clone(),
                    self.factory.session_transport(&cfg),
                );
                if let Some(s) = self.factory.scenario(&cfg) {
                    meta = meta.with_scenario(s);
                }
                let mut session = Session::create_in(&root, meta)?;
                session.annotate(&Annotation::new(
                    0,
                    "start",
                    AnnotationSource::ProtocolScript,
                ))?;
                let dir = session.dir().to_path_buf();
                let (tx, rx) = bounded(self.options.recorder_queue_frames.max(1));
                let sh = Arc::clone(&shared);
                let thread = std::thread::Builder::new()
                    .name("earexg-recorder".into())
                    .spawn(move || recorder_loop(session, rx, &sh))?;
                Some(Recorder { tx, thread, dir })
            }
        };

        let pump = {
            let sh = Arc::clone(&shared);
            let frames = self.frames.clone();
            let rec_tx = recorder.as_ref().map(|r| r.tx.clone());
            let pacing = self.options.pacing;
            let drl = drl.clone();
            let cfg = cfg.clone();
            std::thread::Builder::new()
                .name("earexg-pump".into())
                .spawn(move || {
                    let r = pump_loop(source, &cfg, pacing, drl, &frames, rec_tx, &sh);
                    sh.finished.store(true, Ordering::Release);
                    r
                })?
        };
        log::info!(
            "started {} at {} SPS over {:?}",
            self.factory.describe(),
            cfg.afe.sps,
            cfg.transport
        );
        inner.run = Some(Run {
            shared,
            drl,
            pump,
            recorder,
            started: Instant::now(),
        });
        inner.last_error = None;
        Ok(self.report(&inner))
    }

    /// Stops the current run, flushing the last partial frame and closing
    /// the session.
    pub fn stop(&self) -> Result<RunSummary, ServiceError> {
        let mut inner = self.lock();
        let Some(run) = inner.run.take() else {
            return Err(ServiceError::IllegalTransition {
                command: "stop",
                state: "stopped",
            });
        };
        run.shared.stop.store(true, Ordering::Release);
        let summary = self.finalize(&mut inner, run);
        Ok(summary)
    }

    /// Blocks until the source runs out or `timeout` passes, then closes the
    /// run. Returns `None` on timeout or when nothing was running.
    pub fn wait(&self, timeout: Duration) -> Option<RunSummary> {
        let deadline = Instant::now().checked_add(timeout);
        let shared = Arc::clone(&self.lock().run.as_ref()?.shared);
        while !shared.finished.load(Ordering::Acquire) {
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return None;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        let mut inner = self.lock();
        let run = inner.run.take()?;
        Some(self.finalize(&mut inner, run))
    }

    /// Writes an annotation at the current service clock. Rapid requests get
    /// strictly increasing times.
    pub fn annotate(
        &self,
        label: &str,
        source: AnnotationSource,
    ) -> Result<Annotation, ServiceError> {
        let (tx, t_us) = {
            let mut inner = self.lock();
            self.reap(&mut inner);
            let Some(run) = inner.run.as_ref() else {
                return Err(ServiceError::IllegalTransition {
                    command: "annotate",
                    state: "stopped",
                });
            };
            let Some(rec) = run.recorder.as_ref() else {
                return Err(ServiceError::Recorder(
                    "this run is not being recorded".into(),
                ));
            };
            if label.trim().is_empty() {
                return Err(ServiceError::Config("empty annotation label".into()));
            }
            (rec.tx.clone(), run.shared.clock_us.load(Ordering::Acquire))
        };
        // Sent outside the lock: the queue may be full of frames.
        let (reply, answer) = bounded(1);
        tx.send(RecMsg::Annotate {
            t_us,
            label: label.to_string(),
            source,
            reply,
        })
        .map_err(|_| ServiceError::Recorder("recorder has stopped".into()))?;
        answer
            .recv()
            .map_err(|_| ServiceError::Recorder("recorder has stopped".into()))?
            .map_err(ServiceError::Recorder)
    }

    /// While running the switch acts on the next tick; while stopped it is
    /// staged for the next start.
    pub fn set_drl(&self, enabled: bool) -> Result<bool, ServiceError> {
        let mut inner = self.lock();
        self.reap(&mut inner);
        if self.factory.fixed_config().is_some() {
            return Err(ServiceError::Config(format!(
                "{} has a fixed configuration",
                self.factory.describe()
            )));
        }
        if let Some(run) = &inner.run {
            match &run.drl {
                Some(d) => d.store(enabled, Ordering::Release),
                None => return Err(ServiceError::Source("source has no DRL switch".into())),
            }
        }
        inner.config.afe.drl_enabled = enabled;
        Ok(enabled)
    }

    pub fn status(&self) -> StatusReport {
        let mut inner = self.lock();
        self.reap(&mut inner);
        self.report(&inner)
    }

    /// Executes one control message and returns its result payload.
    pub fn handle(&self, msg: ControlMessage) -> Result<serde_json::Value, ServiceError> {
        let json = |v: Result<serde_json::Value, serde_json::Error>| {
            v.map_err(|e| ServiceError::Config(e.to_string()))
        };
        match msg {
            ControlMessage::Configure(p) => json(serde_json::to_value(self.configure(p)?)),
            ControlMessage::Start(p) => json(serde_json::to_value(self.start(p.record)?)),
            ControlMessage::Stop => json(serde_json::to_value(self.stop()?)),
            ControlMessage::Annotate(p) => {
                json(serde_json::to_value(self.annotate(&p.label, p.source)?))
            }
            ControlMessage::Status => json(serde_json::to_value(self.status())),
            ControlMessage::SetDrl(p) => {
                Ok(serde_json::json!({ "drl_enabled": self.set_drl(p.enabled)? }))
            }
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Closes a run whose source has run out.
    fn reap(&self, inner: &mut Inner) {
        let done = inner
            .run
            .as_ref()
            .is_some_and(|r| r.shared.finished.load(Ordering::Acquire));
        if done {
            let run = inner.run.take().expect("checked above");
            self.finalize(inner, run);
        }
    }

    fn finalize(&self, inner: &mut Inner, run: Run) -> RunSummary {
        let mut errors = Vec::new();
        match run.pump.join() {
            Ok(Ok(())) => {}
            Ok(Err(e)) => errors.push(format!("pump: {e}")),
            Err(_) => errors.push("pump panicked".into()),
        }
        let clock = run.shared.clock_us.load(Ordering::Acquire);
        let (session, session_dir) = match run.recorder {
            None => (None, None),
            Some(rec) => {
                // The pump has exited, so this is the last message.
                let _ = rec.tx.send(RecMsg::Finish { t_us: clock });
                drop(rec.tx);
                match rec.thread.join() {
                    Ok(Ok(meta)) => (Some(meta), Some(rec.dir)),
                    Ok(Err(e)) => {
                        errors.push(format!("recorder: {e}"));
                        (None, Some(rec.dir))
                    }
                    Err(_) => {
                        errors.push("recorder panicked".into());
                        (None, Some(rec.dir))
                    }
                }
            }
        };
        let sh = &run.shared;
        let summary = RunSummary {
            frames_emitted: sh.frames_emitted.load(Ordering::Acquire),
            frames_recorded: sh.frames_recorded.load(Ordering::Acquire),
            samples_emitted: sh.samples.load(Ordering::Acquire),
            exhausted: sh.exhausted.load(Ordering::Acquire),
            elapsed_s: run.started.elapsed().as_secs_f64(),
            session_dir,
            session,
            error: (!errors.is_empty()).then(|| errors.join("; ")),
        };
        if let Some(e) = &summary.error {
            log::error!("run ended with errors: {e}");
        }
        log::info!(
            "stopped: {} frames emitted, {} recorded",
            summary.frames_emitted,
            summary.frames_recorded
        );
        inner.last_error = summary.error.clone();
        inner.last = Some(summary.clone());
        summary
    }

    fn report(&self, inner: &Inner) -> StatusReport {
        let cfg = &inner.config;
        let (state, frames_emitted, frames_recorded, samples, clock, quality, dir) =
            match &inner.run {
                Some(run) => {
                    let sh = &run.shared;
                    (
                        RunState::Running,
                        sh.frames_emitted.load(Ordering::Relaxed),
                        sh.frames_recorded.load(Ordering::Relaxed),
                        sh.samples.load(Ordering::Relaxed),
                        sh.clock_us.load(Ordering::Relaxed),
                        sh.quality(),
                        run.recorder.as_ref().map(|r| r.dir.clone()),
                    )
                }
                None => match &inner.last {
                    Some(l) => (
                        RunState::Stopped,
                        l.frames_emitted,
                        l.frames_recorded,
                        l.samples_emitted,
                        0,
                        None,
                        l.session_dir.clone(),
                    ),
                    None => (RunState::Stopped, 0, 0, 0, 0, None, None),
                },
            };
        StatusReport {
            state,
            source: self.factory.describe(),
            config: cfg.clone(),
            sps: cfg.afe.sps,
            channel_mask: cfg.montage.channel_mask(),
            transport: cfg.transport,
            drl_enabled: cfg.afe.drl_enabled,
            frames_emitted,
            frames_recorded,
            samples_emitted: samples,
            clock_us: clock,
            subscribers: self.frames.status(),
            quality_uv_rms: quality,
            session_dir: dir.map(|d| d.display().to_string()),
            last_error: inner.last_error.clone(),
        }
    }
}

impl Drop for StreamService {
    fn drop(&mut self) {
        let mut inner = self.lock();
        if let Some(run) = inner.run.take() {
            run.shared.stop.store(true, Ordering::Release);
            self.finalize(&mut inner, run);
        }
        drop(inner);
        self.frames.close_all();
    }
}

/// Front-end settings seen by the first measured channel.
fn first_channel_afe(cfg: &StreamConfig) -> AfeConfig {
    let mut afe = cfg.afe.clone();
    if let Some(c) = cfg.montage.measurable().first() {
        if !c.role.has_inamp() {
            afe.gain = 1.0;
        }
    }
    afe
}

fn pump_loop(
    mut source: Box<dyn SampleSource>,
    cfg: &StreamConfig,
    pacing: Pacing,
    drl: Option<Arc<AtomicBool>>,
    frames: &Broadcaster<Bytes>,
    recorder: Option<Sender<RecMsg>>,
    sh: &RunShared,
) -> Result<(), ServiceError> {
    let n = source.n_channels();
    let count = plan_packetization(source.sps(), n, cfg.transport)?;
    let mut pk = Packetizer::new(source.channel_mask(), count, cfg.transport);
    let ch0 = first_channel_afe(cfg);
    let mut quality = LineQuality::new(cfg.afe.powerline_hz, source.sps());
    let quality_every = (source.sps() as u64 / 10).max(1);
    let mut codes = vec![0i32; n];
    let started = Instant::now();

    let emit = |frame: Frame| -> Result<(), ServiceError> {
        let bytes = Bytes::from(encode_frame(&frame)?);
        if let Some(tx) = &recorder {
            tx.send(RecMsg::Frame(bytes.clone()))
                .map_err(|_| ServiceError::Recorder("recorder has stopped".into()))?;
        }
        frames.publish(&bytes);
        sh.frames_emitted.fetch_add(1, Ordering::AcqRel);
        Ok(())
    };

    let mut i = 0u64;
    while !sh.stop.load(Ordering::Acquire) {
        let Some(t_us) = source.next_tick(&mut codes)? else {
            sh.exhausted.store(true, Ordering::Release);
            break;
        };
        if pacing == Pacing::RealTime {
            let due = Duration::from_micros(t_us);
            let now = started.elapsed();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        if let Some(d) = &drl {
            pk.set_drl(d.load(Ordering::Acquire));
        }
        if let Some(q) = quality.as_mut() {
            q.push(code_to_input_uv(codes[0], &ch0));
            if i.is_multiple_of(quality_every) {
                let v = q.rms().unwrap_or(f64::NAN);
                sh.quality_bits.store(v.to_bits(), Ordering::Relaxed);
            }
        }
        sh.clock_us.store(t_us, Ordering::Release);
        sh.samples.fetch_add(1, Ordering::AcqRel);
        if let Some(f) = pk.push(t_us, &codes) {
            emit(f)?;
        }
        i += 1;
    }
    if let Some(f) = pk.flush() {
        emit(f)?;
    }
    Ok(())
}

fn recorder_loop(
    mut session: Session,
    rx: Receiver<RecMsg>,
    sh: &RunShared,
) -> Result<SessionMeta, ServiceError> {
    let mut batch: Vec<Frame> = Vec::with_capacity(RECORD_BATCH);
    let flush = |session: &mut Session, batch: &mut Vec<Frame>| -> Result<(), ServiceError> {
        if !batch.is_empty() {
            let n = session.append_frames(batch)?;
            sh.frames_recorded.fetch_add(n as u64, Ordering::AcqRel);
            batch.clear();
        }
        Ok(())
    };
    let next_time = |session: &Session, t_us: u64| match session.last_annotation_us() {
        Some(last) if t_us <= last => last + 1,
        _ => t_us,
    };
    loop {
        let msg = match rx.try_recv() {
            Ok(m) => m,
            Err(TryRecvError::Empty) => {
                flush(&mut session, &mut batch)?;
                match rx.recv() {
                    Ok(m) => m,
                    Err(_) => break,
                }
            }
            Err(TryRecvError::Disconnected) => break,
        };
        match msg {
            RecMsg::Frame(b) => {
                batch.push(decode_frame(&b)?);
                if batch.len() >= RECORD_BATCH {
                    flush(&mut session, &mut batch)?;
                }
            }
            RecMsg::Annotate {
                t_us,
                label,
                source,
                reply,
            } => {
                flush(&mut session, &mut batch)?;
                let a = Annotation::new(next_time(&session, t_us), label, source);
                let r = session.annotate(&a).map(|()| a).map_err(|e| e.to_string());
                let _ = reply.send(r);
            }
            RecMsg::Finish { t_us } => {
                flush(&mut session, &mut batch)?;
                let a = Annotation::new(
                    next_time(&session, t_us),
                    "stop",
                    AnnotationSource::ProtocolScript,
                );
                session.annotate(&a)?;
                break;
            }
        }
    }
    flush(&mut session, &mut batch)?;
    Ok(session.finish()?)
}
