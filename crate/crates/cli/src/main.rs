//! `earexg`: simulate, stream, record, replay and analyze ear-EEG sessions.
//!
//! Exit status: 0 on success or analysis PASS, 1 on analysis FAIL, 2 on any
//! usage, validation or runtime error.

mod config;
mod record;

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use earexg::afe::{AfeConfig, Montage};
use earexg::analysis::{
    alpha_contrast, clench_contrast, ground_truth, pursuit_report, AnalysisOptions,
};
use earexg::session::{export_csv, record_scenario, SessionReader};
use earexg::sim::Scenario;
use earexg::wire::{encode_frame, to_hex, Frame, TransportClass};
use earexg_service::ws::{bind, serve, WsOptions};
use earexg_service::{
    default_addr, Pacing, ReplayFactory, ServiceOptions, SimulatorFactory, SourceFactory,
    StreamService, SubscriberPolicy,
};

use config::CliConfig;

#[derive(Parser, Debug)]
#[command(name = "earexg", version, about = "Ear-worn ExG signal chain tools")]
struct Cli {
    /// JSON file with defaults for command flags.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a scenario through the front-end model into a session.
    Simulate(SimulateArgs),
    /// Stream a looping simulated scenario over WebSocket.
    Serve(ServeArgs),
    /// Record a live stream from a running service into a session.
    Record(RecordArgs),
    /// Re-stream a recorded session over WebSocket.
    Replay(ReplayArgs),
    /// Run a protocol analysis; exits 0 on PASS, 1 on FAIL.
    Analyze {
        #[command(subcommand)]
        protocol: Protocol,
    },
    /// Write a session as CSV in input-referred microvolts.
    Export(ExportArgs),
    /// Print the wire frame layout and a minimal example frame.
    ProtocolInfo,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    /// Built-in scenario: eeg, emg or eog.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Session directory to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Transport {
    Serial,
    Ble,
}

impl From<Transport> for TransportClass {
    fn from(t: Transport) -> Self {
        match t {
            Transport::Serial => TransportClass::Serial,
            Transport::Ble => TransportClass::Ble,
        }
    }
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Listen address; the port can also come from EAREXG_PORT.
    #[arg(long)]
    addr: Option<SocketAddr>,
    #[arg(long, value_enum)]
    transport: Option<Transport>,
    /// Record every run into a new session under this directory.
    #[arg(long)]
    record_dir: Option<PathBuf>,
    /// Serial port of a hardware source instead of the simulator.
    #[arg(long, conflicts_with_all = ["scenario", "preset"])]
    serial_port: Option<String>,
    /// Start streaming without waiting for a client.
    #[arg(long)]
    autostart: bool,
}

#[derive(Args, Debug)]
struct RecordArgs {
    /// Service WebSocket URL.
    #[arg(long)]
    url: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Stream time to record, in seconds.
    #[arg(long)]
    duration: f64,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    session: PathBuf,
    /// Send as fast as possible instead of in real time.
    #[arg(long)]
    fast: bool,
    #[arg(long)]
    addr: Option<SocketAddr>,
    #[arg(long, value_enum)]
    transport: Option<Transport>,
    /// Record the re-streamed session under this directory.
    #[arg(long)]
    record_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    session: PathBuf,
    /// Report directory; defaults to `<session>/analysis`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write an SVG plot.
    #[arg(long)]
    svg: bool,
    /// Measured channel index.
    #[arg(long)]
    channel: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Protocol {
    /// Alpha power, eyes closed versus open.
    Alpha(AnalyzeArgs),
    /// EMG envelope, clench versus rest.
    Emg(AnalyzeArgs),
    /// EOG deflection direction during smooth pursuit.
    Eog(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    session: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// First sample index.
    #[arg(long)]
    start: Option<u64>,
    /// One past the last sample index.
    #[arg(long)]
    end: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

/// The error chain, skipping causes their parent already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    match cli.command {
        Command::Simulate(a) => simulate(&cfg, a),
        Command::Serve(a) => serve_cmd(&cfg, a),
        Command::Record(a) => record_cmd(&cfg, a),
        Command::Replay(a) => replay(&cfg, a),
        Command::Analyze { protocol } => analyze(&cfg, protocol),
        Command::Export(a) => export(a),
        Command::ProtocolInfo => {
            print!("{}", protocol_info());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_scenario(cfg: &CliConfig, a: &ScenarioArgs) -> anyhow::Result<Option<Scenario>> {
    let s = if let Some(path) = &a.scenario {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("scenario {}", path.display()))?;
        Some(Scenario::from_json(&text).with_context(|| format!("scenario {}", path.display()))?)
    } else if let Some(name) = &a.preset {
        Some(Scenario::preset(name).ok_or_else(|| anyhow!("unknown preset {name:?}"))?)
    } else {
        cfg.scenario.clone()
    };
    Ok(s.map(|s| match a.seed {
        Some(seed) => s.with_seed(seed),
        None => s,
    }))
}

fn simulate(cfg: &CliConfig, a: SimulateArgs) -> anyhow::Result<ExitCode> {
    let scenario = load_scenario(cfg, &a.scenario)?
        .ok_or_else(|| anyhow!("simulate needs --scenario or --preset"))?;
    let sum = record_scenario(&scenario, &a.out)?;
    println!(
        "{}: {} samples x {} channels at {} SPS, {} frames, {} annotations",
        a.out.display(),
        sum.meta.samples_per_channel,
        sum.meta.n_channels,
        sum.meta.sps,
        sum.frames,
        sum.annotations
    );
    Ok(ExitCode::SUCCESS)
}

/// Alpha protocol with both in-amp channels on a DRL ground and the
/// converter's line filter off, so mains pickup and the DRL switch show up
/// in the quality figure.
fn serve_default_scenario() -> Scenario {
    Scenario::eeg_default()
        .with_montage(Montage::dual_inamp_drl())
        .with_afe(AfeConfig {
            line_filter: false,
            ..AfeConfig::default()
        })
}

fn listen_addr(flag: Option<SocketAddr>, cfg: &CliConfig) -> anyhow::Result<SocketAddr> {
    if let Some(a) = flag {
        return Ok(a);
    }
    if let Some(a) = &cfg.addr {
        return a.parse().with_context(|| format!("config addr {a:?}"));
    }
    Ok(default_addr()?)
}

fn ws_options(cfg: &CliConfig) -> WsOptions {
    let mut o = WsOptions::default();
    if let Some(d) = cfg.queue_depth {
        o.subscriber = SubscriberPolicy::drop_oldest(d);
    }
    o
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?)
}

async fn ctrl_c() {
    let _ = tokio::signal::ctrl_c().await;
}

fn serve_cmd(cfg: &CliConfig, a: ServeArgs) -> anyhow::Result<ExitCode> {
    let transport: TransportClass = a
        .transport
        .map(Into::into)
        .or(cfg.transport)
        .unwrap_or(TransportClass::Ble);
    let (factory, stream_cfg): (Arc<dyn SourceFactory>, _) = match &a.serial_port {
        Some(port) => (
            Arc::new(earexg_service::SerialFactory { port: port.clone() }),
            SimulatorFactory::looping(serve_default_scenario()).default_config(transport),
        ),
        None => {
            let s = load_scenario(cfg, &a.scenario)?.unwrap_or_else(serve_default_scenario);
            let f = SimulatorFactory::looping(s);
            let c = f.default_config(transport);
            (Arc::new(f), c)
        }
    };
    let svc = Arc::new(StreamService::new(
        factory,
        stream_cfg,
        ServiceOptions {
            record_dir: a.record_dir.or_else(|| cfg.record_dir.clone()),
            pacing: Pacing::RealTime,
            ..ServiceOptions::default()
        },
    )?);
    if a.autostart {
        svc.start(None)?;
    }
    let addr = listen_addr(a.addr, cfg)?;
    let opts = ws_options(cfg);
    runtime()?.block_on(async move {
        let listener = bind(addr).await?;
        eprintln!("serving on ws://{}/ws", listener.local_addr()?);
        serve(listener, Arc::clone(&svc), opts, ctrl_c()).await?;
        if svc.state() == earexg_service::RunState::Running {
            let sum = tokio::task::spawn_blocking(move || svc.stop()).await??;
            if let Some(d) = sum.session_dir {
                eprintln!("session closed at {}", d.display());
            }
        }
        anyhow::Ok(())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn record_cmd(cfg: &CliConfig, a: RecordArgs) -> anyhow::Result<ExitCode> {
    if a.duration.is_nan() || a.duration <= 0.0 {
        bail!("--duration must be positive");
    }
    let url = match a.url.or_else(|| cfg.url.clone()) {
        Some(u) => u,
        None => format!("ws://{}/ws", default_addr()?),
    };
    let meta = runtime()?.block_on(record::record(&url, &a.out, a.duration))?;
    println!(
        "{}: {} samples x {} channels at {} SPS, {} gaps",
        a.out.display(),
        meta.samples_per_channel,
        meta.n_channels,
        meta.sps,
        meta.gaps.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn replay(cfg: &CliConfig, a: ReplayArgs) -> anyhow::Result<ExitCode> {
    let reader = SessionReader::open(&a.session)
        .with_context(|| format!("session {}", a.session.display()))?;
    let transport: TransportClass = match a.transport.map(Into::into).or(cfg.transport) {
        Some(t) => t,
        None if reader.meta().sps <= TransportClass::Ble.max_sps() => TransportClass::Ble,
        None => TransportClass::Serial,
    };
    let factory = ReplayFactory::new(&a.session, transport)?;
    let stream_cfg = factory.fixed_config().expect("replay is fixed");
    let svc = Arc::new(StreamService::new(
        Arc::new(factory),
        stream_cfg,
        ServiceOptions {
            record_dir: a.record_dir.or_else(|| cfg.record_dir.clone()),
            pacing: if a.fast {
                Pacing::Fast
            } else {
                Pacing::RealTime
            },
            ..ServiceOptions::default()
        },
    )?);
    let addr = listen_addr(a.addr, cfg)?;
    let opts = ws_options(cfg);
    let sum = runtime()?.block_on(async move {
        let listener = bind(addr).await?;
        eprintln!("replaying on ws://{}/ws", listener.local_addr()?);
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(serve(listener, Arc::clone(&svc), opts, async move {
            let _ = rx.await;
        }));
        svc.start(None)?;
        let waiter = Arc::clone(&svc);
        let sum = tokio::select! {
            s = tokio::task::spawn_blocking(move || waiter.wait(Duration::MAX)) => s?,
            _ = ctrl_c() => {
                let s = Arc::clone(&svc);
                Some(tokio::task::spawn_blocking(move || s.stop()).await??)
            }
        };
        let _ = tx.send(());
        server.await??;
        anyhow::Ok(sum.ok_or_else(|| anyhow!("replay did not finish"))?)
    })?;
    if let Some(e) = &sum.error {
        bail!("replay failed: {e}");
    }
    println!(
        "replayed {} samples in {} frames in {:.2} s",
        sum.samples_emitted, sum.frames_emitted, sum.elapsed_s
    );
    if let Some(d) = &sum.session_dir {
        println!("recorded {} frames to {}", sum.frames_recorded, d.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn verdict(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn analyze(cfg: &CliConfig, protocol: Protocol) -> anyhow::Result<ExitCode> {
    let (name, a) = match &protocol {
        Protocol::Alpha(a) => ("alpha", a),
        Protocol::Emg(a) => ("emg", a),
        Protocol::Eog(a) => ("eog", a),
    };
    let reader = SessionReader::open(&a.session)
        .with_context(|| format!("session {}", a.session.display()))?;
    let mut opts = AnalysisOptions::default();
    if let Some(c) = a.channel.or(cfg.analysis.channel) {
        opts.channel = c;
    }
    if let Some(s) = cfg.analysis.settle_s {
        opts.settle_s = s;
    }
    let svg = a.svg || cfg.analysis.svg.unwrap_or(false);
    let out = a.out.clone().unwrap_or_else(|| a.session.join("analysis"));
    let write = |report: &dyn erased::Report| -> anyhow::Result<()> {
        let files = report.write(&out, name, svg)?;
        for f in files {
            eprintln!("wrote {}", f.display());
        }
        Ok(())
    };
    let pass = match protocol {
        Protocol::Alpha(_) => {
            let r = alpha_contrast(&reader, &opts)?;
            println!(
                "alpha: closed/open power ratio {:.3} (pass > {}) {}",
                r.ratio,
                r.threshold,
                pass_word(r.pass)
            );
            write(&r)?;
            r.pass
        }
        Protocol::Emg(_) => {
            let r = clench_contrast(&reader, &opts)?;
            println!(
                "emg: clench/rest envelope ratio {:.3} (pass > {}) {}",
                r.ratio,
                r.threshold,
                pass_word(r.pass)
            );
            write(&r)?;
            r.pass
        }
        Protocol::Eog(_) => {
            let truth = ground_truth(&reader)?;
            let r = pursuit_report(&reader, &truth, &opts)?;
            println!(
                "eog: direction accuracy {:.3} over {} events, opposite signs {} (pass >= {}) {}",
                r.direction_accuracy,
                r.n_truth,
                r.opposite_signs,
                r.accuracy_threshold,
                pass_word(r.pass)
            );
            write(&r)?;
            r.pass
        }
    };
    Ok(verdict(pass))
}

fn pass_word(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Lets one closure write any of the three report types.
mod erased {
    use std::path::{Path, PathBuf};

    use earexg::analysis::{write_report, AlphaReport, ClenchReport, PursuitReport};

    pub trait Report {
        fn write(&self, dir: &Path, name: &str, svg: bool) -> anyhow::Result<Vec<PathBuf>>;
    }

    macro_rules! impl_report {
        ($($t:ty),*) => {$(
            impl Report for $t {
                fn write(&self, dir: &Path, name: &str, svg: bool) -> anyhow::Result<Vec<PathBuf>> {
                    Ok(write_report(dir, name, self, &self.tables(), self.plot().as_ref(), svg)?)
                }
            }
        )*};
    }

    impl_report!(AlphaReport, ClenchReport, PursuitReport);
}

fn export(a: ExportArgs) -> anyhow::Result<ExitCode> {
    let range = match (a.start, a.end) {
        (None, None) => None,
        (s, e) => {
            let n = SessionReader::open(&a.session)?.n_samples();
            Some(s.unwrap_or(0)..e.unwrap_or(n))
        }
    };
    match &a.out {
        Some(p) => {
            let mut f = std::io::BufWriter::new(
                std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
            );
            export_csv(&a.session, range, &mut f)?;
            f.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = std::io::BufWriter::new(stdout.lock());
            export_csv(&a.session, range, &mut lock)?;
            lock.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn minimal_frame() -> Frame {
    Frame {
        drl_enabled: false,
        transport: TransportClass::Serial,
        seq: 0,
        timestamp_us: 0,
        channel_mask: 0b1,
        samples: vec![0],
    }
}

fn protocol_info() -> String {
    let bytes = encode_frame(&minimal_frame()).expect("static frame is valid");
    format!(
        "\
frame layout (version 1)
offset  size  field
     0     2  magic 0x45 0x58 (\"EX\")
     2     1  version = 1
     3     1  flags: bit0 DRL enabled, bit1 transport (0 serial, 1 BLE), bits 2-7 zero
     4     2  seq, u16 little-endian, wrapping
     6     4  timestamp_us of the first sample, u32 little-endian, wrapping
    10     1  channel mask, bit i set = AIN(i+1) present (bit 7 zero)
    11     1  sample_count per channel, 1..=255
    12   3*N  samples, 24-bit two's complement little-endian, tick-major
  12+3N     2  CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF) over bytes 0..12+3N, big-endian
N = sample_count * popcount(mask)

transport limits: serial 19200 SPS (MTU 1024 B), BLE 500 SPS (MTU 244 B); a frame spans at most 50 ms

minimal frame: 1 channel (AIN1), 1 sample of code 0, seq 0, ts 0, serial, DRL off
{} bytes: {}
",
        bytes.len(),
        to_hex(&bytes)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_frame_is_17_bytes() {
        let b = encode_frame(&minimal_frame()).unwrap();
        assert_eq!(b.len(), 17);
        assert_eq!(&b[..4], &[0x45, 0x58, 0x01, 0x00]);
        assert!(protocol_info().contains("17 bytes: 45 58 01 00"));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn serve_default_shows_drl_effect() {
        let s = serve_default_scenario();
        assert!(!s.afe.line_filter);
        assert_eq!(s.montage.ground(), earexg::afe::GroundMode::Drl);
        s.validate().unwrap();
    }
}
