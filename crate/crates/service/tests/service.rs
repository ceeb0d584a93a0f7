use std::sync::Arc;
use std::time::Duration;

use earexg::afe::{AfeConfig, Montage};
use earexg::session::{integrity_check, read_annotations, AnnotationSource, SessionReader};
use earexg::sim::{NoiseModel, Physiology, Scenario};
use earexg::wire::{decode_frame, TransportClass};
use earexg_service::control::ConfigurePayload;
use earexg_service::{
    Pacing, ReplayFactory, RunState, ServiceError, ServiceOptions, SimulatorFactory, StreamConfig,
    StreamService, SubscriberPolicy,
};

fn silence(duration_s: f64) -> Scenario {
    Scenario::new("quiet", Physiology::Silence { duration_s })
}

fn service(
    factory: SimulatorFactory,
    cfg: StreamConfig,
    record_dir: Option<&std::path::Path>,
    pacing: Pacing,
) -> StreamService {
    StreamService::new(
        Arc::new(factory),
        cfg,
        ServiceOptions {
            record_dir: record_dir.map(|p| p.to_path_buf()),
            pacing,
            ..ServiceOptions::default()
        },
    )
    .unwrap()
}

fn default_cfg(s: &Scenario) -> StreamConfig {
    SimulatorFactory::once(s.clone()).default_config(TransportClass::Serial)
}

#[test]
fn illegal_transitions_name_the_state() {
    let s = Scenario::eeg_default();
    let svc = service(
        SimulatorFactory::looping(s.clone()),
        default_cfg(&s),
        None,
        Pacing::RealTime,
    );
    assert_eq!(svc.state(), RunState::Stopped);
    let e = svc.stop().unwrap_err();
    assert!(matches!(
        e,
        ServiceError::IllegalTransition {
            state: "stopped",
            ..
        }
    ));
    assert!(e.to_string().contains("stop while stopped"));
    assert!(svc.annotate("x", AnnotationSource::Operator).is_err());

    svc.start(None).unwrap();
    assert_eq!(svc.state(), RunState::Running);
    let e = svc.start(None).unwrap_err();
    assert!(e.to_string().contains("start while running"), "{e}");
    let e = svc.configure(ConfigurePayload::default()).unwrap_err();
    assert!(e.to_string().contains("configure while running"), "{e}");
    // Not recording, so there is nowhere to put an annotation.
    assert!(matches!(
        svc.annotate("x", AnnotationSource::Operator),
        Err(ServiceError::Recorder(_))
    ));
    svc.stop().unwrap();
    assert_eq!(svc.state(), RunState::Stopped);
    // Restart after stop is allowed.
    svc.start(None).unwrap();
    svc.stop().unwrap();
}

#[test]
fn configure_enforces_transport_limits() {
    let s = Scenario::eeg_default();
    let svc = service(
        SimulatorFactory::looping(s.clone()),
        default_cfg(&s),
        None,
        Pacing::RealTime,
    );
    let cfg = |transport, sps| ConfigurePayload {
        transport: Some(transport),
        sps: Some(sps),
        ..ConfigurePayload::default()
    };
    assert!(svc.configure(cfg(TransportClass::Serial, 19_200)).is_ok());
    assert!(matches!(
        svc.configure(cfg(TransportClass::Serial, 19_201)),
        Err(ServiceError::Wire(_))
    ));
    assert!(svc.configure(cfg(TransportClass::Ble, 500)).is_ok());
    assert!(svc.configure(cfg(TransportClass::Ble, 501)).is_err());
    // A rejected request leaves the previous configuration in place.
    assert_eq!(svc.config().afe.sps, 500);
    assert_eq!(svc.config().transport, TransportClass::Ble);
}

#[test]
fn fast_run_records_every_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let s = silence(10.0)
        .with_montage(Montage::dual_inamp_drl())
        .with_seed(5);
    let svc = service(
        SimulatorFactory::once(s.clone()),
        default_cfg(&s),
        Some(tmp.path()),
        Pacing::Fast,
    );
    // Never reads: must not slow the run or cost the recorder anything.
    let stalled = svc.subscribe(SubscriberPolicy::drop_oldest(4));
    svc.start(None).unwrap();
    let sum = svc.wait(Duration::from_secs(60)).expect("source runs out");
    assert!(sum.exhausted);
    assert_eq!(sum.error, None);
    assert_eq!(sum.samples_emitted, 5000);
    assert_eq!(sum.frames_recorded, sum.frames_emitted);
    assert_eq!(stalled.queue().dropped(), sum.frames_emitted - 4);

    let dir = sum.session_dir.unwrap();
    let r = SessionReader::open(&dir).unwrap();
    assert_eq!(r.n_samples(), 5000);
    assert_eq!(r.n_channels(), 2);
    assert!(integrity_check(&dir).is_clean());
    let labels: Vec<String> = read_annotations(&dir)
        .unwrap()
        .into_iter()
        .map(|a| a.label)
        .collect();
    assert_eq!(labels, ["start", "stop"]);
    assert_eq!(r.meta().scenario.as_ref().unwrap().name, "quiet");
    assert_eq!(svc.state(), RunState::Stopped);
}

#[test]
fn stream_matches_offline_acquisition() {
    let tmp = tempfile::tempdir().unwrap();
    let s = Scenario::emg_default().with_seed(9);
    let svc = service(
        SimulatorFactory::once(s.clone()),
        default_cfg(&s),
        Some(tmp.path()),
        Pacing::Fast,
    );
    let sub = svc.subscribe(SubscriberPolicy::drop_oldest(1 << 20));
    svc.start(None).unwrap();
    let sum = svc.wait(Duration::from_secs(60)).unwrap();

    let expected: Vec<i32> = earexg::sim::simulate_acquisition(&s)
        .unwrap()
        .flat_map(|t| t.codes)
        .collect();
    let streamed: Vec<i32> = sub
        .queue()
        .drain()
        .iter()
        .flat_map(|b| decode_frame(b).unwrap().samples)
        .collect();
    assert_eq!(streamed, expected);
    let r = SessionReader::open(sum.session_dir.unwrap()).unwrap();
    assert_eq!(r.read_range(0..r.n_samples()).unwrap(), expected);
}

#[test]
fn rapid_annotations_get_distinct_times() {
    let tmp = tempfile::tempdir().unwrap();
    let s = Scenario::eeg_default();
    let svc = service(
        SimulatorFactory::looping(s.clone()),
        default_cfg(&s),
        Some(tmp.path()),
        Pacing::RealTime,
    );
    svc.start(None).unwrap();
    std::thread::sleep(Duration::from_millis(200));
    let a: Vec<_> = (0..5)
        .map(|_| {
            svc.annotate("eyes-closed", AnnotationSource::Operator)
                .unwrap()
        })
        .collect();
    for w in a.windows(2) {
        assert!(w[1].t_us > w[0].t_us);
    }
    assert!(a[0].t_us > 0);
    assert!(svc.annotate("  ", AnnotationSource::Operator).is_err());
    let sum = svc.stop().unwrap();
    let stored = read_annotations(&sum.session_dir.unwrap()).unwrap();
    assert_eq!(stored.len(), 7);
    assert_eq!(stored[1..6], a[..]);
    assert!(stored.windows(2).all(|w| w[0].t_us < w[1].t_us));
}

#[test]
fn drl_is_staged_when_stopped_and_live_when_running() {
    let s = silence(600.0)
        .with_montage(Montage::dual_inamp_drl())
        .with_afe(AfeConfig {
            line_filter: false,
            ..AfeConfig::default()
        });
    let svc = service(
        SimulatorFactory::looping(s.clone()),
        default_cfg(&s),
        None,
        Pacing::Fast,
    );
    svc.set_drl(true).unwrap();
    assert!(svc.config().afe.drl_enabled);
    let sub = svc.subscribe(SubscriberPolicy::drop_oldest(1 << 16));
    svc.start(None).unwrap();
    std::thread::sleep(Duration::from_millis(100));
    svc.set_drl(false).unwrap();
    std::thread::sleep(Duration::from_millis(100));
    assert!(!svc.status().drl_enabled);
    svc.stop().unwrap();
    let flags: Vec<bool> = sub
        .queue()
        .drain()
        .iter()
        .map(|b| decode_frame(b).unwrap().drl_enabled)
        .collect();
    assert!(flags.first().copied().unwrap());
    assert!(!flags.last().copied().unwrap());
    // One switch-over, no flapping.
    assert_eq!(flags.windows(2).filter(|w| w[0] != w[1]).count(), 1);
}

#[test]
fn quality_meter_tracks_line_leak() {
    let run = |drl: bool| {
        let mut afe = AfeConfig {
            line_filter: false,
            ..AfeConfig::default()
        };
        afe.drl_enabled = drl;
        let s = silence(4.0)
            .with_montage(Montage::dual_inamp_drl())
            .with_afe(afe)
            .with_noise(NoiseModel {
                white_uv_rms: 0.0,
                drift_uv: 0.0,
                ..NoiseModel::default()
            });
        let svc = service(
            SimulatorFactory::once(s.clone()),
            default_cfg(&s),
            None,
            Pacing::RealTime,
        );
        svc.start(None).unwrap();
        std::thread::sleep(Duration::from_millis(3500));
        let q = svc.status().quality_uv_rms.unwrap();
        svc.stop().unwrap();
        q
    };
    let off = run(false);
    let on = run(true);
    // 1000 uV of mains with 1 % leaking into the difference: a 10 uV tone.
    assert!((off - 10.0 / 2f64.sqrt()).abs() < 0.5, "{off}");
    assert!(20.0 * (off / on).log10() >= 38.0, "{off} vs {on}");
}

#[test]
fn replay_has_fixed_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let s = silence(2.0).with_seed(1);
    earexg::session::record_scenario(&s, &tmp.path().join("orig")).unwrap();
    let f = ReplayFactory::new(tmp.path().join("orig"), TransportClass::Serial).unwrap();
    let svc = StreamService::new(
        Arc::new(f),
        default_cfg(&Scenario::eeg_default()),
        ServiceOptions {
            record_dir: Some(tmp.path().join("again")),
            pacing: Pacing::Fast,
            ..ServiceOptions::default()
        },
    )
    .unwrap();
    assert!(svc
        .configure(ConfigurePayload {
            sps: Some(250),
            ..ConfigurePayload::default()
        })
        .is_err());
    assert!(svc.set_drl(true).is_err());
    svc.start(None).unwrap();
    let sum = svc.wait(Duration::from_secs(30)).unwrap();
    let a = SessionReader::open(tmp.path().join("orig")).unwrap();
    let b = SessionReader::open(sum.session_dir.unwrap()).unwrap();
    assert_eq!(
        a.read_range(0..a.n_samples()).unwrap(),
        b.read_range(0..b.n_samples()).unwrap()
    );
    assert_eq!(b.meta().transport, a.meta().transport);
}
