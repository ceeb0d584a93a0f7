use std::path::Path;

use earexg::afe::Montage;
use earexg::analysis::{
    alpha_contrast, clench_contrast, ground_truth, pursuit_report, write_report, AnalysisError,
    AnalysisOptions,
};
use earexg::session::{record_scenario, SessionReader};
use earexg::sim::{
    AlphaParams, ClenchParams, NoiseModel, Physiology, PursuitGeometry, Scenario, StimulusProtocol,
    REST,
};
use proptest::prelude::*;

fn recorded(scenario: &Scenario, dir: &Path) -> SessionReader {
    record_scenario(scenario, dir).unwrap();
    SessionReader::open(dir).unwrap()
}

fn eeg(params: AlphaParams) -> Scenario {
    Scenario::new(
        "eeg",
        Physiology::Eeg {
            protocol: StimulusProtocol::eyes_open_closed(0),
            params,
        },
    )
    .with_seed(42)
}

fn emg(protocol: StimulusProtocol, params: ClenchParams) -> Scenario {
    Scenario::new("emg", Physiology::Emg { protocol, params }).with_seed(42)
}

fn eog(uv_per_deg: f64, reps: u32) -> Scenario {
    Scenario::new(
        "eog",
        Physiology::Eog {
            geometry: PursuitGeometry {
                reps_per_side: reps,
                ..PursuitGeometry::default()
            },
            uv_per_deg,
        },
    )
    .with_seed(42)
}

#[test]
fn default_eeg_alpha_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let r = recorded(
        &Scenario::eeg_default().with_seed(42),
        &tmp.path().join("s"),
    );
    let rep = alpha_contrast(&r, &AnalysisOptions::default()).unwrap();
    assert!(rep.ratio >= 4.0, "{}", rep.ratio);
    assert!(rep.pass);
    assert_eq!(rep.epochs.len(), 2);
    assert!(rep.unknown_labels.is_empty());
}

#[test]
fn equal_alpha_fails_near_one() {
    let tmp = tempfile::tempdir().unwrap();
    let params = AlphaParams {
        a_open_uv: 6.0,
        a_closed_uv: 6.0,
        ..AlphaParams::default()
    };
    let r = recorded(&eeg(params), &tmp.path().join("s"));
    let rep = alpha_contrast(&r, &AnalysisOptions::default()).unwrap();
    assert!((rep.ratio - 1.0).abs() < 0.15, "{}", rep.ratio);
    assert!(!rep.pass);
}

#[test]
fn inverted_alpha_fails_below_one() {
    let tmp = tempfile::tempdir().unwrap();
    let params = AlphaParams {
        a_open_uv: 10.0,
        a_closed_uv: 2.0,
        ..AlphaParams::default()
    };
    let r = recorded(&eeg(params), &tmp.path().join("s"));
    let rep = alpha_contrast(&r, &AnalysisOptions::default()).unwrap();
    assert!(rep.ratio < 1.0, "{}", rep.ratio);
    assert!(!rep.pass);
}

#[test]
fn alpha_on_emg_session_is_protocol_error() {
    let tmp = tempfile::tempdir().unwrap();
    let r = recorded(&Scenario::emg_default(), &tmp.path().join("s"));
    assert!(matches!(
        alpha_contrast(&r, &AnalysisOptions::default()),
        Err(AnalysisError::Protocol(_))
    ));
}

#[test]
fn default_emg_clench_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let r = recorded(
        &Scenario::emg_default().with_seed(42),
        &tmp.path().join("s"),
    );
    let rep = clench_contrast(&r, &AnalysisOptions::default()).unwrap();
    assert!(rep.ratio >= 10.0, "{}", rep.ratio);
    assert!(rep.pass);
}

#[test]
fn all_rest_is_protocol_error() {
    let tmp = tempfile::tempdir().unwrap();
    let p = StimulusProtocol::sequence([(REST, 20.0)], 0).unwrap();
    let r = recorded(&emg(p, ClenchParams::default()), &tmp.path().join("s"));
    assert!(matches!(
        clench_contrast(&r, &AnalysisOptions::default()),
        Err(AnalysisError::Protocol(_))
    ));
}

#[test]
fn equal_rms_fails_near_one() {
    let tmp = tempfile::tempdir().unwrap();
    let params = ClenchParams {
        r_rest_uv: 20.0,
        r_clench_uv: 20.0,
        ..ClenchParams::default()
    };
    let r = recorded(
        &emg(StimulusProtocol::rest_clench_rest(0), params),
        &tmp.path().join("s"),
    );
    let rep = clench_contrast(&r, &AnalysisOptions::default()).unwrap();
    assert!((rep.ratio - 1.0).abs() < 0.15, "{}", rep.ratio);
    assert!(!rep.pass);
}

#[test]
fn noiseless_pursuit_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let s = eog(4.0, 15).with_noise(NoiseModel::none());
    let r = recorded(&s, &tmp.path().join("s"));
    let truth = ground_truth(&r).unwrap();
    assert_eq!(truth.len(), 30);
    let rep = pursuit_report(&r, &truth, &AnalysisOptions::default()).unwrap();
    assert_eq!(rep.n_detected, 30);
    assert_eq!(rep.n_matched, 30);
    assert_eq!(rep.direction_accuracy, 1.0);
    assert!(rep.mean_amplitude_left_uv.unwrap() > 0.0);
    assert!(rep.mean_amplitude_right_uv.unwrap() < 0.0);
    assert!(rep.pass);
    // 10 Hz smoothing barely touches a 211.2 uV plateau
    let left = rep.mean_amplitude_left_uv.unwrap();
    assert!((left - 211.2).abs() < 2.0, "{left}");
}

#[test]
fn inverted_polarity_scores_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let normal = recorded(
        &eog(4.0, 15).with_noise(NoiseModel::none()),
        &tmp.path().join("a"),
    );
    let truth = ground_truth(&normal).unwrap();
    let flipped = recorded(
        &eog(-4.0, 15).with_noise(NoiseModel::none()),
        &tmp.path().join("b"),
    );
    let rep = pursuit_report(&flipped, &truth, &AnalysisOptions::default()).unwrap();
    assert_eq!(rep.direction_accuracy, 0.0);
    assert!(!rep.pass);
}

#[test]
fn moderate_noise_pursuit_with_drl() {
    let tmp = tempfile::tempdir().unwrap();
    let mut s = eog(4.0, 15)
        .with_noise(NoiseModel {
            powerline_amp_uv: 50.0,
            ..NoiseModel::default()
        })
        .with_montage(Montage::dual_inamp_drl());
    s.afe.drl_enabled = true;
    let r = recorded(&s, &tmp.path().join("s"));
    let truth = ground_truth(&r).unwrap();
    for ch in 0..2 {
        let opts = AnalysisOptions {
            channel: ch,
            ..AnalysisOptions::default()
        };
        let rep = pursuit_report(&r, &truth, &opts).unwrap();
        assert!(
            rep.direction_accuracy >= 0.9,
            "ch {ch}: {}",
            rep.direction_accuracy
        );
        assert!(rep.pass);
    }
}

#[test]
fn no_truth_no_events_is_error() {
    let tmp = tempfile::tempdir().unwrap();
    let s = Scenario::new("quiet", Physiology::Silence { duration_s: 5.0 })
        .with_noise(NoiseModel::none());
    let r = recorded(&s, &tmp.path().join("s"));
    assert!(ground_truth(&r).unwrap().is_empty());
    assert!(matches!(
        pursuit_report(&r, &[], &AnalysisOptions::default()),
        Err(AnalysisError::Protocol(_))
    ));
}

#[test]
fn contrasts_invariant_under_gain() {
    let tmp = tempfile::tempdir().unwrap();
    let base = Scenario::emg_default().with_seed(3);
    let mut low = base.clone();
    low.afe.gain = 12.5;
    let a = recorded(&base, &tmp.path().join("a"));
    let b = recorded(&low, &tmp.path().join("b"));
    let ra = clench_contrast(&a, &AnalysisOptions::default())
        .unwrap()
        .ratio;
    let rb = clench_contrast(&b, &AnalysisOptions::default())
        .unwrap()
        .ratio;
    assert!((ra / rb - 1.0).abs() < 0.01, "{ra} vs {rb}");
}

#[test]
fn reports_written_with_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let r = recorded(&Scenario::emg_default(), &tmp.path().join("s"));
    let rep = clench_contrast(&r, &AnalysisOptions::default()).unwrap();
    let out = tmp.path().join("out");
    let files = write_report(&out, "emg", &rep, &rep.tables(), rep.plot().as_ref(), true).unwrap();
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(
        names,
        vec![
            "emg_report.json",
            "emg_epochs.csv",
            "emg_envelope.csv",
            "emg.svg"
        ]
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
    assert_eq!(json["pass"], serde_json::Value::Bool(true));
    assert!(json["ratio"].as_f64().unwrap() > 3.0);
    let epochs = std::fs::read_to_string(&files[1]).unwrap();
    assert!(epochs.starts_with("label,start_s,duration_s,"));
    assert_eq!(epochs.lines().count(), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn noiseless_accuracy_one_for_any_reps(reps in 1u32..5) {
        let tmp = tempfile::tempdir().unwrap();
        let r = recorded(&eog(4.0, reps).with_noise(NoiseModel::none()), &tmp.path().join("s"));
        let truth = ground_truth(&r).unwrap();
        let rep = pursuit_report(&r, &truth, &AnalysisOptions::default()).unwrap();
        prop_assert_eq!(rep.n_truth, 2 * reps as usize);
        prop_assert_eq!(rep.direction_accuracy, 1.0);
    }
}
