mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use spatiospectral::audio::{MultichannelAudio, SampleFormat};
use spatiospectral::simulator::{synthesize, PathKind, ReflectionSpec, SceneSpec, SignalSpec, TdoaTable};
use spatiospectral::stft::{stft, StftParams};
use spatiospectral::tdoa::{estimate_tdoa_stream, TdoaParams};

/// Median over frames of the estimated delay of every pair, restricted to
/// frames whose centre lies inside `[start, end]`.
fn median_delays(audio: &MultichannelAudio, start: f64, end: f64) -> Vec<f64> {
    let spec = stft(audio, &StftParams::default()).unwrap();
    let clock = spec.clock();
    let stream: Vec<_> = estimate_tdoa_stream(&spec, &TdoaParams::default())
        .into_iter()
        .filter(|v| (start..=end).contains(&clock.frame_time(v.frame)))
        .collect();
    assert!(!stream.is_empty());
    (0..stream[0].delays.len())
        .map(|p| {
            let mut d: Vec<f64> = stream.iter().map(|v| v.delays[p]).collect();
            d.sort_by(f64::total_cmp);
            d[d.len() / 2]
        })
        .collect()
}

#[test]
fn scene_document_with_file_signal() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dry: Vec<f64> = (0..SR as usize).map(|_| 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
    MultichannelAudio::new(vec![dry], SR)
        .unwrap()
        .write_wav(dir.path().join("talker.wav"), SampleFormat::Float32)
        .unwrap();
    let position = around(75.0, 1.6);
    let doc = format!(
        r#"{{
            "sample_rate": {SR},
            "duration": 4.0,
            "mic_positions": {mics:?},
            "sources": [{{
                "speaker": "reader",
                "positions": [{{"start": 0.0, "position": {position:?}}}],
                "activity": [[0.5, 3.5]],
                "signal": {{"type": "file", "path": "talker.wav"}}
            }}]
        }}"#,
        mics = compact_array(),
    );
    let path = dir.path().join("scene.json");
    std::fs::write(&path, doc).unwrap();
    let spec = SceneSpec::read_json(&path).unwrap();
    assert_eq!(spec.sources[0].gain, 1.0);
    let out = synthesize(&spec, 1).unwrap();
    assert_eq!(out.audio.num_channels(), 4);
    assert_eq!(out.audio.len(), 4 * SR as usize);
    assert_eq!(out.ground_truth.speakers(), vec!["reader".to_string()]);

    let expected = &out.tdoa_table.rows[0].delays;
    for (e, m) in expected.iter().zip(median_delays(&out.audio, 0.7, 3.3)) {
        assert!((e - m).abs() < 0.25, "table {e}, estimated {m}");
    }
}

#[test]
fn missing_file_signal_is_an_input_error() {
    let mut spec = scene(2.0, vec![source("a", around(0.0, 1.0), vec![[0.2, 1.5]], voice(0), 1)]);
    spec.sources[0].signal = SignalSpec::File {
        path: "/nonexistent/voice.wav".into(),
    };
    let err = synthesize(&spec, 0).unwrap_err();
    assert!(err.is_input_error(), "{err}");
}

#[test]
fn outputs_survive_disk_roundtrip() {
    let spec = scene(
        5.0,
        vec![
            source("a", around(40.0, 1.3), vec![[0.2, 2.0]], voice(1), 4),
            source("b", around(220.0, 1.1), vec![[2.5, 4.5]], voice(3), 5),
        ],
    );
    let out = synthesize(&spec, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.audio.write_wav(dir.path().join("mix.wav"), SampleFormat::Float32).unwrap();
    let back = MultichannelAudio::read_wav(dir.path().join("mix.wav")).unwrap();
    for c in 0..4 {
        for (a, b) in out.audio.channel(c).iter().zip(back.channel(c)) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-3));
        }
    }
    let table = TdoaTable::from_csv(&out.tdoa_table.to_csv()).unwrap();
    assert_eq!(table.rows.len(), 2);
    for (a, b) in table.rows.iter().zip(&out.tdoa_table.rows) {
        assert_eq!(a.speaker, b.speaker);
        for (x, y) in a.delays.iter().zip(&b.delays) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

/// Largest normalised cross-correlation between `a` and `b` over lags
/// `0..=max_lag` of `a` behind `b`.
fn best_correlation(a: &[f64], b: &[f64], max_lag: usize) -> f64 {
    let energy = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    (0..=max_lag)
        .map(|lag| {
            let x = &a[lag..];
            let y = &b[..b.len() - lag];
            x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / (energy(x) * energy(y))
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn image_sources_are_coherent_unless_decorrelated() {
    let direct_only = reflection_scene(0.8);
    let mut dry = direct_only.clone();
    dry.reflections.clear();
    dry.noise_floor_db = None;
    let base = synthesize(&dry, 2).unwrap();
    let image_part = |decorrelated: bool| {
        let mut spec = direct_only.clone();
        spec.noise_floor_db = None;
        spec.reflections[0].decorrelated = decorrelated;
        let out = synthesize(&spec, 2).unwrap();
        let table = &out.tdoa_table.rows;
        assert_eq!(table.iter().filter(|r| r.kind == PathKind::Image).count(), 1);
        out.audio.channel(0).iter().zip(base.audio.channel(0)).map(|(a, b)| a - b).collect::<Vec<f64>>()
    };
    // the first utterance of the reflected speaker
    let span = (SR as usize / 2 + 400)..(4 * SR as usize);
    let direct = &base.audio.channel(0)[span.clone()];
    let coherent = image_part(false);
    let independent = image_part(true);
    assert!(best_correlation(&coherent[span.clone()], direct, 40) > 0.9);
    assert!(best_correlation(&independent[span], direct, 40).abs() < 0.1);
}

#[test]
fn decorrelated_flag_defaults_off() {
    let r: ReflectionSpec = serde_json::from_str(r#"{"source": 0, "image_position": [1, 2, 0], "gain": 0.5}"#).unwrap();
    assert!(!r.decorrelated);
}
