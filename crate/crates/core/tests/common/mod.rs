#![allow(dead_code)]

use spatiospectral::simulator::{Point, PositionSpan, ReflectionSpec, SceneSpec, SignalSpec, SourceSpec};

pub const SR: u32 = 16000;

/// Four microphones on a circle of `radius` metres, slightly tilted.
pub fn circular_array(radius: f64) -> Vec<Point> {
    (0..4)
        .map(|k| {
            let a = k as f64 * std::f64::consts::FRAC_PI_2 + 0.3;
            [radius * a.cos(), radius * a.sin(), if k % 2 == 0 { 0.01 } else { -0.01 }]
        })
        .collect()
}

pub fn compact_array() -> Vec<Point> {
    circular_array(0.05)
}

/// Band-limited speaker `k` of four: adjacent passbands inside 150-3500 Hz
/// over a -20 dB broadband floor.
pub fn voice(k: usize) -> SignalSpec {
    let bands = [(150.0, 700.0), (700.0, 1400.0), (1400.0, 2400.0), (2400.0, 3500.0)];
    let (lo, hi) = bands[k % bands.len()];
    SignalSpec::BandNoise {
        lo,
        hi,
        floor_db: Some(-20.0),
    }
}

/// Point at `distance` metres and `azimuth` degrees, 0.2 m above the array.
pub fn around(azimuth: f64, distance: f64) -> Point {
    let a = azimuth.to_radians();
    [distance * a.cos(), distance * a.sin(), 0.2]
}

pub fn source(speaker: &str, position: Point, activity: Vec<[f64; 2]>, signal: SignalSpec, seed: u64) -> SourceSpec {
    SourceSpec {
        speaker: Some(speaker.into()),
        positions: vec![PositionSpan { start: 0.0, position }],
        activity,
        signal,
        gain: 1.0,
        seed: Some(seed),
    }
}

pub fn scene(duration: f64, sources: Vec<SourceSpec>) -> SceneSpec {
    SceneSpec {
        sample_rate: SR,
        duration,
        mic_positions: compact_array(),
        sources,
        reflections: Vec::new(),
        noise_floor_db: Some(-40.0),
    }
}

pub const AZIMUTHS: [f64; 4] = [10.0, 100.0, 190.0, 280.0];

/// Four speakers taking turns twice; every utterance lasts `utterance`
/// seconds and overlaps the previous one by `overlap` of its length.
pub fn overlap_meeting(utterance: f64, overlap: f64) -> SceneSpec {
    let step = utterance * (1.0 - overlap);
    let mut activity = vec![Vec::new(); 4];
    for k in 0..8 {
        let start = 0.5 + k as f64 * step;
        activity[k % 4].push([start, start + utterance]);
    }
    let duration = 0.5 + 7.0 * step + utterance + 0.5;
    let sources = activity
        .into_iter()
        .enumerate()
        .map(|(k, act)| source(&format!("s{k}"), around(AZIMUTHS[k], 1.2 + 0.2 * k as f64), act, voice(k), 100 + k as u64))
        .collect();
    scene(duration, sources)
}

/// Two speakers with two utterances each and one strong specular
/// reflection of the first speaker, 0.3 m longer than its direct path.
pub fn reflection_scene(gain: f64) -> SceneSpec {
    let s0 = source("s0", around(30.0, 1.5), vec![[0.5, 4.5], [9.0, 13.0]], voice(0), 11);
    let s1 = source("s1", around(140.0, 1.3), vec![[5.0, 8.5], [13.5, 17.0]], voice(2), 12);
    let mut spec = scene(17.5, vec![s0, s1]);
    spec.reflections.push(ReflectionSpec {
        source: 0,
        image_position: around(250.0, 1.8),
        gain,
        decorrelated: false,
    });
    spec
}
