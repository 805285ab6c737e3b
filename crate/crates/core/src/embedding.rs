//! Per-segment speaker embeddings.
//!
//! [`SpectralEmbedder`] is a deterministic stand-in for a neural speaker
//! model: log-mel band statistics that separate speakers with different
//! spectral envelopes. Real d-vectors are plugged in through
//! [`ExternalEmbeddings`], a sidecar file keyed by segment id.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::audio::MultichannelAudio;
use crate::diarization::Diarization;
use crate::error::{Error, Result};
use crate::stft::{stft, StftParams, Window};

pub const MIN_SEGMENT_SECONDS: f64 = 0.25;

/// A beamformed segment handed to an embedder.
#[derive(Debug, Clone, Copy)]
pub struct SegmentAudio<'a> {
    pub segment: usize,
    pub waveform: &'a [f64],
    pub sample_rate: u32,
    /// Extent in the recording, seconds.
    pub start: f64,
    pub end: f64,
}

pub trait Embedder: Sync {
    /// Deterministic: identical input gives an identical vector.
    fn embed(&self, segment: &SegmentAudio) -> Result<Vec<f64>>;
}

pub fn l2_normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// 40-band log-mel statistics: per band, the mean over time (centred
/// across bands, so gain drops out) and the standard deviation. D = 80,
/// unit L2 norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEmbedder {
    pub bands: usize,
}

impl Default for SpectralEmbedder {
    fn default() -> Self {
        Self { bands: 40 }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over bins `0..=fft_size/2`, as `(first_bin, weights)`.
fn mel_filterbank(bands: usize, fft_size: usize, sample_rate: u32) -> Vec<(usize, Vec<f64>)> {
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / fft_size as f64;
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            let first = (lo / bin_hz).floor() as usize;
            let last = ((hi / bin_hz).ceil() as usize).min(fft_size / 2);
            let mut weights: Vec<f64> = (first..=last)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect();
            // narrow low bands may fall between bins; keep them non-empty
            if weights.iter().all(|w| *w == 0.0) {
                let nearest = ((mid / bin_hz).round() as usize).clamp(first, last);
                weights[nearest - first] = 1.0;
            }
            (first, weights)
        })
        .collect()
}

impl SpectralEmbedder {
    pub fn embed_waveform(&self, waveform: &[f64], sample_rate: u32) -> Result<Vec<f64>> {
        let actual = waveform.len() as f64 / sample_rate as f64;
        if actual < MIN_SEGMENT_SECONDS {
            return Err(Error::TooShort {
                min: MIN_SEGMENT_SECONDS,
                actual,
            });
        }
        let fft_size = ((0.032 * sample_rate as f64).round() as usize).next_power_of_two();
        let params = StftParams {
            fft_size,
            frame_shift: fft_size / 4,
            window: Window::Hann,
        };
        let audio = MultichannelAudio::new(vec![waveform.to_vec()], sample_rate)?;
        let spec = stft(&audio, &params)?;
        let bank = mel_filterbank(self.bands, fft_size, sample_rate);
        let frames = spec.num_frames();
        let mut energy = vec![vec![0.0; frames]; self.bands];
        for t in 0..frames {
            let row = spec.frame(0, t);
            for (b, (first, w)) in bank.iter().enumerate() {
                energy[b][t] = w.iter().zip(&row[*first..]).map(|(w, y)| w * y.norm_sqr()).sum();
            }
        }
        let total = energy.iter().flatten().sum::<f64>() / (frames * self.bands) as f64;
        let floor = if total > 0.0 { 1e-10 * total } else { 1e-300 };
        let mut means = Vec::with_capacity(self.bands);
        let mut stds = Vec::with_capacity(self.bands);
        for band in &energy {
            let logs: Vec<f64> = band.iter().map(|e| (e + floor).ln()).collect();
            let m = logs.iter().sum::<f64>() / frames as f64;
            let var = logs.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / frames as f64;
            means.push(m);
            stds.push(var.sqrt());
        }
        let centre = means.iter().sum::<f64>() / self.bands as f64;
        let mut v: Vec<f64> = means.iter().map(|m| m - centre).chain(stds).collect();
        l2_normalize(&mut v);
        Ok(v)
    }
}

impl Embedder for SpectralEmbedder {
    fn embed(&self, segment: &SegmentAudio) -> Result<Vec<f64>> {
        self.embed_waveform(segment.waveform, segment.sample_rate)
    }
}

/// One-hot ground-truth identity: the reference speaker overlapping the
/// segment's extent the longest (ties: first label in sorted order). An
/// extra dimension marks segments that overlap no reference speech.
#[derive(Debug, Clone)]
pub struct OracleEmbedder {
    reference: Diarization,
    speakers: Vec<String>,
}

impl OracleEmbedder {
    pub fn new(reference: Diarization) -> Self {
        let speakers = reference.speakers();
        Self { reference, speakers }
    }
}

impl Embedder for OracleEmbedder {
    fn embed(&self, segment: &SegmentAudio) -> Result<Vec<f64>> {
        let mut overlap = vec![0.0; self.speakers.len()];
        for e in &self.reference.entries {
            let o = (e.end.min(segment.end) - e.start.max(segment.start)).max(0.0);
            if let Ok(i) = self.speakers.binary_search(&e.speaker) {
                overlap[i] += o;
            }
        }
        let mut v = vec![0.0; self.speakers.len() + 1];
        let best = overlap
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, f64)>, (i, &o)| match acc {
                Some((_, bo)) if bo >= o => acc,
                _ if o > 0.0 => Some((i, o)),
                _ => acc,
            });
        v[best.map_or(self.speakers.len(), |b| b.0)] = 1.0;
        Ok(v)
    }
}

/// Embeddings computed elsewhere, keyed by segment id.
///
/// File layout, little-endian, repeated per record: `u32` segment id,
/// `u32` dimension D, D x `f32`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalEmbeddings {
    pub vectors: BTreeMap<usize, Vec<f64>>,
}

impl ExternalEmbeddings {
    pub fn read(mut input: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut vectors = BTreeMap::new();
        let mut pos = 0;
        let word = |pos: &mut usize| -> Result<[u8; 4]> {
            let w = bytes
                .get(*pos..*pos + 4)
                .ok_or_else(|| Error::format("embedding sidecar", format!("truncated at byte {pos}")))?;
            *pos += 4;
            Ok(w.try_into().unwrap())
        };
        while pos < bytes.len() {
            let id = u32::from_le_bytes(word(&mut pos)?) as usize;
            let dim = u32::from_le_bytes(word(&mut pos)?) as usize;
            let v = (0..dim)
                .map(|_| word(&mut pos).map(|w| f32::from_le_bytes(w) as f64))
                .collect::<Result<Vec<_>>>()?;
            if vectors.insert(id, v).is_some() {
                return Err(Error::format("embedding sidecar", format!("segment {id} listed twice")));
            }
        }
        Ok(Self { vectors })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        for (id, v) in &self.vectors {
            out.write_all(&(*id as u32).to_le_bytes())?;
            out.write_all(&(v.len() as u32).to_le_bytes())?;
            for x in v {
                out.write_all(&(*x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }
}

impl Embedder for ExternalEmbeddings {
    fn embed(&self, segment: &SegmentAudio) -> Result<Vec<f64>> {
        let mut v = self
            .vectors
            .get(&segment.segment)
            .cloned()
            .ok_or_else(|| Error::format("embedding sidecar", format!("no vector for segment {}", segment.segment)))?;
        l2_normalize(&mut v);
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diarization::DiarizationEntry;
    use crate::simulator::{SignalSpec, SourceSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
        1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    #[test]
    fn deterministic_unit_norm_and_gain_invariant() {
        let e = SpectralEmbedder::default();
        let x = noise(16000, 1);
        let a = e.embed_waveform(&x, 16000).unwrap();
        assert_eq!(a.len(), 80);
        assert_eq!(a, e.embed_waveform(&x, 16000).unwrap());
        assert!((a.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        let scaled: Vec<f64> = x.iter().map(|v| v * 37.5).collect();
        let b = e.embed_waveform(&scaled, 16000).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-9));
    }

    #[test]
    fn too_short() {
        let e = SpectralEmbedder::default();
        assert!(matches!(
            e.embed_waveform(&noise(3000, 1), 16000),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn disjoint_envelopes_are_far_apart() {
        // render the two dry signals through the simulator's band shaping
        let render = |lo: f64, hi: f64, seed: u64| {
            let spec = crate::simulator::SceneSpec {
                sample_rate: 16000,
                duration: 2.0,
                mic_positions: vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.1, 0.1, 0.0]],
                sources: vec![SourceSpec {
                    speaker: None,
                    positions: vec![crate::simulator::PositionSpan { start: 0.0, position: [1.0, 1.0, 0.0] }],
                    activity: vec![[0.0, 2.0]],
                    signal: SignalSpec::BandNoise { lo, hi, floor_db: Some(-20.0) },
                    gain: 1.0,
                    seed: Some(seed),
                }],
                reflections: vec![],
                noise_floor_db: None,
            };
            crate::simulator::synthesize(&spec, 0).unwrap().audio.channel(0)[1000..30000].to_vec()
        };
        let e = SpectralEmbedder::default();
        let a = e.embed_waveform(&render(200.0, 1200.0, 1), 16000).unwrap();
        let a2 = e.embed_waveform(&render(200.0, 1200.0, 2), 16000).unwrap();
        let b = e.embed_waveform(&render(2000.0, 5000.0, 3), 16000).unwrap();
        assert!(cosine_distance(&a, &b) >= 0.5, "{}", cosine_distance(&a, &b));
        assert!(cosine_distance(&a, &a2) < 0.1, "{}", cosine_distance(&a, &a2));
    }

    #[test]
    fn filterbank_covers_band() {
        let bank = mel_filterbank(40, 512, 16000);
        assert_eq!(bank.len(), 40);
        assert!(bank.iter().all(|(_, w)| w.iter().any(|v| *v > 0.0)));
        assert!(bank.last().unwrap().0 + bank.last().unwrap().1.len() <= 257);
    }

    #[test]
    fn oracle_picks_longest_overlap() {
        let reference = Diarization::new(vec![
            DiarizationEntry::new("b", 0.0, 3.0),
            DiarizationEntry::new("a", 2.0, 10.0),
        ])
        .unwrap();
        let o = OracleEmbedder::new(reference);
        let seg = |start, end| SegmentAudio {
            segment: 0,
            waveform: &[],
            sample_rate: 16000,
            start,
            end,
        };
        assert_eq!(o.embed(&seg(0.0, 2.5)).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(o.embed(&seg(2.0, 9.0)).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(o.embed(&seg(11.0, 12.0)).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn sidecar_roundtrip() {
        let mut ext = ExternalEmbeddings::default();
        ext.vectors.insert(3, vec![0.5, -0.25, 2.0]);
        ext.vectors.insert(7, vec![1.0]);
        let mut buf = Vec::new();
        ext.write(&mut buf).unwrap();
        assert_eq!(buf.len(), 2 * 8 + 4 * 4);
        assert_eq!(ExternalEmbeddings::read(&buf[..]).unwrap(), ext);
        assert!(ExternalEmbeddings::read(&buf[..buf.len() - 2]).is_err());
        let seg = SegmentAudio {
            segment: 9,
            waveform: &[],
            sample_rate: 16000,
            start: 0.0,
            end: 1.0,
        };
        assert!(ext.embed(&seg).is_err());
    }
}
