//! Multi-source TDOA estimation: GCC-PhaT peak picking per microphone pair
//! and closed-loop consistency filtering of the peak combinations.
//!
//! Delays are in samples. `tau(i, j) > 0` means the wavefront reaches
//! microphone `j` later than microphone `i`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::stft::{RealInverse, SpectrogramTensor};

/// Cross-spectrum bins whose magnitude is below this contribute nothing.
pub const PHAT_FLOOR: f64 = 1e-12;

pub fn num_pairs(num_channels: usize) -> usize {
    num_channels * (num_channels.saturating_sub(1)) / 2
}

/// Microphone pairs in TDOA-vector order: (0,1), (0,2), (1,2), (0,3), (1,3), ...
pub fn mic_pairs(num_channels: usize) -> Vec<(usize, usize)> {
    (1..num_channels)
        .flat_map(|j| (0..j).map(move |i| (i, j)))
        .collect()
}

/// Position of pair `(i, j)`, `i < j`, in the TDOA vector.
#[inline]
pub fn pair_index(i: usize, j: usize) -> usize {
    debug_assert!(i < j);
    j * (j - 1) / 2 + i
}

/// Number of microphones implied by a TDOA vector length, if any.
pub fn channels_for_pairs(pairs: usize) -> Option<usize> {
    (2..64).find(|&c| num_pairs(c) == pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdoaVector {
    pub frame: usize,
    pub delays: Vec<f64>,
}

impl TdoaVector {
    pub fn new(frame: usize, delays: Vec<f64>) -> Self {
        Self { frame, delays }
    }

    /// Builds the vector implied by per-microphone arrival times (samples).
    pub fn from_arrivals(frame: usize, arrivals: &[f64]) -> Self {
        let delays = mic_pairs(arrivals.len())
            .into_iter()
            .map(|(i, j)| arrivals[j] - arrivals[i])
            .collect();
        Self { frame, delays }
    }

    pub fn num_channels(&self) -> usize {
        channels_for_pairs(self.delays.len()).unwrap_or(0)
    }

    /// Signed delay for any ordered pair.
    pub fn tau(&self, i: usize, j: usize) -> f64 {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Less => self.delays[pair_index(i, j)],
            Greater => -self.delays[pair_index(j, i)],
            Equal => 0.0,
        }
    }

    /// Largest `|tau_ij + tau_jk - tau_ik|` over all microphone triples.
    pub fn max_loop_residual(&self) -> f64 {
        let c = self.num_channels();
        let mut worst = 0.0f64;
        for k in 2..c {
            for j in 1..k {
                for i in 0..j {
                    let r = (self.tau(i, j) + self.tau(j, k) - self.tau(i, k)).abs();
                    worst = worst.max(r);
                }
            }
        }
        worst
    }

    pub fn euclidean(&self, other: &TdoaVector) -> f64 {
        euclidean(&self.delays, &other.delays)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn chebyshev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Sub-sample lag.
    pub lag: f64,
    /// Interpolated correlation value at `lag`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairCorrelation {
    pub pair: (usize, usize),
    /// Correlation for lags `-n/2 .. n/2`, stored at index `lag + n/2`.
    pub correlation: Vec<f64>,
    pub peaks: Vec<Peak>,
}

impl PairCorrelation {
    pub fn at_lag(&self, lag: isize) -> f64 {
        let half = (self.correlation.len() / 2) as isize;
        self.correlation[(lag + half) as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GccFrame {
    pub frame: usize,
    pub num_channels: usize,
    pub pairs: Vec<PairCorrelation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TdoaParams {
    /// Peaks kept per microphone pair (P).
    pub peaks_per_pair: usize,
    /// Closed-loop threshold tau_th in samples.
    pub loop_threshold: f64,
    /// Largest physically possible |delay| in samples.
    pub max_delay: f64,
    /// Frames whose strongest peak is below this emit no vectors. The
    /// correlation of a perfectly coherent pair peaks at 1.
    pub activity_threshold: f64,
    /// Span of cross-spectrum averaging in frames. The window is centred on
    /// the current frame and never wider than this, so 4 averages 3 frames.
    pub context_frames: usize,
    /// Minimum lag separation between picked peaks.
    pub min_peak_distance: usize,
    /// Maximum vectors emitted per frame.
    pub max_vectors: usize,
    /// Secondary peaks weaker than this fraction of their pair's strongest
    /// peak are dropped. Sidelobes of a single coherent source sit near
    /// 0.13 of the main lobe.
    pub relative_peak_floor: f64,
}

impl Default for TdoaParams {
    fn default() -> Self {
        Self {
            peaks_per_pair: 2,
            loop_threshold: 1.0,
            max_delay: 128.0,
            activity_threshold: 0.1,
            context_frames: 4,
            min_peak_distance: 2,
            max_vectors: 4,
            relative_peak_floor: 0.3,
        }
    }
}

/// Reusable buffers for computing GCC-PhaT correlations.
pub struct GccWorkspace {
    inverse: RealInverse,
    cross: Vec<Complex64>,
    raw: Vec<f64>,
}

impl GccWorkspace {
    pub fn new(fft_size: usize) -> Self {
        Self {
            inverse: RealInverse::new(fft_size),
            cross: vec![Complex64::new(0.0, 0.0); fft_size / 2 + 1],
            raw: vec![0.0; fft_size],
        }
    }
}

/// Frames `[t - h, t + h]` with `2h + 1 <= max(context, 1)`, clipped to the
/// tensor.
fn context_range(t: usize, context_frames: usize, num_frames: usize) -> std::ops::Range<usize> {
    let half = context_frames.saturating_sub(1) / 2;
    t.saturating_sub(half)..(t + half + 1).min(num_frames)
}

/// GCC-PhaT correlation of channels `i` and `j` around frame `t`, indexed
/// by lag (see [`PairCorrelation::correlation`]).
pub fn gcc_phat(
    spec: &SpectrogramTensor,
    (i, j): (usize, usize),
    t: usize,
    context_frames: usize,
) -> Vec<f64> {
    let mut ws = GccWorkspace::new(spec.fft_size());
    let mut out = vec![0.0; spec.fft_size()];
    gcc_phat_into(spec, (i, j), t, context_frames, &mut ws, &mut out);
    out
}

pub fn gcc_phat_into(
    spec: &SpectrogramTensor,
    (i, j): (usize, usize),
    t: usize,
    context_frames: usize,
    ws: &mut GccWorkspace,
    out: &mut [f64],
) {
    assert!(i != j, "gcc_phat needs two distinct channels");
    assert!(t < spec.num_frames(), "frame {t} out of range");
    let n = spec.fft_size();
    let frames = context_range(t, context_frames, spec.num_frames());
    let count = frames.len() as f64;
    ws.cross.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
    for tt in frames {
        let yi = spec.frame(i, tt);
        let yj = spec.frame(j, tt);
        for ((g, a), b) in ws.cross.iter_mut().zip(yi).zip(yj) {
            let x = a * b.conj();
            let m = x.norm();
            if m >= PHAT_FLOOR {
                *g += x / m;
            }
        }
    }
    ws.cross.iter_mut().for_each(|v| *v /= count);
    ws.inverse.process(&ws.cross, &mut ws.raw);
    // the IDFT of y_i y_j^* peaks at -tau; flip so the index reads +tau
    let half = n / 2;
    for (idx, o) in out.iter_mut().enumerate() {
        let lag = idx as isize - half as isize;
        *o = ws.raw[(-lag).rem_euclid(n as isize) as usize];
    }
}

/// Up to `count` local maxima within `±max_delay`, at least `min_distance`
/// lags apart, strongest first (ties: smaller lag first), refined by a
/// parabola through the peak and its neighbours.
pub fn pick_peaks(correlation: &[f64], count: usize, max_delay: f64, min_distance: usize) -> Vec<Peak> {
    let n = correlation.len();
    if n < 3 || count == 0 {
        return Vec::new();
    }
    let half = (n / 2) as isize;
    let reach = (max_delay.floor() as isize).min(half - 1).max(0);
    let lo = (half - reach).max(1) as usize;
    let hi = ((half + reach) as usize).min(n - 2);
    let mut candidates: Vec<usize> = (lo..=hi)
        .filter(|&k| correlation[k] > correlation[k - 1] && correlation[k] >= correlation[k + 1])
        .collect();
    candidates.sort_by(|&a, &b| correlation[b].total_cmp(&correlation[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    for k in candidates {
        if chosen.len() == count {
            break;
        }
        if chosen.iter().all(|&c| c.abs_diff(k) >= min_distance.max(1)) {
            chosen.push(k);
        }
    }
    chosen
        .into_iter()
        .map(|k| {
            let (l, c, r) = (correlation[k - 1], correlation[k], correlation[k + 1]);
            let denom = l - 2.0 * c + r;
            let (offset, value) = if denom < 0.0 {
                let d = (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
                (d, c - 0.25 * (l - r) * d)
            } else {
                (0.0, c)
            };
            Peak {
                lag: k as f64 - half as f64 + offset,
                value,
            }
        })
        .collect()
}

/// Computes the correlations and peaks of every microphone pair at frame `t`.
pub fn gcc_frame(spec: &SpectrogramTensor, t: usize, params: &TdoaParams) -> GccFrame {
    let mut ws = GccWorkspace::new(spec.fft_size());
    gcc_frame_with(spec, t, params, &mut ws)
}

fn gcc_frame_with(
    spec: &SpectrogramTensor,
    t: usize,
    params: &TdoaParams,
    ws: &mut GccWorkspace,
) -> GccFrame {
    let pairs = mic_pairs(spec.num_channels())
        .into_iter()
        .map(|pair| {
            let mut correlation = vec![0.0; spec.fft_size()];
            gcc_phat_into(spec, pair, t, params.context_frames, ws, &mut correlation);
            let mut peaks = pick_peaks(
                &correlation,
                params.peaks_per_pair,
                params.max_delay,
                params.min_peak_distance,
            );
            if let Some(top) = peaks.first().map(|p| p.value) {
                peaks.retain(|p| p.value >= params.relative_peak_floor * top);
            }
            PairCorrelation {
                pair,
                correlation,
                peaks,
            }
        })
        .collect();
    GccFrame {
        frame: t,
        num_channels: spec.num_channels(),
        pairs,
    }
}

/// A loop-consistent TDOA vector together with its summed peak value.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTdoa {
    pub vector: TdoaVector,
    pub score: f64,
}

/// Combines one peak per pair into TDOA vectors and keeps those whose
/// every three-microphone loop closes within `loop_threshold`. Near
/// duplicates (L-inf distance <= threshold / 2) collapse onto the higher
/// scoring vector and at most `max_vectors` survive, best first.
///
/// The search is depth-first in pair order, so a loop is checked as soon as
/// its last pair is assigned and inconsistent branches are cut early.
pub fn enumerate_consistent(gcc: &GccFrame, loop_threshold: f64, max_vectors: usize) -> Vec<ScoredTdoa> {
    let pairs = gcc.pairs.len();
    if pairs == 0 || gcc.pairs.iter().any(|p| p.peaks.is_empty()) {
        return Vec::new();
    }
    let c = gcc.num_channels;
    let mut found: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut choice = vec![0usize; pairs];
    let mut delays = vec![0.0; pairs];

    fn descend(
        depth: usize,
        gcc: &GccFrame,
        order: &[(usize, usize)],
        threshold: f64,
        choice: &mut Vec<usize>,
        delays: &mut Vec<f64>,
        found: &mut Vec<(Vec<usize>, f64)>,
    ) {
        if depth == order.len() {
            let score = choice
                .iter()
                .enumerate()
                .map(|(p, &k)| gcc.pairs[p].peaks[k].value)
                .sum();
            found.push((choice.clone(), score));
            return;
        }
        let (j, k) = order[depth];
        'peaks: for (idx, peak) in gcc.pairs[depth].peaks.iter().enumerate() {
            // loops (i, j, k) with i < j are completed by assigning (j, k)
            for i in 0..j {
                let r = delays[pair_index(i, j)] + peak.lag - delays[pair_index(i, k)];
                if r.abs() > threshold {
                    continue 'peaks;
                }
            }
            choice[depth] = idx;
            delays[depth] = peak.lag;
            descend(depth + 1, gcc, order, threshold, choice, delays, found);
        }
    }

    let order = mic_pairs(c);
    descend(0, gcc, &order, loop_threshold, &mut choice, &mut delays, &mut found);
    found.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut kept: Vec<ScoredTdoa> = Vec::new();
    for (combo, score) in found {
        if kept.len() == max_vectors {
            break;
        }
        let d: Vec<f64> = combo
            .iter()
            .enumerate()
            .map(|(p, &k)| gcc.pairs[p].peaks[k].lag)
            .collect();
        if kept
            .iter()
            .all(|s| chebyshev(&s.vector.delays, &d) > loop_threshold / 2.0)
        {
            kept.push(ScoredTdoa {
                vector: TdoaVector::new(gcc.frame, d),
                score,
            });
        }
    }
    kept
}

/// Strongest peak over all pairs of a frame.
pub fn frame_activity(gcc: &GccFrame) -> f64 {
    gcc.pairs
        .iter()
        .filter_map(|p| p.peaks.first().map(|pk| pk.value))
        .fold(0.0, f64::max)
}

/// All consistent TDOA vectors of every active frame, ordered by frame
/// (and by score within a frame). Frames are processed in parallel.
pub fn estimate_tdoa_stream(spec: &SpectrogramTensor, params: &TdoaParams) -> Vec<TdoaVector> {
    (0..spec.num_frames())
        .into_par_iter()
        .map_init(
            || GccWorkspace::new(spec.fft_size()),
            |ws, t| {
                let gcc = gcc_frame_with(spec, t, params, ws);
                if frame_activity(&gcc) < params.activity_threshold {
                    return Vec::new();
                }
                enumerate_consistent(&gcc, params.loop_threshold, params.max_vectors)
                    .into_iter()
                    .map(|s| s.vector)
                    .collect::<Vec<_>>()
            },
        )
        .flatten()
        .collect()
}
