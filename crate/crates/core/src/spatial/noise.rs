use std::ops::Range;

use num_complex::Complex64;
use rayon::prelude::*;

use super::CMatrix;
use crate::stft::SpectrogramTensor;

/// Average of `y y^H` over frames `t - context ..= t + context` (clipped).
pub fn local_scm(spec: &SpectrogramTensor, t: usize, f: usize, context: usize) -> CMatrix {
    let c = spec.num_channels();
    let mut scm = CMatrix::zeros(c, c);
    accumulate_scm(spec, t, f, context, &mut scm, &mut vec![Complex64::new(0.0, 0.0); c]);
    scm
}

fn accumulate_scm(spec: &SpectrogramTensor, t: usize, f: usize, context: usize, scm: &mut CMatrix, y: &mut [Complex64]) {
    let c = spec.num_channels();
    scm.fill(Complex64::new(0.0, 0.0));
    let frames = t.saturating_sub(context)..(t + context + 1).min(spec.num_frames());
    let n = frames.len() as f64;
    for tt in frames {
        spec.observation(tt, f, y);
        for j in 0..c {
            let yj = y[j].conj();
            for i in j..c {
                scm[(i, j)] += y[i] * yj;
            }
        }
    }
    for j in 0..c {
        for i in j..c {
            let v = scm[(i, j)] / n;
            scm[(i, j)] = v;
            scm[(j, i)] = v.conj();
        }
        scm[(j, j)].im = 0.0;
    }
}

/// Ratio of the two largest eigenvalues of a Hermitian PSD matrix.
/// Infinite when the second vanishes, zero for the zero matrix.
pub fn eigen_gap(scm: &CMatrix) -> f64 {
    let mut ev: Vec<f64> = scm.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let l1 = ev[0];
    let l2 = ev.get(1).copied().unwrap_or(0.0);
    if l1 <= 0.0 {
        0.0
    } else if l2 <= 1e-13 * l1 {
        f64::INFINITY
    } else {
        l1 / l2
    }
}

/// Noise/speech decision per time-frequency bin of a whole recording.
/// Frames that were never evaluated count as noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    num_bins: usize,
    noise: Vec<bool>,
}

impl NoiseField {
    pub fn all_speech(num_frames: usize, num_bins: usize) -> Self {
        Self {
            num_bins,
            noise: vec![false; num_frames * num_bins],
        }
    }

    /// Evaluates the eigenvalue-gap test on the frames in `ranges`.
    pub fn estimate(spec: &SpectrogramTensor, ranges: &[Range<usize>], context: usize, gap_threshold: f64) -> Self {
        let bins = spec.num_bins();
        let frames = spec.num_frames();
        let mut wanted = vec![false; frames];
        for r in ranges {
            for t in r.start.min(frames)..r.end.min(frames) {
                wanted[t] = true;
            }
        }
        let mut noise = vec![true; frames * bins];
        let c = spec.num_channels();
        noise
            .par_chunks_mut(bins)
            .enumerate()
            .filter(|(t, _)| wanted[*t])
            .for_each_init(
                || (CMatrix::zeros(c, c), vec![Complex64::new(0.0, 0.0); c]),
                |(scm, y), (t, row)| {
                    for (f, out) in row.iter_mut().enumerate() {
                        accumulate_scm(spec, t, f, context, scm, y);
                        *out = eigen_gap(scm) < gap_threshold;
                    }
                },
            );
        Self { num_bins: bins, noise }
    }

    pub fn is_noise(&self, t: usize, f: usize) -> bool {
        self.noise[t * self.num_bins + f]
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Fraction of speech bins among `frames`.
    pub fn speech_fraction(&self, frames: Range<usize>) -> f64 {
        let slice = &self.noise[frames.start * self.num_bins..frames.end * self.num_bins];
        slice.iter().filter(|n| !**n).count() as f64 / slice.len().max(1) as f64
    }
}
