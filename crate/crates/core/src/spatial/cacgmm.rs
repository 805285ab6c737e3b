use nalgebra::Cholesky;
use num_complex::Complex64;
use rayon::prelude::*;

use super::{CMatrix, MaskSet};
use crate::stft::SpectrogramTensor;

const RIDGE: f64 = 1e-6;
/// Strength of the isotropic prior on every shape matrix, in
/// pseudo-observations. Keeps classes that own only a handful of frames at
/// some frequency from collapsing onto a rank-deficient matrix.
const PRIOR_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct CacgmmResult {
    /// Posteriors of the last accepted iteration.
    pub masks: MaskSet,
    /// Log-likelihood after every evaluated iteration, including a rejected
    /// final one when the fit stopped early.
    pub log_likelihood: Vec<f64>,
    pub stopped_early: bool,
}

/// Per-frequency class parameters: inverse shape matrix, its log-det and
/// the log prior of the shape matrix.
struct Component {
    inverse: Vec<Complex64>,
    log_det: f64,
    log_prior: f64,
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// `z^H B^-1 z` with `inverse` stored column-major.
fn quad(inverse: &[Complex64], z: &[Complex64]) -> f64 {
    let c = z.len();
    let mut acc = 0.0;
    for j in 0..c {
        let mut col = Complex64::new(0.0, 0.0);
        for i in 0..c {
            col += z[i].conj() * inverse[j * c + i];
        }
        acc += (col * z[j]).re;
    }
    acc.max(1e-300)
}

fn factorize(b: CMatrix) -> Component {
    let c = b.nrows();
    let chol = Cholesky::new(b.clone()).unwrap_or_else(|| {
        let ridge = RIDGE * b.trace().re.max(1e-300) / c as f64;
        let mut loaded = b;
        for i in 0..c {
            loaded[(i, i)] += ridge;
        }
        Cholesky::new(loaded).expect("ridge-loaded shape matrix is positive definite")
    });
    let log_det = 2.0 * (0..c).map(|i| chol.l_dirty()[(i, i)].re.ln()).sum::<f64>();
    let inverse = chol.inverse();
    let log_prior = -PRIOR_WEIGHT * (log_det + inverse.trace().re);
    Component {
        inverse: inverse.as_slice().to_vec(),
        log_det,
        log_prior,
    }
}

/// Fits a complex angular central Gaussian mixture to the unit-normalised
/// observations of `init.frames`, starting from the masks in `init`.
///
/// Mixture weights vary over time and are shared by all frequencies, which
/// keeps the classes aligned across bins. Every shape matrix carries a weak
/// prior `det(B)^-1 exp(-tr(B^-1))`, worth one isotropic observation, and
/// the reported log-likelihood includes its log density. The shape update
/// is the minorize-maximize step of that objective, so each iteration (an
/// M-step from the current posteriors followed by an E-step) cannot lower
/// it in exact arithmetic; if it drops numerically, the previous posteriors
/// are returned and `stopped_early` is set.
pub fn cacgmm_refine(spec: &SpectrogramTensor, init: &MaskSet, iterations: usize) -> CacgmmResult {
    let c = spec.num_channels();
    let bins = init.num_bins;
    let frames = init.num_frames();
    let k_count = init.classes.len();
    let t0 = init.frames.start;
    let norm_const = ln_factorial(c - 1) - (2.0 * std::f64::consts::PI.powi(c as i32)).ln();

    // observations and posteriors, frequency-major: [f][t]
    let mut z = vec![vec![Complex64::new(0.0, 0.0); c]; bins * frames];
    let mut valid = vec![false; bins * frames];
    let mut y = vec![Complex64::new(0.0, 0.0); c];
    for f in 0..bins {
        for t in 0..frames {
            spec.observation(t0 + t, f, &mut y);
            let n = y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if n > 0.0 && n.is_finite() {
                let i = f * frames + t;
                z[i] = y.iter().map(|v| v / n).collect();
                valid[i] = true;
            }
        }
    }
    let mut gamma: Vec<Vec<f64>> = (0..bins * frames)
        .map(|i| {
            let (f, t) = (i / frames, i % frames);
            (0..k_count).map(|k| init.masks[k][t * bins + f]).collect()
        })
        .collect();
    // z^H B^-1 z under the previous shape matrices; B = I initially
    let mut q_prev = vec![vec![1.0; k_count]; bins * frames];

    let mut log_likelihood = Vec::new();
    let mut stopped_early = false;
    for _ in 0..iterations.max(1) {
        let mut pi = vec![vec![0.0; k_count]; frames];
        for (t, row) in pi.iter_mut().enumerate() {
            let mut n = 0usize;
            for f in 0..bins {
                let i = f * frames + t;
                if valid[i] {
                    n += 1;
                    for (k, p) in row.iter_mut().enumerate() {
                        *p += gamma[i][k];
                    }
                }
            }
            for p in row.iter_mut() {
                *p = if n == 0 { 1.0 / k_count as f64 } else { *p / n as f64 };
            }
        }

        let components: Vec<Vec<Component>> = (0..bins)
            .into_par_iter()
            .map(|f| {
                (0..k_count)
                    .map(|k| {
                        let mut b = CMatrix::zeros(c, c);
                        let mut weight = 0.0;
                        for t in 0..frames {
                            let i = f * frames + t;
                            if !valid[i] || gamma[i][k] <= 0.0 {
                                continue;
                            }
                            let w = gamma[i][k] / q_prev[i][k];
                            weight += gamma[i][k];
                            for col in 0..c {
                                let zc = z[i][col].conj() * w;
                                for row in 0..c {
                                    b[(row, col)] += z[i][row] * zc;
                                }
                            }
                        }
                        b *= Complex64::new(c as f64, 0.0);
                        for d in 0..c {
                            b[(d, d)] += PRIOR_WEIGHT;
                        }
                        b /= Complex64::new(weight + PRIOR_WEIGHT, 0.0);
                        let b = (&b + b.adjoint()) * Complex64::new(0.5, 0.0);
                        factorize(b)
                    })
                    .collect()
            })
            .collect();

        let mut next_gamma = gamma.clone();
        let mut next_q = q_prev.clone();
        let per_bin: Vec<f64> = next_gamma
            .par_chunks_mut(frames)
            .zip(next_q.par_chunks_mut(frames))
            .enumerate()
            .map(|(f, (g_rows, q_rows))| {
                let mut ll: f64 = components[f].iter().map(|c| c.log_prior).sum();
                let mut logp = vec![0.0; k_count];
                for t in 0..frames {
                    let i = f * frames + t;
                    if !valid[i] {
                        continue;
                    }
                    for k in 0..k_count {
                        let comp = &components[f][k];
                        let q = quad(&comp.inverse, &z[i]);
                        q_rows[t][k] = q;
                        logp[k] = pi[t][k].ln() + norm_const - comp.log_det - c as f64 * q.ln();
                    }
                    let m = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = logp.iter().map(|l| (l - m).exp()).sum();
                    ll += m + s.ln();
                    for k in 0..k_count {
                        g_rows[t][k] = (logp[k] - m).exp() / s;
                    }
                }
                ll
            })
            .collect();
        let ll: f64 = per_bin.iter().sum();
        let decreased = log_likelihood.last().is_some_and(|&prev: &f64| ll < prev);
        log_likelihood.push(ll);
        if decreased {
            stopped_early = true;
            break;
        }
        gamma = next_gamma;
        q_prev = next_q;
    }

    let mut masks = vec![vec![0.0; frames * bins]; k_count];
    for f in 0..bins {
        for t in 0..frames {
            for (k, m) in masks.iter_mut().enumerate() {
                m[t * bins + f] = gamma[f * frames + t][k];
            }
        }
    }
    CacgmmResult {
        masks: MaskSet {
            frames: init.frames.clone(),
            num_bins: bins,
            classes: init.classes.clone(),
            masks,
        },
        log_likelihood,
        stopped_early,
    }
}
