//! Segment-wise time-frequency masks from spatial prototypes.
//!
//! Every segment contributes a rank-1 prototype SCM built from the steering
//! vector of its median TDOA. Within a segment's extent each speech bin is
//! given to the closest prototype among the segments overlapping it in
//! time; bins with a small eigenvalue gap are noise. Segments that win too
//! little of their own extent are treated as reflection phantoms.

mod cacgmm;
mod mvdr;
mod noise;

use std::f64::consts::PI;
use std::io::Write;
use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::segment::Segment;
use crate::stft::SpectrogramTensor;
use crate::tdoa::TdoaVector;

pub use cacgmm::{cacgmm_refine, CacgmmResult};
pub use mvdr::{mvdr_beamform, mvdr_weights, MvdrResult};
pub use noise::{eigen_gap, local_scm, NoiseField};

pub type CMatrix = DMatrix<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskParams {
    /// A bin is noise when lambda1 / lambda2 of its local SCM is below this.
    pub gap_threshold: f64,
    /// Half-width in frames of the local SCM window.
    pub scm_context: usize,
    /// Band (Hz) over which reflection activity is averaged.
    pub band: (f64, f64),
    /// Segments whose in-band activity is below this are discarded.
    pub activity_threshold: f64,
    pub cacgmm_iterations: usize,
    /// Reference microphone of the beamformer output.
    pub ref_mic: usize,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            gap_threshold: 10.0,
            scm_context: 5,
            band: (150.0, 3500.0),
            activity_threshold: 0.2,
            cacgmm_iterations: 5,
            ref_mic: 0,
        }
    }
}

/// Per-microphone steering vectors for every bin `0..=fft_size/2`, relative
/// to microphone 0: `a_c(k) = exp(-j 2 pi k delta_c / fft_size)` with
/// `delta_c = tau(0, c)`.
pub fn steering_vector(tdoa: &TdoaVector, fft_size: usize) -> Vec<Vec<Complex64>> {
    let c = tdoa.num_channels();
    let delta: Vec<f64> = (0..c).map(|m| if m == 0 { 0.0 } else { tdoa.tau(0, m) }).collect();
    (0..=fft_size / 2)
        .map(|k| {
            delta
                .iter()
                .map(|d| Complex64::from_polar(1.0, -2.0 * PI * k as f64 * d / fft_size as f64))
                .collect()
        })
        .collect()
}

/// Rank-1 prototype SCM `a a^H`.
pub fn prototype_scm(a: &[Complex64]) -> CMatrix {
    let v = nalgebra::DVector::from_column_slice(a);
    &v * v.adjoint()
}

/// Elementwise phase matrix `y y^H / |y y^H|`; `None` if any entry of `y`
/// vanishes.
pub fn phase_matrix(y: &[Complex64]) -> Option<CMatrix> {
    let u = unit_phases(y)?;
    Some(prototype_scm(&u))
}

fn unit_phases(y: &[Complex64]) -> Option<Vec<Complex64>> {
    y.iter()
        .map(|v| {
            let m = v.norm();
            (m > 0.0 && m.is_finite()).then(|| v / m)
        })
        .collect()
}

/// `1 - Re tr(A B) / (||A||_F ||B||_F)`; 1 if either matrix is zero.
pub fn herdin_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let tr: Complex64 = (0..a.nrows())
        .flat_map(|i| (0..a.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| a[(i, j)] * b[(j, i)])
        .sum();
    1.0 - tr.re / (na * nb)
}

/// Herdin distance between `a a^H` and the phase matrix of an observation
/// with unit phases `u`, both with unit-modulus entries:
/// `1 - |a^H u|^2 / C^2`.
fn prototype_distance(a: &[Complex64], u: &[Complex64]) -> f64 {
    let dot: Complex64 = a.iter().zip(u).map(|(x, y)| x.conj() * y).sum();
    let c = a.len() as f64;
    1.0 - dot.norm_sqr() / (c * c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskClass {
    Noise,
    Segment(usize),
}

/// Masks over a segment's extent. Class 0 is always noise; the others are
/// segments. Binary masks hold 0/1; refined masks hold posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub frames: Range<usize>,
    pub num_bins: usize,
    pub classes: Vec<MaskClass>,
    /// Per class, indexed `[(t - frames.start) * num_bins + f]`.
    pub masks: Vec<Vec<f64>>,
}

impl MaskSet {
    pub fn from_labels(frames: Range<usize>, num_bins: usize, classes: Vec<MaskClass>, labels: &[usize]) -> Self {
        let mut masks = vec![vec![0.0; labels.len()]; classes.len()];
        for (i, &l) in labels.iter().enumerate() {
            masks[l][i] = 1.0;
        }
        Self {
            frames,
            num_bins,
            classes,
            masks,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn class_of(&self, segment: usize) -> Option<usize> {
        self.classes.iter().position(|c| *c == MaskClass::Segment(segment))
    }

    pub fn get(&self, class: usize, t: usize, f: usize) -> f64 {
        self.masks[class][(t - self.frames.start) * self.num_bins + f]
    }

    /// Hard labels: the class with the largest mask value per bin (lowest
    /// class index on ties).
    pub fn labels(&self) -> Vec<usize> {
        let n = self.masks.first().map_or(0, Vec::len);
        (0..n)
            .map(|i| {
                let mut best = 0;
                for k in 1..self.masks.len() {
                    if self.masks[k][i] > self.masks[best][i] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    /// Mean of the class mask over the extent and the bins of `band`.
    pub fn band_activity(&self, class: usize, bins: Range<usize>) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for t in 0..self.num_frames() {
            for f in bins.clone() {
                sum += self.masks[class][t * self.num_bins + f];
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Little-endian dump: `u32` rank (3), `u32` classes, frames, bins, then
    /// `f32` values in class-major, frame, bin order.
    pub fn write_raw(&self, mut out: impl Write) -> std::io::Result<()> {
        for v in [3u32, self.classes.len() as u32, self.num_frames() as u32, self.num_bins as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        for m in &self.masks {
            for v in m {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Bins `[lo, hi]` Hz expressed as a bin range.
pub fn band_bins(band: (f64, f64), fft_size: usize, sample_rate: u32) -> Range<usize> {
    let hz = sample_rate as f64 / fft_size as f64;
    let lo = (band.0 / hz).ceil().max(0.0) as usize;
    let hi = ((band.1 / hz).floor() as usize).min(fft_size / 2);
    lo..hi.max(lo.saturating_sub(1)) + 1
}

/// A segment's identity and steering vectors.
#[derive(Debug, Clone)]
pub struct Prototype {
    pub segment: usize,
    pub steering: Vec<Vec<Complex64>>,
}

impl Prototype {
    pub fn new(segment: usize, tdoa: &TdoaVector, fft_size: usize) -> Self {
        Self {
            segment,
            steering: steering_vector(tdoa, fft_size),
        }
    }
}

/// Gives every non-noise bin of `frames` to the closest prototype
/// (ties: first in `prototypes`). Zero observations are noise.
pub fn assign_bins(
    spec: &SpectrogramTensor,
    frames: Range<usize>,
    prototypes: &[Prototype],
    noise: &NoiseField,
) -> MaskSet {
    let bins = spec.num_bins();
    let c = spec.num_channels();
    let mut classes = vec![MaskClass::Noise];
    classes.extend(prototypes.iter().map(|p| MaskClass::Segment(p.segment)));
    let mut labels = vec![0usize; frames.len() * bins];
    let mut y = vec![Complex64::new(0.0, 0.0); c];
    for (ti, t) in frames.clone().enumerate() {
        for f in 0..bins {
            if noise.is_noise(t, f) {
                continue;
            }
            spec.observation(t, f, &mut y);
            let Some(u) = unit_phases(&y) else { continue };
            let mut best = (f64::INFINITY, 0);
            for (k, p) in prototypes.iter().enumerate() {
                let d = prototype_distance(&p.steering[f], &u);
                if d < best.0 {
                    best = (d, k + 1);
                }
            }
            labels[ti * bins + f] = best.1;
        }
    }
    MaskSet::from_labels(frames, bins, classes, &labels)
}

/// Prototypes for segment `s`: itself first, then the segments of `pool`
/// overlapping it in time, by id.
pub fn prototypes_for(s: &Segment, pool: &[&Segment], fft_size: usize) -> Vec<Prototype> {
    let mut out = vec![Prototype::new(s.id, &s.median_tdoa, fft_size)];
    let mut others: Vec<&&Segment> = pool.iter().filter(|o| o.id != s.id && o.overlaps(s)).collect();
    others.sort_by_key(|o| o.id);
    out.extend(others.into_iter().map(|o| Prototype::new(o.id, &o.median_tdoa, fft_size)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionVerdict {
    pub segment: usize,
    pub activity: f64,
    pub kept: bool,
}

/// In-band activity of `segment` in its own mask over its own extent.
pub fn reflection_filter(mask: &MaskSet, segment: usize, band: Range<usize>, threshold: f64) -> ReflectionVerdict {
    let activity = mask.class_of(segment).map_or(0.0, |k| mask.band_activity(k, band));
    ReflectionVerdict {
        segment,
        activity,
        kept: activity >= threshold,
    }
}
