use nalgebra::DVector;
use num_complex::Complex64;

use super::{CMatrix, MaskSet};
use crate::error::{Error, Result};
use crate::stft::SpectrogramTensor;

const LOADING: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct MvdrResult {
    /// Single-channel spectrogram over the mask's frames.
    pub output: SpectrogramTensor,
    /// Beamformer per bin.
    pub weights: Vec<Vec<Complex64>>,
    /// Bins where the reference channel was passed through unchanged.
    pub passthrough_bins: Vec<usize>,
}

/// `w = (Phi_nn^-1 Phi_ss / tr(Phi_nn^-1 Phi_ss)) e_ref`. `Phi_nn` is loaded
/// with `1e-6 tr(Phi_nn) / C` on its diagonal, which keeps the weights
/// invariant to positive scaling of either matrix. `None` when the trace
/// vanishes.
pub fn mvdr_weights(phi_ss: &CMatrix, phi_nn: &CMatrix, ref_mic: usize) -> Option<Vec<Complex64>> {
    let c = phi_nn.nrows();
    let tr_nn = phi_nn.trace().re;
    let mut loaded = phi_nn.clone();
    let load = if tr_nn > 0.0 { LOADING * tr_nn / c as f64 } else { 1.0 };
    for i in 0..c {
        loaded[(i, i)] += load;
    }
    let inv = loaded
        .clone()
        .cholesky()
        .map(|ch| ch.inverse())
        .or_else(|| loaded.try_inverse())?;
    let numerator = inv * phi_ss;
    let tr = numerator.trace();
    if !(tr.norm() > 1e-12) || !tr.re.is_finite() {
        return None;
    }
    Some(numerator.column(ref_mic).iter().map(|v| v / tr).collect())
}

/// Mask-based MVDR toward `target` over the mask's frames. Target
/// statistics are weighted by the target mask, noise statistics by its
/// complement (noise class and all interferers).
pub fn mvdr_beamform(spec: &SpectrogramTensor, mask: &MaskSet, target: usize, ref_mic: usize) -> Result<MvdrResult> {
    let k = mask
        .class_of(target)
        .ok_or_else(|| Error::InvalidConfig(format!("segment {target} has no mask")))?;
    let c = spec.num_channels();
    if ref_mic >= c {
        return Err(Error::InvalidConfig(format!("reference mic {ref_mic} of {c}")));
    }
    if mask.masks[k].iter().all(|&m| m <= 0.0) {
        return Err(Error::EmptyInput("target mask"));
    }
    let bins = mask.num_bins;
    let frames = mask.frames.clone();
    let mut output = SpectrogramTensor::zeros(1, frames.len(), spec.fft_size(), spec.frame_shift(), spec.sample_rate());
    let mut weights = Vec::with_capacity(bins);
    let mut passthrough_bins = Vec::new();
    let mut y = vec![Complex64::new(0.0, 0.0); c];
    for f in 0..bins {
        let mut phi_ss = CMatrix::zeros(c, c);
        let mut phi_nn = CMatrix::zeros(c, c);
        let (mut ws, mut wn) = (0.0, 0.0);
        for t in frames.clone() {
            spec.observation(t, f, &mut y);
            let v = DVector::from_column_slice(&y);
            let outer = &v * v.adjoint();
            let m = mask.get(k, t, f);
            phi_ss += &outer * Complex64::new(m, 0.0);
            phi_nn += &outer * Complex64::new(1.0 - m, 0.0);
            ws += m;
            wn += 1.0 - m;
        }
        if ws > 0.0 {
            phi_ss /= Complex64::new(ws, 0.0);
        }
        if wn > 0.0 {
            phi_nn /= Complex64::new(wn, 0.0);
        }
        let w = mvdr_weights(&phi_ss, &phi_nn, ref_mic).unwrap_or_else(|| {
            passthrough_bins.push(f);
            (0..c).map(|i| Complex64::new(if i == ref_mic { 1.0 } else { 0.0 }, 0.0)).collect()
        });
        for (i, t) in frames.clone().enumerate() {
            spec.observation(t, f, &mut y);
            let out: Complex64 = w.iter().zip(&y).map(|(wi, yi)| wi.conj() * yi).sum();
            output.set(0, i, f, out);
        }
        weights.push(w);
    }
    Ok(MvdrResult {
        output,
        weights,
        passthrough_bins,
    })
}
