//! STFT / ISTFT front-end.
//!
//! Frame `t` covers samples `t * frame_shift .. t * frame_shift + fft_size`;
//! the tail of the signal is zero-padded up to the last frame. Spectra keep
//! the real-input layout, bins `0..=fft_size / 2`, so bin `k` sits at
//! `k * sample_rate / fft_size` Hz everywhere in the crate.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::MultichannelAudio;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Periodic Hann window.
    #[default]
    Hann,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftParams {
    pub fft_size: usize,
    pub frame_shift: usize,
    pub window: Window,
}

impl Default for StftParams {
    /// 64 ms frames with 16 ms shift at 16 kHz.
    fn default() -> Self {
        Self {
            fft_size: 1024,
            frame_shift: 256,
            window: Window::Hann,
        }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "fft_size must be a power of two, got {}",
                self.fft_size
            )));
        }
        if self.frame_shift == 0 || self.frame_shift > self.fft_size {
            return Err(Error::InvalidConfig(format!(
                "frame_shift must be in 1..={}, got {}",
                self.fft_size, self.frame_shift
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of frames needed to cover `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        if len <= self.fft_size {
            1
        } else {
            (len - self.fft_size).div_ceil(self.frame_shift) + 1
        }
    }

    /// Overlap-added squared window divided by the shift. For Hann with 50 %
    /// or 75 % overlap this is the constant by which the summed frame energy
    /// exceeds the signal energy in the fully overlapped interior.
    pub fn window_power_gain(&self) -> f64 {
        let w = self.window.coefficients(self.fft_size);
        w.iter().map(|v| v * v).sum::<f64>() / self.frame_shift as f64
    }
}

/// Maps frame indices to seconds. Frame `t` is stamped with the time of its
/// centre sample, `t * frame_shift + fft_size / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameClock {
    pub frame_shift: usize,
    pub fft_size: usize,
    pub sample_rate: u32,
}

impl FrameClock {
    pub fn frame_time(&self, t: usize) -> f64 {
        (t * self.frame_shift + self.fft_size / 2) as f64 / self.sample_rate as f64
    }

    /// Frame whose centre is nearest to `seconds`.
    pub fn frame_at(&self, seconds: f64) -> usize {
        let s = seconds * self.sample_rate as f64 - (self.fft_size / 2) as f64;
        (s / self.frame_shift as f64).round().max(0.0) as usize
    }

    pub fn period(&self) -> f64 {
        self.frame_shift as f64 / self.sample_rate as f64
    }
}

/// Complex spectrogram indexed by (channel, frame, bin).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramTensor {
    values: Vec<Complex64>,
    num_channels: usize,
    num_frames: usize,
    fft_size: usize,
    frame_shift: usize,
    sample_rate: u32,
}

impl SpectrogramTensor {
    pub fn zeros(
        num_channels: usize,
        num_frames: usize,
        fft_size: usize,
        frame_shift: usize,
        sample_rate: u32,
    ) -> Self {
        let bins = fft_size / 2 + 1;
        Self {
            values: vec![Complex64::new(0.0, 0.0); num_channels * num_frames * bins],
            num_channels,
            num_frames,
            fft_size,
            frame_shift,
            sample_rate,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn frame_shift(&self) -> usize {
        self.frame_shift
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.fft_size as f64
    }

    pub fn clock(&self) -> FrameClock {
        FrameClock {
            frame_shift: self.frame_shift,
            fft_size: self.fft_size,
            sample_rate: self.sample_rate,
        }
    }

    #[inline]
    fn offset(&self, c: usize, t: usize) -> usize {
        (c * self.num_frames + t) * self.num_bins()
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, f: usize) -> Complex64 {
        self.values[self.offset(c, t) + f]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, f: usize, v: Complex64) {
        let o = self.offset(c, t);
        self.values[o + f] = v;
    }

    pub fn frame(&self, c: usize, t: usize) -> &[Complex64] {
        let o = self.offset(c, t);
        &self.values[o..o + self.num_bins()]
    }

    pub fn frame_mut(&mut self, c: usize, t: usize) -> &mut [Complex64] {
        let o = self.offset(c, t);
        let bins = self.num_bins();
        &mut self.values[o..o + bins]
    }

    /// Observation vector `y(t, f)` across all channels.
    pub fn observation(&self, t: usize, f: usize, out: &mut [Complex64]) {
        for (c, y) in out.iter_mut().enumerate().take(self.num_channels) {
            *y = self.get(c, t, f);
        }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Copy of the frames `range` of a single channel as a 1-channel tensor.
    pub fn channel_slice(&self, c: usize, frames: std::ops::Range<usize>) -> SpectrogramTensor {
        let mut out = SpectrogramTensor::zeros(
            1,
            frames.len(),
            self.fft_size,
            self.frame_shift,
            self.sample_rate,
        );
        for (i, t) in frames.enumerate() {
            out.frame_mut(0, i).copy_from_slice(self.frame(c, t));
        }
        out
    }
}

pub fn stft(audio: &MultichannelAudio, params: &StftParams) -> Result<SpectrogramTensor> {
    params.validate()?;
    if audio.is_empty() {
        return Err(Error::EmptyInput("audio has no samples"));
    }
    let n = params.fft_size;
    let frames = params.num_frames(audio.len());
    let window = params.window.coefficients(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut spec = SpectrogramTensor::zeros(
        audio.num_channels(),
        frames,
        n,
        params.frame_shift,
        audio.sample_rate(),
    );
    let bins = params.num_bins();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for c in 0..audio.num_channels() {
        let x = audio.channel(c);
        for t in 0..frames {
            let start = t * params.frame_shift;
            for (i, b) in buf.iter_mut().enumerate() {
                let v = x.get(start + i).copied().unwrap_or(0.0);
                *b = Complex64::new(v * window[i], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            spec.frame_mut(c, t).copy_from_slice(&buf[..bins]);
        }
    }
    Ok(spec)
}

/// Inverse of a single half spectrum (bins `0..=n/2`) to `n` real samples.
pub(crate) struct RealInverse {
    n: usize,
    ifft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl RealInverse {
    pub(crate) fn new(n: usize) -> Self {
        let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
        let scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
        Self {
            n,
            ifft,
            buf: vec![Complex64::new(0.0, 0.0); n],
            scratch,
        }
    }

    /// Writes `(1/n) * IDFT` of the Hermitian extension of `half` into `out`.
    pub(crate) fn process(&mut self, half: &[Complex64], out: &mut [f64]) {
        let n = self.n;
        self.buf[..=n / 2].copy_from_slice(&half[..=n / 2]);
        // imaginary parts of DC and Nyquist are not representable in a real signal
        self.buf[0].im = 0.0;
        self.buf[n / 2].im = 0.0;
        for k in 1..n / 2 {
            self.buf[n - k] = half[k].conj();
        }
        self.ifft
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = 1.0 / n as f64;
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re * scale;
        }
    }
}

/// Weighted overlap-add inverse. The output has
/// `(num_frames - 1) * frame_shift + fft_size` samples; samples whose summed
/// squared window is below 1e-3 of its maximum (the first and last few
/// dozen) are attenuated rather than amplified.
pub fn istft(spec: &SpectrogramTensor, window: Window) -> Result<MultichannelAudio> {
    let n = spec.fft_size;
    if !n.is_power_of_two() || spec.frame_shift == 0 || spec.frame_shift > n {
        return Err(Error::InvalidConfig(
            "inconsistent fft_size / frame_shift".into(),
        ));
    }
    if spec.values.len() != spec.num_channels * spec.num_frames * spec.num_bins() {
        return Err(Error::InvalidConfig("tensor size does not match its shape".into()));
    }
    let w = window.coefficients(n);
    let len = (spec.num_frames.saturating_sub(1)) * spec.frame_shift + n;
    let mut norm = vec![0.0; len];
    for t in 0..spec.num_frames {
        let start = t * spec.frame_shift;
        for (i, wi) in w.iter().enumerate() {
            norm[start + i] += wi * wi;
        }
    }
    let floor = 1e-3 * norm.iter().cloned().fold(0.0, f64::max);
    let mut inverse = RealInverse::new(n);
    let mut frame = vec![0.0; n];
    let mut channels = Vec::with_capacity(spec.num_channels);
    for c in 0..spec.num_channels {
        let mut out = vec![0.0; len];
        for t in 0..spec.num_frames {
            inverse.process(spec.frame(c, t), &mut frame);
            let start = t * spec.frame_shift;
            for i in 0..n {
                out[start + i] += frame[i] * w[i];
            }
        }
        for (o, d) in out.iter_mut().zip(&norm) {
            *o /= d.max(floor);
        }
        channels.push(out);
    }
    MultichannelAudio::new(channels, spec.sample_rate)
}
