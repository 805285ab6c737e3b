//! Multichannel sample buffers and WAV I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// Real-valued samples of `C` equally long channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelAudio {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

/// PCM encoding used when writing WAV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleFormat {
    Int16,
    #[default]
    Float32,
}

impl MultichannelAudio {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::EmptyInput("audio has no channels"));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidConfig(
                "all channels must have the same length".into(),
            ));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn zeros(num_channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![vec![0.0; len]; num_channels], sample_rate)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Stacks several recordings channel-wise, e.g. one file per distributed
    /// device. Shorter recordings are zero-padded to the longest one.
    pub fn zip(parts: Vec<MultichannelAudio>) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyInput("no recordings"))?;
        let sample_rate = first.sample_rate;
        if parts.iter().any(|p| p.sample_rate != sample_rate) {
            return Err(Error::InvalidConfig(
                "recordings have different sample rates".into(),
            ));
        }
        let len = parts.iter().map(|p| p.len()).max().unwrap_or(0);
        let channels = parts
            .into_iter()
            .flat_map(|p| p.channels)
            .map(|mut c| {
                c.resize(len, 0.0);
                c
            })
            .collect();
        Self::new(channels, sample_rate)
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        let num_channels = spec.channels as usize;
        let interleaved: Vec<f64> = match spec.sample_format {
            hound::SampleFormat::Float => reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()?,
            hound::SampleFormat::Int => {
                let scale = 1.0 / f64::from(1u32 << (spec.bits_per_sample - 1));
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| f64::from(v) * scale))
                    .collect::<std::result::Result<_, _>>()?
            }
        };
        let len = interleaved.len() / num_channels;
        let mut channels = vec![Vec::with_capacity(len); num_channels];
        for frame in interleaved.chunks_exact(num_channels) {
            for (c, &v) in frame.iter().enumerate() {
                channels[c].push(v);
            }
        }
        Self::new(channels, spec.sample_rate)
    }

    pub fn write_wav(&self, path: impl AsRef<Path>, format: SampleFormat) -> Result<()> {
        let spec = hound::WavSpec {
            channels: self.num_channels() as u16,
            sample_rate: self.sample_rate,
            bits_per_sample: match format {
                SampleFormat::Int16 => 16,
                SampleFormat::Float32 => 32,
            },
            sample_format: match format {
                SampleFormat::Int16 => hound::SampleFormat::Int,
                SampleFormat::Float32 => hound::SampleFormat::Float,
            },
        };
        let mut writer = hound::WavWriter::create(path, spec)?;
        for n in 0..self.len() {
            for ch in &self.channels {
                match format {
                    SampleFormat::Int16 => {
                        let v = (ch[n] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                        writer.write_sample(v)?;
                    }
                    SampleFormat::Float32 => writer.write_sample(ch[n] as f32)?,
                }
            }
        }
        writer.finalize()?;
        Ok(())
    }
}
