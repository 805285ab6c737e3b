//! Spatio-spectral speaker diarization for multichannel recordings.
//!
//! Local speech segments come from TDOA vectors of GCC-PhaT peaks; each
//! segment is enhanced by a mask-based MVDR beamformer, embedded, and the
//! embeddings are clustered globally into speakers.

pub mod audio;
pub mod baseline;
pub mod clustering;
pub mod config;
pub mod diarization;
pub mod embedding;
pub mod error;
pub mod hdbscan;
pub mod pipeline;
pub mod scoring;
pub mod segment;
pub mod simulator;
pub mod spatial;
pub mod stft;
pub mod tdoa;

pub use error::{Error, Result};
