//! End-to-end diarization: STFT, TDOA stream, segments, masks with
//! reflection filtering, refinement, MVDR, embeddings, clustering.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::audio::{MultichannelAudio, SampleFormat};
use crate::clustering::{cluster_embeddings, merge_and_emit, reassign_outliers};
use crate::config::{PipelineConfig, Refinement};
use crate::diarization::Diarization;
use crate::embedding::{Embedder, ExternalEmbeddings, SegmentAudio};
use crate::error::{Error, Result};
use crate::segment::{detect_segments, write_segments_jsonl, Segment};
use crate::spatial::{
    assign_bins, band_bins, cacgmm_refine, mvdr_beamform, prototypes_for, reflection_filter, MaskSet, NoiseField,
    ReflectionVerdict,
};
use crate::stft::{istft, stft, FrameClock};
use crate::tdoa::{estimate_tdoa_stream, TdoaVector};

#[derive(Debug, Clone, Serialize)]
pub struct CacgmmTrace {
    pub segment: usize,
    pub log_likelihood: Vec<f64>,
    pub stopped_early: bool,
}

/// A segment that reached the embedding stage.
#[derive(Debug, Clone)]
pub struct EnhancedSegment {
    pub segment: usize,
    pub start: f64,
    pub end: f64,
    pub waveform: Vec<f64>,
    /// Bins where the beamformer fell back to the reference channel.
    pub passthrough_bins: usize,
    pub mask: Option<MaskSet>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub diarization: Diarization,
    pub clock: FrameClock,
    pub tdoa_stream: Vec<TdoaVector>,
    pub segments: Vec<Segment>,
    pub verdicts: Vec<ReflectionVerdict>,
    pub enhanced: Vec<EnhancedSegment>,
    /// Aligned with `enhanced`.
    pub embeddings: Vec<Vec<f64>>,
    /// Cluster per entry of `enhanced`, after outlier reassignment.
    pub labels: Vec<usize>,
    /// Entries of `enhanced` that HDBSCAN left as outliers.
    pub outliers: Vec<usize>,
    pub cacgmm: Vec<CacgmmTrace>,
    pub warnings: Vec<String>,
}

impl PipelineOutput {
    fn empty(clock: FrameClock, tdoa_stream: Vec<TdoaVector>, segments: Vec<Segment>) -> Self {
        Self {
            diarization: Diarization::default(),
            clock,
            tdoa_stream,
            segments,
            verdicts: Vec::new(),
            enhanced: Vec::new(),
            embeddings: Vec::new(),
            labels: Vec::new(),
            outliers: Vec::new(),
            cacgmm: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep the final mask of every segment in the output.
    pub keep_masks: bool,
}

pub fn diarize(audio: &MultichannelAudio, config: &PipelineConfig, embedder: &dyn Embedder) -> Result<PipelineOutput> {
    diarize_with(audio, config, embedder, RunOptions::default())
}

pub fn diarize_with(
    audio: &MultichannelAudio,
    config: &PipelineConfig,
    embedder: &dyn Embedder,
    options: RunOptions,
) -> Result<PipelineOutput> {
    config.validate()?;
    if audio.num_channels() < 4 {
        return Err(Error::NeedFourChannels(audio.num_channels()));
    }
    let spec = stft(audio, &config.stft)?;
    let clock = spec.clock();
    let stream = estimate_tdoa_stream(&spec, &config.tdoa);
    let segments = detect_segments(&stream, &config.segment, &clock);
    let mut out = PipelineOutput::empty(clock, stream, segments);
    if out.segments.is_empty() {
        out.warnings.push("no segments detected".into());
        return Ok(out);
    }
    let segments = &out.segments;
    let mask_cfg = &config.mask;
    let fft = spec.fft_size();
    let ranges: Vec<_> = segments.iter().map(Segment::frames).collect();
    let noise = NoiseField::estimate(&spec, &ranges, mask_cfg.scm_context, mask_cfg.gap_threshold);
    let band = band_bins(mask_cfg.band, fft, spec.sample_rate());

    let all: Vec<&Segment> = segments.iter().collect();
    let verdicts: Vec<ReflectionVerdict> = segments
        .par_iter()
        .map(|s| {
            let mask = assign_bins(&spec, s.frames(), &prototypes_for(s, &all, fft), &noise);
            reflection_filter(&mask, s.id, band.clone(), mask_cfg.activity_threshold)
        })
        .collect();
    let kept: Vec<&Segment> = segments.iter().zip(&verdicts).filter(|(_, v)| v.kept).map(|(s, _)| s).collect();
    out.verdicts = verdicts;
    if kept.is_empty() {
        out.warnings.push("every segment was rejected as a reflection".into());
        return Ok(out);
    }

    let results: Vec<Result<(EnhancedSegment, Option<CacgmmTrace>)>> = kept
        .par_iter()
        .map(|s| {
            let mut mask = assign_bins(&spec, s.frames(), &prototypes_for(s, &kept, fft), &noise);
            let mut trace = None;
            if config.refinement == Refinement::Cacgmm {
                let fit = cacgmm_refine(&spec, &mask, mask_cfg.cacgmm_iterations);
                trace = Some(CacgmmTrace {
                    segment: s.id,
                    log_likelihood: fit.log_likelihood,
                    stopped_early: fit.stopped_early,
                });
                mask = fit.masks;
            }
            let bf = mvdr_beamform(&spec, &mask, s.id, mask_cfg.ref_mic)?;
            let waveform = istft(&bf.output, config.stft.window)?.into_channels().remove(0);
            Ok((
                EnhancedSegment {
                    segment: s.id,
                    start: s.onset_time(&clock),
                    end: s.offset_time(&clock),
                    waveform,
                    passthrough_bins: bf.passthrough_bins.len(),
                    mask: options.keep_masks.then_some(mask),
                },
                trace,
            ))
        })
        .collect();

    let mut enhanced = Vec::new();
    for r in results {
        match r {
            Ok((e, trace)) => {
                out.cacgmm.extend(trace);
                enhanced.push(e);
            }
            Err(Error::EmptyInput(what)) => out.warnings.push(format!("segment skipped: empty {what}")),
            Err(e) => return Err(e),
        }
    }

    let embedded: Vec<Result<Vec<f64>>> = enhanced
        .par_iter()
        .map(|e| {
            embedder.embed(&SegmentAudio {
                segment: e.segment,
                waveform: &e.waveform,
                sample_rate: spec.sample_rate(),
                start: e.start,
                end: e.end,
            })
        })
        .collect();
    let mut kept_enhanced = Vec::new();
    for (e, v) in enhanced.into_iter().zip(embedded) {
        match v {
            Ok(v) => {
                out.embeddings.push(v);
                kept_enhanced.push(e);
            }
            Err(Error::TooShort { actual, .. }) => out
                .warnings
                .push(format!("segment {} too short to embed ({actual:.2} s)", e.segment)),
            Err(err) => return Err(err),
        }
    }
    out.enhanced = kept_enhanced;
    if out.enhanced.is_empty() {
        return Ok(out);
    }

    let raw = cluster_embeddings(&out.embeddings, &config.clustering);
    out.outliers = raw.iter().enumerate().filter(|(_, l)| l.is_none()).map(|(i, _)| i).collect();
    out.labels = reassign_outliers(&raw, &out.embeddings);
    let extents: Vec<(f64, f64)> = out.enhanced.iter().map(|e| (e.start, e.end)).collect();
    out.diarization = merge_and_emit(&extents, &out.labels);
    Ok(out)
}

#[derive(Serialize)]
struct TdoaRecord<'a> {
    frame: usize,
    time: f64,
    delays: &'a [f64],
}

#[derive(Serialize)]
struct LabelRecord {
    segment: usize,
    cluster: usize,
    outlier: bool,
    passthrough_bins: usize,
}

/// Writes the intermediate artifacts of a run into `dir`: `tdoa.jsonl`,
/// `segments.jsonl`, `reflection.json`, `labels.json`, `cacgmm.json`,
/// `embeddings.bin` (sidecar layout), `masks/segment_<id>.bin` and
/// `enhanced/segment_<id>.wav`.
pub fn write_stage_dumps(out: &PipelineOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("masks"))?;
    std::fs::create_dir_all(dir.join("enhanced"))?;
    let mut tdoa = std::io::BufWriter::new(std::fs::File::create(dir.join("tdoa.jsonl"))?);
    for v in &out.tdoa_stream {
        serde_json::to_writer(
            &mut tdoa,
            &TdoaRecord {
                frame: v.frame,
                time: out.clock.frame_time(v.frame),
                delays: &v.delays,
            },
        )?;
        std::io::Write::write_all(&mut tdoa, b"\n")?;
    }
    write_segments_jsonl(
        std::io::BufWriter::new(std::fs::File::create(dir.join("segments.jsonl"))?),
        &out.segments,
        &out.clock,
    )?;
    std::fs::write(dir.join("reflection.json"), serde_json::to_string_pretty(&out.verdicts)?)?;
    std::fs::write(dir.join("cacgmm.json"), serde_json::to_string_pretty(&out.cacgmm)?)?;
    let labels: Vec<LabelRecord> = out
        .enhanced
        .iter()
        .enumerate()
        .map(|(i, e)| LabelRecord {
            segment: e.segment,
            cluster: out.labels[i],
            outlier: out.outliers.contains(&i),
            passthrough_bins: e.passthrough_bins,
        })
        .collect();
    std::fs::write(dir.join("labels.json"), serde_json::to_string_pretty(&labels)?)?;
    let sidecar = ExternalEmbeddings {
        vectors: out.enhanced.iter().map(|e| e.segment).zip(out.embeddings.iter().cloned()).collect(),
    };
    sidecar.write(std::io::BufWriter::new(std::fs::File::create(dir.join("embeddings.bin"))?))?;
    let sr = out.clock.sample_rate;
    for e in &out.enhanced {
        if let Some(mask) = &e.mask {
            mask.write_raw(std::io::BufWriter::new(std::fs::File::create(
                dir.join("masks").join(format!("segment_{}.bin", e.segment)),
            )?))?;
        }
        MultichannelAudio::new(vec![e.waveform.clone()], sr)?.write_wav(
            dir.join("enhanced").join(format!("segment_{}.wav", e.segment)),
            SampleFormat::Float32,
        )?;
    }
    Ok(())
}
