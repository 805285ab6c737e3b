//! Spatial-only reference diarizer: segments are grouped purely by their
//! median TDOA vectors, so one speaker per position is assumed.

use crate::clustering::merge_and_emit;
use crate::diarization::Diarization;
use crate::segment::Segment;
use crate::stft::FrameClock;
use crate::tdoa::euclidean;

/// Single-linkage grouping of segment median TDOAs: segments closer than
/// `threshold` samples (Euclidean) end up in the same group.
pub fn single_linkage_labels(segments: &[Segment], threshold: f64) -> Vec<usize> {
    let n = segments.len();
    let mut label: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if euclidean(&segments[i].median_tdoa.delays, &segments[j].median_tdoa.delays) <= threshold {
                let (a, b) = (label[i], label[j]);
                if a != b {
                    let keep = a.min(b);
                    label.iter_mut().filter(|l| **l == a || **l == b).for_each(|l| *l = keep);
                }
            }
        }
    }
    label
}

pub fn spatial_only(segments: &[Segment], clock: &FrameClock, threshold: f64) -> Diarization {
    let labels = single_linkage_labels(segments, threshold);
    let extents: Vec<(f64, f64)> = segments
        .iter()
        .map(|s| (s.onset_time(clock), s.offset_time(clock)))
        .collect();
    merge_and_emit(&extents, &labels)
}
