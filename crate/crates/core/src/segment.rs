//! Temporally constrained leader-follower clustering of per-frame TDOA
//! vectors into speech segments.
//!
//! Segments are local: they carry onset/offset frames and a median TDOA
//! vector but no speaker identity. Different segments may overlap in time.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::stft::FrameClock;
use crate::tdoa::{euclidean, TdoaVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentParams {
    /// Join radius (Euclidean, samples) around a cluster leader.
    pub max_distance: f64,
    /// Largest allowed pause between consecutive members, seconds.
    pub max_gap: f64,
    /// Closed clusters spanning less than this are dropped, seconds.
    pub min_duration: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            max_distance: 1.0,
            max_gap: 1.0,
            min_duration: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: usize,
    pub onset_frame: usize,
    pub offset_frame: usize,
    /// Component-wise median of the member vectors; `frame` is the onset.
    pub median_tdoa: TdoaVector,
    pub members: Vec<TdoaVector>,
}

impl Segment {
    pub fn frames(&self) -> std::ops::Range<usize> {
        self.onset_frame..self.offset_frame + 1
    }

    pub fn num_frames(&self) -> usize {
        self.offset_frame - self.onset_frame + 1
    }

    pub fn overlaps(&self, other: &Segment) -> bool {
        self.onset_frame <= other.offset_frame && other.onset_frame <= self.offset_frame
    }

    pub fn onset_time(&self, clock: &FrameClock) -> f64 {
        clock.frame_time(self.onset_frame)
    }

    pub fn offset_time(&self, clock: &FrameClock) -> f64 {
        clock.frame_time(self.offset_frame)
    }
}

pub(crate) fn median_of(values: &mut [f64]) -> f64 {
    let n = values.len();
    debug_assert!(n > 0);
    let mid = n / 2;
    let (_, &mut upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Component-wise median of a non-empty set of equally long vectors.
pub fn componentwise_median<'a>(vectors: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    let vectors: Vec<&[f64]> = vectors.into_iter().collect();
    let dims = vectors.first().map_or(0, |v| v.len());
    let mut column = Vec::with_capacity(vectors.len());
    (0..dims)
        .map(|d| {
            column.clear();
            column.extend(vectors.iter().map(|v| v[d]));
            median_of(&mut column)
        })
        .collect()
}

struct Cluster {
    members: Vec<TdoaVector>,
    leader: Vec<f64>,
    last_frame: usize,
    used_in_frame: Option<usize>,
}

impl Cluster {
    fn new(v: TdoaVector) -> Self {
        Self {
            leader: v.delays.clone(),
            last_frame: v.frame,
            used_in_frame: Some(v.frame),
            members: vec![v],
        }
    }

    fn push(&mut self, v: TdoaVector) {
        self.last_frame = v.frame;
        self.used_in_frame = Some(v.frame);
        self.members.push(v);
        self.leader = componentwise_median(self.members.iter().map(|m| m.delays.as_slice()));
    }
}

/// Online single pass over `stream` (sorted by frame). Each vector joins the
/// open cluster with the nearest leader if it lies within `max_distance` and
/// the cluster's last member is at most `max_gap` old; otherwise it opens a
/// new cluster. A cluster takes at most one vector per frame and its leader
/// is the running median of its members. Ties go to the older cluster.
pub fn detect_segments(stream: &[TdoaVector], params: &SegmentParams, clock: &FrameClock) -> Vec<Segment> {
    let period = clock.period();
    let gap_ok = |last: usize, t: usize| (t - last) as f64 * period <= params.max_gap + 1e-9;
    let mut open: Vec<(usize, Cluster)> = Vec::new();
    let mut closed: Vec<(usize, Cluster)> = Vec::new();
    let mut next_index = 0usize;

    for v in stream {
        let t = v.frame;
        let (still_open, expired): (Vec<_>, Vec<_>) =
            open.drain(..).partition(|(_, c)| gap_ok(c.last_frame, t));
        open = still_open;
        closed.extend(expired);

        let best = open
            .iter()
            .enumerate()
            .filter(|(_, (_, c))| c.used_in_frame != Some(t))
            .map(|(k, (_, c))| (k, euclidean(&c.leader, &v.delays)))
            .filter(|&(_, d)| d <= params.max_distance)
            // open is ordered by creation, so min_by keeps the oldest on ties
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((k, _)) => open[k].1.push(v.clone()),
            None => {
                open.push((next_index, Cluster::new(v.clone())));
                next_index += 1;
            }
        }
    }
    closed.extend(open);

    let mut segments: Vec<(usize, Segment)> = closed
        .into_iter()
        .filter_map(|(index, c)| {
            let onset = c.members.first()?.frame;
            let offset = c.last_frame;
            if ((offset - onset) as f64) * period + 1e-9 < params.min_duration {
                return None;
            }
            let median = componentwise_median(c.members.iter().map(|m| m.delays.as_slice()));
            Some((
                index,
                Segment {
                    id: 0,
                    onset_frame: onset,
                    offset_frame: offset,
                    median_tdoa: TdoaVector::new(onset, median),
                    members: c.members,
                },
            ))
        })
        .collect();
    segments.sort_by_key(|(index, s)| (s.onset_frame, *index));
    segments
        .into_iter()
        .enumerate()
        .map(|(id, (_, mut s))| {
            s.id = id;
            s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: usize,
    pub onset: f64,
    pub offset: f64,
    pub median_tdoa: Vec<f64>,
}

/// Writes one JSON object per segment and line.
pub fn write_segments_jsonl(mut out: impl Write, segments: &[Segment], clock: &FrameClock) -> Result<()> {
    for s in segments {
        let rec = SegmentRecord {
            id: s.id,
            onset: s.onset_time(clock),
            offset: s.offset_time(clock),
            median_tdoa: s.median_tdoa.delays.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        writeln!(out)?;
    }
    Ok(())
}
