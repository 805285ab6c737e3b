//! Diarization error rate with an optimal one-to-one speaker mapping.
//!
//! Boundaries are rounded to a 10 ms grid before scoring. Within each
//! elementary interval with `r` reference and `h` hypothesis speakers, of
//! which `c` are correctly mapped, the error is `max(r - h, 0)` missed,
//! `max(h - r, 0)` false-alarm and `min(r, h) - c` confused speaker-time.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diarization::Diarization;
use crate::error::{Error, Result};

const TICKS_PER_SECOND: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerReport {
    pub der: f64,
    pub miss: f64,
    pub false_alarm: f64,
    pub speaker_confusion: f64,
    /// DER over regions with at least two reference speakers, if any.
    pub overlap_der: Option<f64>,
    /// Scored reference speaker-time, seconds.
    pub total_speech: f64,
    /// Hypothesis label to reference label.
    pub mapping: BTreeMap<String, String>,
}

impl fmt::Display for DerReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DER          {:7.2} %", 100.0 * self.der)?;
        writeln!(f, "  miss       {:7.2} %", 100.0 * self.miss)?;
        writeln!(f, "  false alarm{:7.2} %", 100.0 * self.false_alarm)?;
        writeln!(f, "  confusion  {:7.2} %", 100.0 * self.speaker_confusion)?;
        match self.overlap_der {
            Some(o) => writeln!(f, "DER overlap  {:7.2} %", 100.0 * o)?,
            None => writeln!(f, "DER overlap      n/a")?,
        }
        writeln!(f, "speech       {:7.2} s", self.total_speech)?;
        for (h, r) in &self.mapping {
            writeln!(f, "  {h} -> {r}")?;
        }
        Ok(())
    }
}

fn tick(t: f64) -> i64 {
    (t * TICKS_PER_SECOND).round() as i64
}

/// Per-speaker tick intervals, unioned.
fn quantize(d: &Diarization) -> (Vec<String>, Vec<Vec<(i64, i64)>>) {
    let speakers = d.speakers();
    let mut iv = vec![Vec::new(); speakers.len()];
    for e in &d.entries {
        let k = speakers.binary_search(&e.speaker).unwrap();
        let (s, t) = (tick(e.start), tick(e.end));
        if t > s {
            iv[k].push((s, t));
        }
    }
    for v in iv.iter_mut() {
        v.sort();
        let mut merged: Vec<(i64, i64)> = Vec::new();
        for &(s, e) in v.iter() {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        *v = merged;
    }
    (speakers, iv)
}

fn active(iv: &[(i64, i64)], s: i64, e: i64) -> bool {
    iv.iter().any(|&(a, b)| a <= s && e <= b)
}

/// Maximum-weight assignment of rows to columns; `result[r]` is the column
/// given to row `r`, `None` when there are more rows than columns.
pub fn hungarian_max(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let n = rows.max(cols);
    let max = weights.iter().flatten().copied().fold(0.0, f64::max);
    // square cost matrix, padded with zero-weight dummies
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            max - weights[i][j]
        } else {
            max
        }
    };
    // shortest augmenting path (Jonker-Volgenant style potentials), 1-based
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

/// Scores `hyp` against `reference`. With `collar > 0`, a window of that
/// many seconds on either side of every reference boundary is not scored.
pub fn compute_der(reference: &Diarization, hyp: &Diarization, collar: f64) -> Result<DerReport> {
    let (ref_names, ref_iv) = quantize(reference);
    let (hyp_names, hyp_iv) = quantize(hyp);
    if ref_iv.iter().all(Vec::is_empty) {
        return Err(Error::DerUndefined);
    }
    let c = tick(collar.max(0.0));
    let mut excluded: Vec<(i64, i64)> = Vec::new();
    if c > 0 {
        for &(s, e) in ref_iv.iter().flatten() {
            excluded.push((s - c, s + c));
            excluded.push((e - c, e + c));
        }
    }

    let mut bounds: Vec<i64> = ref_iv.iter().chain(&hyp_iv).flatten().flat_map(|&(s, e)| [s, e]).collect();
    bounds.extend(excluded.iter().flat_map(|&(s, e)| [s, e]));
    bounds.sort_unstable();
    bounds.dedup();

    struct Piece {
        len: i64,
        refs: Vec<usize>,
        hyps: Vec<usize>,
    }
    let mut pieces = Vec::new();
    for w in bounds.windows(2) {
        let (s, e) = (w[0], w[1]);
        if excluded.iter().any(|&(a, b)| a <= s && e <= b) {
            continue;
        }
        let refs: Vec<usize> = (0..ref_iv.len()).filter(|&k| active(&ref_iv[k], s, e)).collect();
        let hyps: Vec<usize> = (0..hyp_iv.len()).filter(|&k| active(&hyp_iv[k], s, e)).collect();
        if !refs.is_empty() || !hyps.is_empty() {
            pieces.push(Piece { len: e - s, refs, hyps });
        }
    }

    let mut overlap = vec![vec![0.0; ref_names.len()]; hyp_names.len()];
    for p in &pieces {
        for &h in &p.hyps {
            for &r in &p.refs {
                overlap[h][r] += p.len as f64;
            }
        }
    }
    let assignment = hungarian_max(&overlap);
    let map: Vec<Option<usize>> = assignment
        .iter()
        .enumerate()
        .map(|(h, r)| r.filter(|&r| overlap[h][r] > 0.0))
        .collect();

    let score = |only_overlap: bool| -> (f64, f64, f64, f64) {
        let (mut total, mut miss, mut fa, mut conf) = (0i64, 0i64, 0i64, 0i64);
        for p in &pieces {
            let (r, h) = (p.refs.len() as i64, p.hyps.len() as i64);
            if only_overlap && r < 2 {
                continue;
            }
            let correct = p
                .hyps
                .iter()
                .filter(|&&k| map[k].is_some_and(|m| p.refs.contains(&m)))
                .count() as i64;
            total += r * p.len;
            miss += (r - h).max(0) * p.len;
            fa += (h - r).max(0) * p.len;
            conf += (r.min(h) - correct) * p.len;
        }
        (total as f64, miss as f64, fa as f64, conf as f64)
    };

    let (total, miss, fa, conf) = score(false);
    if total == 0.0 {
        return Err(Error::DerUndefined);
    }
    let (ov_total, ov_miss, ov_fa, ov_conf) = score(true);
    let mapping = map
        .iter()
        .enumerate()
        .filter_map(|(h, r)| r.map(|r| (hyp_names[h].clone(), ref_names[r].clone())))
        .collect();
    Ok(DerReport {
        der: (miss + fa + conf) / total,
        miss: miss / total,
        false_alarm: fa / total,
        speaker_confusion: conf / total,
        overlap_der: (ov_total > 0.0).then(|| (ov_miss + ov_fa + ov_conf) / ov_total),
        total_speech: total / TICKS_PER_SECOND,
        mapping,
    })
}
