//! Speaker-attributed time intervals and RTTM serialization.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiarizationEntry {
    pub speaker: String,
    pub start: f64,
    pub end: f64,
}

impl DiarizationEntry {
    pub fn new(speaker: impl Into<String>, start: f64, end: f64) -> Self {
        Self {
            speaker: speaker.into(),
            start,
            end,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Who spoke when. Entries of different speakers may overlap.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diarization {
    pub entries: Vec<DiarizationEntry>,
}

impl Diarization {
    pub fn new(entries: Vec<DiarizationEntry>) -> Result<Self> {
        for e in &entries {
            if !(e.start.is_finite() && e.end.is_finite()) || e.start >= e.end {
                return Err(Error::format(
                    "diarization",
                    format!("entry {} [{}, {}] must have start < end", e.speaker, e.start, e.end),
                ));
            }
        }
        Ok(Self { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct speaker labels, sorted.
    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.entries.iter().map(|e| e.speaker.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn total_speech(&self) -> f64 {
        self.entries.iter().map(|e| e.duration()).sum()
    }

    /// Unions overlapping or touching intervals of the same speaker and sorts
    /// by start time.
    pub fn merged(&self) -> Diarization {
        let mut by_speaker: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for e in &self.entries {
            by_speaker.entry(&e.speaker).or_default().push((e.start, e.end));
        }
        let mut entries = Vec::new();
        for (speaker, mut iv) in by_speaker {
            for (s, e) in union_intervals(&mut iv) {
                entries.push(DiarizationEntry::new(speaker, s, e));
            }
        }
        sort_entries(&mut entries);
        Diarization { entries }
    }

    pub fn to_rttm(&self, file_id: &str) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(
                out,
                "SPEAKER {file_id} 1 {:.2} {:.2} <NA> <NA> {} <NA> <NA>",
                e.start,
                e.duration(),
                e.speaker
            );
        }
        out
    }

    /// Parses the SPEAKER records of an RTTM document; other record types
    /// and comment lines are skipped.
    pub fn from_rttm(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with(';') || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] != "SPEAKER" {
                continue;
            }
            if fields.len() < 8 {
                return Err(Error::format(
                    "RTTM",
                    format!("line {}: expected at least 8 fields", lineno + 1),
                ));
            }
            let num = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::format("RTTM", format!("line {}: bad number {s:?}", lineno + 1))
                })
            };
            let start = num(fields[3])?;
            let dur = num(fields[4])?;
            if dur <= 0.0 {
                continue;
            }
            entries.push(DiarizationEntry::new(fields[7], start, start + dur));
        }
        Diarization::new(entries)
    }

    pub fn read_rttm(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_rttm(&std::fs::read_to_string(path)?)
    }

    pub fn write_rttm(&self, path: impl AsRef<Path>, file_id: &str) -> Result<()> {
        std::fs::write(path, self.to_rttm(file_id))?;
        Ok(())
    }
}

pub(crate) fn sort_entries(entries: &mut [DiarizationEntry]) {
    entries.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.end.total_cmp(&b.end))
            .then_with(|| a.speaker.cmp(&b.speaker))
    });
}

/// Sorted union of intervals; touching intervals are joined.
pub fn union_intervals(intervals: &mut [(f64, f64)]) -> Vec<(f64, f64)> {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for &(s, e) in intervals.iter() {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}
