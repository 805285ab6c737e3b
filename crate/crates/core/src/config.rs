//! Pipeline configuration with named presets.
//!
//! A configuration document names a preset and may override any field; the
//! preset is expanded first and the overrides are merged on top. The two
//! presets differ only in the closed-loop threshold and the segmentation
//! join radius.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::hdbscan::HdbscanParams;
use crate::segment::SegmentParams;
use crate::spatial::MaskParams;
use crate::stft::StftParams;
use crate::tdoa::TdoaParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Single compact array.
    #[default]
    Compact,
    /// Microphones spread over several devices.
    Distributed,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    /// Re-assign bins among the segments that survive the reflection filter.
    #[default]
    Reassign,
    /// Additionally fit a cACGMM initialised with the re-assigned masks.
    Cacgmm,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EmbedderChoice {
    #[default]
    Default,
    /// Ground-truth identities from a reference RTTM.
    Oracle { reference: PathBuf },
    /// Sidecar file of precomputed embeddings.
    External { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub preset: Preset,
    pub stft: StftParams,
    pub tdoa: TdoaParams,
    pub segment: SegmentParams,
    pub mask: MaskParams,
    pub refinement: Refinement,
    pub embedder: EmbedderChoice,
    pub clustering: HdbscanParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::preset(Preset::Compact)
    }
}

impl PipelineConfig {
    pub fn preset(preset: Preset) -> Self {
        let (loop_threshold, max_distance) = match preset {
            Preset::Compact | Preset::Custom => (1.0, 1.0),
            Preset::Distributed => (2.0, 0.75),
        };
        Self {
            preset,
            stft: StftParams::default(),
            tdoa: TdoaParams {
                loop_threshold,
                ..TdoaParams::default()
            },
            segment: SegmentParams {
                max_distance,
                ..SegmentParams::default()
            },
            mask: MaskParams::default(),
            refinement: Refinement::default(),
            embedder: EmbedderChoice::default(),
            clustering: HdbscanParams::default(),
        }
    }

    /// Parses a configuration document. Fields absent from the document
    /// take the values of its preset. A named preset whose defining values
    /// are overridden becomes `custom`.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text)?;
        if !doc.is_object() {
            return Err(Error::InvalidConfig("configuration must be a JSON object".into()));
        }
        let preset: Preset = match doc.get("preset") {
            Some(p) => serde_json::from_value(p.clone())?,
            None => Preset::Compact,
        };
        let mut base = serde_json::to_value(Self::preset(preset))?;
        doc.as_object_mut().unwrap().remove("preset");
        merge(&mut base, doc);
        let mut cfg: Self = serde_json::from_value(base)?;
        if preset != Preset::Custom {
            let reference = Self::preset(preset);
            if cfg.tdoa.loop_threshold != reference.tdoa.loop_threshold
                || cfg.segment.max_distance != reference.segment.max_distance
            {
                cfg.preset = Preset::Custom;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read_json(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.tdoa.peaks_per_pair == 0 || self.tdoa.max_vectors == 0 {
            return bad("peaks_per_pair and max_vectors must be at least 1");
        }
        if !(self.tdoa.loop_threshold > 0.0 && self.segment.max_distance > 0.0) {
            return bad("loop_threshold and max_distance must be positive");
        }
        if self.clustering.min_cluster_size < 2 {
            return bad("min_cluster_size must be at least 2");
        }
        if self.mask.band.0 >= self.mask.band.1 {
            return bad("mask band must satisfy lo < hi");
        }
        Ok(())
    }

    /// Dotted paths of every field that differs, ignoring the preset name.
    pub fn diff(&self, other: &Self) -> Vec<String> {
        let mut a = serde_json::to_value(self).unwrap();
        let mut b = serde_json::to_value(other).unwrap();
        a.as_object_mut().unwrap().remove("preset");
        b.as_object_mut().unwrap().remove("preset");
        let mut out = Vec::new();
        diff_values("", &a, &b, &mut out);
        out
    }
}

fn merge(base: &mut Value, overrides: Value) {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() && !is_tagged(&v) => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Internally tagged enums are replaced wholesale rather than merged.
fn is_tagged(v: &Value) -> bool {
    v.get("type").is_some()
}

fn diff_values(path: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match (x.get(k), y.get(k)) {
                    (Some(u), Some(v)) => diff_values(&p, u, v, out),
                    _ => out.push(p),
                }
            }
        }
        _ if a != b => out.push(path.to_string()),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_the_published_values() {
        let c = PipelineConfig::preset(Preset::Compact);
        assert_eq!((c.tdoa.loop_threshold, c.segment.max_distance), (1.0, 1.0));
        let d = PipelineConfig::preset(Preset::Distributed);
        assert_eq!((d.tdoa.loop_threshold, d.segment.max_distance), (2.0, 0.75));
    }

    #[test]
    fn presets_differ_in_exactly_two_fields() {
        let c = PipelineConfig::preset(Preset::Compact);
        let d = PipelineConfig::preset(Preset::Distributed);
        assert_eq!(c.diff(&d), vec!["segment.max_distance", "tdoa.loop_threshold"]);
    }

    #[test]
    fn preset_expansion_and_overrides() {
        let cfg = PipelineConfig::from_json(r#"{"preset": "distributed"}"#).unwrap();
        assert_eq!(cfg, PipelineConfig::preset(Preset::Distributed));
        let cfg = PipelineConfig::from_json(r#"{"preset": "distributed", "mask": {"gap_threshold": 4.0}}"#).unwrap();
        assert_eq!(cfg.preset, Preset::Distributed);
        assert_eq!(cfg.mask.gap_threshold, 4.0);
        assert_eq!(cfg.tdoa.loop_threshold, 2.0);
        let cfg = PipelineConfig::from_json(r#"{"preset": "compact", "tdoa": {"loop_threshold": 1.5}}"#).unwrap();
        assert_eq!(cfg.preset, Preset::Custom);
        let cfg = PipelineConfig::from_json(r#"{"embedder": {"type": "external", "path": "e.bin"}}"#).unwrap();
        assert_eq!(cfg.embedder, EmbedderChoice::External { path: "e.bin".into() });
    }

    #[test]
    fn roundtrip_is_idempotent() {
        for p in [Preset::Compact, Preset::Distributed, Preset::Custom] {
            let mut cfg = PipelineConfig::preset(p);
            cfg.refinement = Refinement::Cacgmm;
            let once = cfg.to_json();
            let back = PipelineConfig::from_json(&once).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_json(), once);
        }
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(PipelineConfig::from_json("[]").is_err());
        assert!(PipelineConfig::from_json(r#"{"preset": "huge"}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"stft": {"fft_size": 1000}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"clustering": {"min_cluster_size": 1}}"#).is_err());
    }
}
