//! Every tunable of a run, loadable from TOML and overridable key by key.
//!
//! ```toml
//! [association]
//! threshold = 0.6
//! gating_radius = 30.0   # inf disables gating
//!
//! [lane]
//! radius = 10.0
//! ```
//!
//! Overrides use dotted keys with TOML values: `lane.radius=8`,
//! `association.weights.caption=0.2`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption::JaccardMerger;
use crate::hierarchy::HierarchyConfig;
use crate::ingest::IngestConfig;
use crate::lane_graph::DisfluencyConfig;
use crate::object_map::{AssociationConfig, SimilarityWeights};
use crate::projection::ProjectionConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    File { path: String, reason: String },
    #[error("bad override {0:?}: expected key=value")]
    Override(String),
    #[error("unknown or mistyped setting: {0}")]
    Parse(String),
    #[error("invalid setting: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub orthonormal_tol: f64,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection { orthonormal_tol: IngestConfig::default().orthonormal_tol }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationSection {
    pub weights: SimilarityWeights,
    pub threshold: f64,
    /// Meters; `inf` scores every object.
    pub gating_radius: f64,
    /// Token Jaccard below which merged captions keep both texts.
    pub caption_min_jaccard: f64,
}

impl Default for AssociationSection {
    fn default() -> Self {
        let a = AssociationConfig::default();
        AssociationSection {
            weights: a.weights,
            threshold: a.threshold,
            gating_radius: a.gating_radius.unwrap_or(f64::INFINITY),
            caption_min_jaccard: JaccardMerger::default().min_jaccard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub ingest: IngestSection,
    pub projection: ProjectionConfig,
    pub association: AssociationSection,
    pub lane: DisfluencyConfig,
    pub hierarchy: HierarchyConfig,
}

impl RunConfig {
    pub fn ingest(&self) -> IngestConfig {
        IngestConfig { orthonormal_tol: self.ingest.orthonormal_tol }
    }

    pub fn association(&self) -> AssociationConfig {
        let r = self.association.gating_radius;
        AssociationConfig {
            weights: self.association.weights,
            threshold: self.association.threshold,
            gating_radius: r.is_finite().then_some(r),
        }
    }

    pub fn merger(&self) -> JaccardMerger {
        JaccardMerger { min_jaccard: self.association.caption_min_jaccard }
    }

    /// Defaults, then the file (if any), then each `key=value` override.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::File { path: p.display().to_string(), reason: e.to_string() })?;
                text.parse::<toml::Table>()
                    .map_err(|e| ConfigError::File { path: p.display().to_string(), reason: e.to_string() })?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        if !(self.ingest.orthonormal_tol > 0.0) {
            return Err(invalid("ingest.orthonormal_tol must be positive".into()));
        }
        let p = &self.projection;
        if !(p.denoise_eps > 0.0) || p.denoise_min_pts == 0 {
            return Err(invalid("projection.denoise_eps and denoise_min_pts must be positive".into()));
        }
        if !(self.association.gating_radius > 0.0) {
            return Err(invalid("association.gating_radius must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.association.caption_min_jaccard) {
            return Err(invalid("association.caption_min_jaccard must lie in [0, 1]".into()));
        }
        self.association().validate().map_err(|e| invalid(e.to_string()))?;
        self.lane.validate().map_err(|e| invalid(e.to_string()))?;
        self.hierarchy.validate().map_err(invalid)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable")
    }
}

fn apply_override(table: &mut toml::Table, o: &str) -> Result<(), ConfigError> {
    let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.into()))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(o.into()));
    }
    let raw = raw.trim();
    // Parse the value as a TOML right-hand side; bare words become strings.
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.into()));
    let (last, path) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError::Override(o.into()))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        assert!(text.contains("gating_radius = 30.0"));
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn file_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[lane]\nradius = 8.0\n[association]\ngating_radius = inf\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &["lane.threshold=0.25".into(), "hierarchy.voxel = 0.5".into()]).unwrap();
        assert_eq!(cfg.lane.radius, 8.0);
        assert_eq!(cfg.lane.threshold, 0.25);
        assert_eq!(cfg.hierarchy.voxel, 0.5);
        assert_eq!(cfg.association().gating_radius, None);
        assert_eq!(cfg.lane.cluster_min_pts, DisfluencyConfig::default().cluster_min_pts);
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(matches!(RunConfig::load(None, &["lane.nope=1".into()]), Err(ConfigError::Parse(_))));
        assert!(matches!(RunConfig::load(None, &["lane.radius".into()]), Err(ConfigError::Override(_))));
        assert!(matches!(RunConfig::load(None, &["association.weights.caption=0.5".into()]), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::load(None, &["hierarchy.voxel=-1".into()]), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::load(None, &["lane.radius=fast".into()]), Err(ConfigError::Parse(_))));
    }
}
