//! TOML configuration covering every tunable of the pipeline. Missing
//! sections and keys take their defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{PadParams, SplitTargets, StatsConfig, TileParams, DEFAULT_RFS_THRESHOLD, DEFAULT_SHARDS};
use crate::geometry::MeasureConfig;
use crate::ingest::{ClassMap, DEFAULT_MIN_SEPARATION_M};
use crate::metrics::DEFAULT_GOLD_THRESHOLD;
use crate::model::{ClassSpec, ClassTable, ClassTableError, ObjectClass};
use crate::projection::ProjectionConfig;
use crate::refine::RefineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub min_separation_m: f64,
    /// Source tag for objects whose properties carry none.
    pub default_source: String,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { min_separation_m: DEFAULT_MIN_SEPARATION_M, default_source: "geo".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub threshold: f64,
    pub curriculum_shards: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { threshold: DEFAULT_RFS_THRESHOLD, curriculum_shards: DEFAULT_SHARDS }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformConfig {
    pub pad: PadParams,
    pub tiles: TileParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoldConfig {
    /// Minimum median IoU for a batch to be accepted.
    pub threshold: f64,
    /// Minimum median IoU on the qualification image.
    pub qualification_threshold: f64,
}

impl Default for GoldConfig {
    fn default() -> Self {
        GoldConfig { threshold: DEFAULT_GOLD_THRESHOLD, qualification_threshold: DEFAULT_GOLD_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub batch_size: usize,
    pub gold_per_batch: usize,
    /// Order in which classes are visited in the add/verify and final tasks.
    pub class_order: Vec<ObjectClass>,
    /// Take a box-set snapshot every this many events.
    pub snapshot_every: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            batch_size: 5,
            gold_per_batch: 1,
            class_order: ObjectClass::ALL.to_vec(),
            snapshot_every: 50,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub ingest: IngestConfig,
    /// Extra source-tag → class rules, on top of the class names.
    pub class_map: BTreeMap<String, ObjectClass>,
    /// Replacement class table; must list all 22 classes.
    pub classes: Option<Vec<ClassSpec>>,
    pub geometry: MeasureConfig,
    pub projection: ProjectionConfig,
    pub refine: RefineConfig,
    pub stats: StatsConfig,
    pub split: SplitTargets,
    pub sampling: SamplingConfig,
    pub transform: TransformConfig,
    pub gold: GoldConfig,
    pub service: ServiceConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("toml: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("class table: {0}")]
    Classes(#[from] ClassTableError),
    #[error("{0}")]
    Value(String),
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn class_table(&self) -> Result<ClassTable, ClassTableError> {
        match &self.classes {
            Some(specs) => ClassTable::new(specs.clone()),
            None => Ok(ClassTable::default()),
        }
    }

    pub fn class_map(&self) -> ClassMap {
        ClassMap::with_rules(self.class_map.clone())
    }

    fn check(&self) -> Result<(), ConfigError> {
        self.class_table()?;
        let bad = |what: &str, v: f64| ConfigError::Value(format!("{what} out of range: {v}"));
        let unit = |what: &str, v: f64| if (0.0..=1.0).contains(&v) { Ok(()) } else { Err(bad(what, v)) };
        let positive = |what: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(bad(what, v)) };
        unit("refine.tree_overlap", self.refine.tree_overlap)?;
        unit("refine.general_overlap", self.refine.general_overlap)?;
        unit("refine.merge_min_iou", self.refine.merge_min_iou)?;
        unit("gold.threshold", self.gold.threshold)?;
        unit("gold.qualification_threshold", self.gold.qualification_threshold)?;
        unit("projection.forward_x_fraction", self.projection.forward_x_fraction)?;
        positive("geometry.query_radius_m", self.geometry.query_radius_m)?;
        positive("geometry.fallback_height_m", self.geometry.fallback_height_m)?;
        positive("sampling.threshold", self.sampling.threshold)?;
        if self.sampling.threshold > 1.0 {
            return Err(bad("sampling.threshold", self.sampling.threshold));
        }
        if self.service.batch_size == 0 || self.service.gold_per_batch > self.service.batch_size {
            return Err(ConfigError::Value("service.gold_per_batch must not exceed a non-zero batch_size".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.refine.tree_overlap, 0.3);
        assert_eq!(c.service.batch_size, 5);
        assert_eq!(c.class_table().unwrap(), ClassTable::default());
    }

    #[test]
    fn partial_sections_override() {
        let c = Config::parse(
            r#"
            [refine]
            general_overlap = 0.7
            [projection]
            forward_x_fraction = 0.25
            [class_map]
            "amenity=waste_basket" = "trash_container"
            "#,
        )
        .unwrap();
        assert_eq!(c.refine.general_overlap, 0.7);
        assert_eq!(c.refine.tree_overlap, 0.3);
        assert_eq!(c.projection.forward_x_fraction, 0.25);
        assert_eq!(c.class_map().resolve("amenity=waste_basket"), Some(ObjectClass::TrashContainer));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = Config::default();
        c.gold.threshold = 0.55;
        c.classes = Some(ClassTable::default().specs().to_vec());
        assert_eq!(Config::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(Config::parse("[refine]\ntree_overlap = 1.5"), Err(ConfigError::Value(_))));
        assert!(matches!(Config::parse("[service]\nbatch_size = 0"), Err(ConfigError::Value(_))));
        assert!(matches!(Config::parse("[refine]\ntree_overlap = \"x\""), Err(ConfigError::Parse(_))));
        let one =
            "[[classes]]\nclass = \"tree\"\nwidth_estimate = 4.0\nnon_blocking = true\nheight_from_elevation = true\n";
        assert!(matches!(Config::parse(one), Err(ConfigError::Classes(_))));
    }
}
