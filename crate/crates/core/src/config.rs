//! Run configuration: one TOML file plus `key=value` overrides.
//!
//! ```toml
//! seed = 0
//!
//! [data]
//! split_fraction = 0.8
//! expected_shape = [240, 240, 155]   # [] accepts any shape
//!
//! [generator]
//! num_rrdb = 23
//!
//! [discriminator]
//! base_channels = 64
//!
//! [train]
//! iterations = 300000
//!
//! [perceptual]
//! weights = "vgg19.safetensors"
//! ```
//!
//! Every section is optional and falls back to defaults. Unknown keys are
//! rejected. The single top-level `seed` drives the dataset split, model
//! initialisation and batch sampling.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_pipeline::{BuildOptions, Grade, BRATS_SHAPE};
use crate::losses::resolve_vgg19_path;
use crate::sr_models::{DiscriminatorConfig, GeneratorConfig};
use crate::trainer::TrainConfig;

pub const SNAPSHOT_FILE: &str = "config.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("bad override '{0}': expected key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub split_fraction: f64,
    /// Required `[x, y, z]` volume grid; empty accepts any size that fits.
    pub expected_shape: Vec<usize>,
    /// Grade applied to every volume instead of reading directory names.
    pub grade: Option<Grade>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { split_fraction: 0.8, expected_shape: BRATS_SHAPE.to_vec(), grade: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptualConfig {
    /// VGG19 safetensors file. Falls back to `MRSR_VGG19_WEIGHTS`.
    pub weights: Option<PathBuf>,
}

impl PerceptualConfig {
    pub fn resolve(&self) -> Option<PathBuf> {
        resolve_vgg19_path(self.weights.as_deref())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub train: TrainConfig,
    pub perceptual: PerceptualConfig,
}

impl RunConfig {
    /// Parse TOML text, apply overrides (`section.key=value`, value in TOML
    /// syntax or a bare string) and validate.
    pub fn from_toml(text: &str, overrides: &[String], seed: Option<u64>) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        if doc.get("train").and_then(|t| t.get("seed")).is_some() {
            return Err(ConfigError::Invalid("train.seed is not a key; use the top-level seed".into()));
        }
        let mut cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => {
                std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?
            }
            None => String::new(),
        };
        Self::from_toml(&text, overrides, seed)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invalid(e);
        if !(self.data.split_fraction > 0.0 && self.data.split_fraction < 1.0) {
            return Err(inv(format!("data.split_fraction {} outside (0, 1)", self.data.split_fraction)));
        }
        if !(self.data.expected_shape.is_empty() || self.data.expected_shape.len() == 3) {
            return Err(inv("data.expected_shape must have 3 entries or be empty".into()));
        }
        self.generator.validate().map_err(|e| inv(e.to_string()))?;
        self.discriminator.validate().map_err(|e| inv(e.to_string()))?;
        self.train.validate().map_err(|e| inv(e.to_string()))
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            seed: self.seed,
            split_fraction: self.data.split_fraction,
            grade_override: self.data.grade,
            expected_shape: self.data.expected_shape.as_slice().try_into().ok(),
        }
    }

    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("config serialises");
        // `train.seed` mirrors the top-level seed and is not an input key.
        if let Some(toml::Value::Table(t)) = table.get_mut("train") {
            t.remove("seed");
        }
        toml::to_string_pretty(&table).expect("config serialises")
    }

    /// Write the effective configuration into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf, ConfigError> {
        let path = dir.join(SNAPSHOT_FILE);
        std::fs::create_dir_all(dir).map_err(|source| ConfigError::Io { path: dir.to_path_buf(), source })?;
        std::fs::write(&path, self.to_toml()).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
        Ok(path)
    }
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(spec.into()));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.into()));
    let (last, parents) = path.split_last().expect("non-empty");
    let mut table = doc;
    for p in parents {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(format!("{spec}: {p} is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_snapshot() {
        let cfg = RunConfig::from_toml("", &[], Some(7)).unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.learning_rate, 1e-4);
        let again = RunConfig::from_toml(&cfg.to_toml(), &[], None).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_name_the_key() {
        let err = RunConfig::from_toml("[train]\nlearning_rte = 1e-3\n", &[], None).unwrap_err();
        assert!(err.to_string().contains("learning_rte"), "{err}");
        let err = RunConfig::from_toml("bogus = 1\n", &[], None).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        assert!(RunConfig::from_toml("[train]\nseed = 3\n", &[], None).is_err());
    }

    #[test]
    fn nested_overrides_keep_sibling_defaults() {
        let cfg = RunConfig::from_toml(
            "",
            &["train.loss_weights.perceptual=0".into(), "perceptual.weights=/w/vgg.safetensors".into()],
            None,
        )
        .unwrap();
        assert_eq!(cfg.train.loss_weights.perceptual, 0.0);
        assert_eq!(cfg.train.loss_weights.pixel, 1.0);
        assert_eq!(cfg.perceptual.weights.as_deref(), Some(Path::new("/w/vgg.safetensors")));
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = RunConfig::from_toml(
            "[train]\niterations = 10\n",
            &["train.iterations=20".into(), "generator.num_rrdb=2".into(), "data.grade=LGG".into()],
            None,
        )
        .unwrap();
        assert_eq!(cfg.train.iterations, 20);
        assert_eq!(cfg.generator.num_rrdb, 2);
        assert_eq!(cfg.data.grade, Some(Grade::Lgg));
        assert!(RunConfig::from_toml("", &["train.iterations".into()], None).is_err());
        assert!(RunConfig::from_toml("", &["train.iterations=0".into()], None).is_err());
    }

    #[test]
    fn empty_shape_means_any() {
        let cfg = RunConfig::from_toml("[data]\nexpected_shape = []\n", &[], None).unwrap();
        assert_eq!(cfg.build_options().expected_shape, None);
        assert_eq!(RunConfig::default().build_options().expected_shape, Some(BRATS_SHAPE));
    }
}
