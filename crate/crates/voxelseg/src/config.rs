//! The run configuration document (TOML) and its `section.key=value`
//! overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voxelseg_core::crf::CrfParams;
use voxelseg_core::loss::LossParams;
use voxelseg_core::net::NetworkConfig;
use voxelseg_core::optim::OptimizerConfig;

/// Environment variable that overrides `cache_dir`.
pub const CACHE_ENV: &str = "VOXELSEG_CACHE";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("override `{0}` is not of the form section.key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// How rotated training copies are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    /// Train on the original scans only.
    None,
    /// Rotate in memory when the training set is loaded.
    OnTheFly,
    /// Read the rotated copies written by `augment`.
    #[default]
    Cached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub augment: AugmentMode,
    /// Read training scans from disk as needed instead of holding them all
    /// in memory.
    pub streaming: bool,
    /// Stop as soon as validation Dice reaches this value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_dice: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            max_epochs: 100,
            patience: 10,
            batch_size: 1,
            augment: AugmentMode::default(),
            streaming: false,
            target_dice: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.optimizer.validate().map_err(|e| ConfigError::Invalid(format!("train.optimizer: {e}")))?;
        if self.max_epochs == 0 {
            return Err(ConfigError::Invalid("train.max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(ConfigError::Invalid("train.patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("train.batch_size must be at least 1".into()));
        }
        if let Some(t) = self.target_dice {
            if !(0.0..=1.0).contains(&t) {
                return Err(ConfigError::Invalid(format!("train.target_dice must lie in [0, 1], got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FoldConfig {
    pub k: usize,
    /// Validation scans drawn from each fold's training portion.
    pub validation_count: usize,
    /// Folds to train (0-based); empty means all.
    pub selected: Vec<usize>,
}

impl Default for FoldConfig {
    fn default() -> Self {
        Self {
            k: 5,
            validation_count: 2,
            selected: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    /// Directory of `<id>.volf` scans and `<id>.mask.volf` masks.
    pub data_root: PathBuf,
    /// Rotated copies written by `augment`.
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub loss: LossParams,
    pub crf: CrfParams,
    pub folds: FoldConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::default(),
            data_root: "data".into(),
            cache_dir: "cache".into(),
            output_dir: "runs".into(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            loss: LossParams::default(),
            crf: CrfParams::default(),
            folds: FoldConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from the defaults), applies `overrides` and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let (mut table, origin) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_owned(),
                    source,
                })?;
                let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
                    origin: p.display().to_string(),
                    message: e.message().to_owned(),
                })?;
                (table, p.display().to_string())
            }
            None => (toml::Table::new(), "defaults".to_owned()),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config = Self::from_table(table, &origin)?;
        config.validate()?;
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
            origin: "text".into(),
            message: e.message().to_owned(),
        })?;
        Self::from_table(table, "text")
    }

    fn from_table(table: toml::Table, origin: &str) -> Result<Self, ConfigError> {
        let known = toml::Table::try_from(Self::default()).expect("defaults serialize");
        if let Some(key) = unknown_key(&table, &known, "") {
            return Err(ConfigError::UnknownKey(key));
        }
        Self::deserialize(toml::Value::Table(table)).map_err(|e| ConfigError::Parse {
            origin: origin.to_owned(),
            message: e.message().to_owned(),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.network.validate().map_err(|e| ConfigError::Invalid(format!("network: {e}")))?;
        self.train.validate()?;
        self.loss.validate().map_err(|e| ConfigError::Invalid(format!("loss: {e}")))?;
        self.crf.validate().map_err(|e| ConfigError::Invalid(format!("crf: {e}")))?;
        if self.folds.k < 2 {
            return Err(ConfigError::Invalid("folds.k must be at least 2".into()));
        }
        if let Some(&f) = self.folds.selected.iter().find(|&&f| f >= self.folds.k) {
            return Err(ConfigError::Invalid(format!("folds.selected names fold {f} of {}", self.folds.k)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// `cache_dir`, unless the environment overrides it.
    pub fn effective_cache_dir(&self) -> PathBuf {
        match std::env::var_os(CACHE_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.cache_dir.clone(),
        }
    }
}

/// Keys missing from the defaults. Optional keys absent from the defaults
/// are listed here so that they are still accepted.
const OPTIONAL_KEYS: &[&str] = &["train.target_dice"];

fn unknown_key(table: &toml::Table, known: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match known.get(k) {
            None if OPTIONAL_KEYS.contains(&path.as_str()) => {}
            None => return Some(path),
            Some(toml::Value::Table(kt)) => {
                if let toml::Value::Table(t) = v {
                    if let Some(found) = unknown_key(t, kt, &path) {
                        return Some(found);
                    }
                }
            }
            Some(_) => {}
        }
    }
    None
}

/// Sets `a.b.c=value` in `table`. The value is read as a TOML literal and
/// falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::Override(assignment.to_owned()))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(assignment.to_owned()));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let (last, sections) = parts.split_last().expect("non-empty key");
    let mut cur = table;
    for (i, s) in sections.iter().enumerate() {
        let entry = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(ConfigError::Invalid(format!("`{}` is not a section", parts[..=i].join(".")))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn round_trip_with_optional_key() {
        let mut c = RunConfig::default();
        c.train.target_dice = Some(0.97);
        c.train.optimizer = OptimizerConfig::sgd(0.01, 0.8);
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::parse("[train]\nmax_epoch = 3\n").unwrap_err();
        assert_eq!(err.to_string(), "unknown config key `train.max_epoch`");
        let err = RunConfig::parse("sed = 1\n").unwrap_err();
        assert!(err.to_string().contains("`sed`"));
    }

    #[test]
    fn overrides_win() {
        let c = RunConfig::load(
            None,
            &[
                "train.max_epochs=7".into(),
                "network.channels=[4, 8, 16]".into(),
                "network.stages=2".into(),
                "data_root=/tmp/x".into(),
                "train.optimizer.kind=sgd_momentum".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.train.max_epochs, 7);
        assert_eq!(c.network.channels, vec![4, 8, 16]);
        assert_eq!(c.data_root, PathBuf::from("/tmp/x"));
        let err = RunConfig::load(None, &["train.bogus=1".into()]).unwrap_err();
        assert!(err.to_string().contains("train.bogus"));
        assert!(RunConfig::load(None, &["novalue".into()]).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::load(None, &["train.patience=0".into()]).is_err());
        assert!(RunConfig::load(None, &["folds.k=1".into()]).is_err());
        assert!(RunConfig::load(None, &["train.max_epochs=\"many\"".into()]).is_err());
    }
}
