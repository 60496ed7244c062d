//! The combined TOML configuration file.
//!
//! ```toml
//! model_preset = "desk"      # desk | paper | tiny
//! train_preset = "desk"      # desk | paper
//!
//! [corruption]
//! per_token_error_rate = 0.15
//! [corruption.class_weights]
//! regional_confusion = 2.0
//!
//! [model]
//! word_layers = 2
//!
//! [train]
//! max_steps = 500
//! ```
//!
//! Every section is optional. Keys in `[model]` and `[train]` override the
//! chosen preset; keys in `[corruption]` override the default spec.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use vispell_core::errorgen::CorruptionSpec;
use vispell_core::model::ModelConfig;
use vispell_core::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: unknown key `{key}` in [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("config: unknown {kind} preset `{name}`")]
    UnknownPreset { kind: &'static str, name: String },
    #[error("config [{section}]: {message}")]
    Invalid { section: String, message: String },
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model_preset: Option<String>,
    train_preset: Option<String>,
    corruption: Option<toml::Table>,
    model: Option<toml::Table>,
    train: Option<toml::Table>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub corruption: CorruptionSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            corruption: CorruptionSpec::default(),
            model: ModelConfig::desk(0, 0),
            train: TrainConfig::desk(3000),
        }
    }
}

impl Config {
    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Config, ConfigError> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Config::parse(&text)
            }
        }
    }

    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let model_name = raw.model_preset.as_deref().unwrap_or("desk");
        let model = ModelConfig::preset(model_name, 0, 0).ok_or_else(|| ConfigError::UnknownPreset {
            kind: "model",
            name: model_name.to_string(),
        })?;
        let train_name = raw.train_preset.as_deref().unwrap_or("desk");
        let train = TrainConfig::preset(train_name).ok_or_else(|| ConfigError::UnknownPreset {
            kind: "train",
            name: train_name.to_string(),
        })?;
        let config = Config {
            corruption: overlay("corruption", CorruptionSpec::default(), raw.corruption)?,
            model: overlay("model", model, raw.model)?,
            train: overlay("train", train, raw.train)?,
        };
        config.corruption.validate().map_err(|e| ConfigError::Invalid {
            section: "corruption".into(),
            message: e.to_string(),
        })?;
        config.train.validate().map_err(|e| ConfigError::Invalid {
            section: "train".into(),
            message: e.to_string(),
        })?;
        Ok(config)
    }
}

/// Replaces fields of `base` with those present in `table`.
fn overlay<T: Serialize + DeserializeOwned>(section: &str, base: T, table: Option<toml::Table>) -> Result<T, ConfigError> {
    let Some(table) = table else {
        return Ok(base);
    };
    let invalid = |message: String| ConfigError::Invalid {
        section: section.to_string(),
        message,
    };
    let mut merged = toml::Table::try_from(&base).map_err(|e| invalid(e.to_string()))?;
    for (key, value) in table {
        match merged.get_mut(&key) {
            Some(toml::Value::Table(existing)) => match value {
                toml::Value::Table(t) => existing.extend(t),
                other => return Err(invalid(format!("`{key}` must be a table, got {}", other.type_str()))),
            },
            Some(slot) => *slot = value,
            None => {
                return Err(ConfigError::UnknownKey {
                    section: section.to_string(),
                    key,
                })
            }
        }
    }
    merged.try_into().map_err(|e: toml::de::Error| invalid(e.message().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use vispell_core::errorgen::ErrorClass;
    use vispell_core::train::OptimizerKind;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn overrides_apply_over_presets() {
        let c = Config::parse(
            r#"
            model_preset = "tiny"
            train_preset = "paper"
            [corruption]
            per_token_error_rate = 0.3
            [corruption.class_weights]
            regional_confusion = 2.5
            [model]
            word_layers = 3
            pooling = "max"
            [train]
            max_steps = 7
            "#,
        )
        .unwrap();
        assert_eq!(c.corruption.per_token_error_rate, 0.3);
        assert_eq!(c.corruption.class_weights[&ErrorClass::RegionalConfusion], 2.5);
        assert_eq!(c.corruption.class_weights[&ErrorClass::TypoInsertion], 1.0);
        assert_eq!(c.model.word_layers, 3);
        assert_eq!(c.model.word_hidden, ModelConfig::tiny(0, 0).word_hidden);
        assert_eq!(c.train.optimizer, OptimizerKind::Lamb);
        assert_eq!(c.train.max_steps, 7);
    }

    #[test]
    fn rejects_unknown_and_invalid_entries() {
        assert!(matches!(
            Config::parse("[model]\nwrod_layers = 3"),
            Err(ConfigError::UnknownKey { .. })
        ));
        assert!(matches!(Config::parse("bogus = 1"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            Config::parse("model_preset = \"huge\""),
            Err(ConfigError::UnknownPreset { .. })
        ));
        assert!(matches!(
            Config::parse("[corruption]\nper_token_error_rate = 1.5"),
            Err(ConfigError::Invalid { .. })
        ));
        assert!(Config::parse("[corruption.class_weights]\nnot_a_class = 1.0").is_err());
        assert!(Config::parse("[train]\nlr = \"fast\"").is_err());
    }
}
