//! Flat `key = value` run configuration files.
//!
//! One assignment per line; blank lines and `#` comments are skipped.
//! Unknown keys are errors (catching typos beats silently ignoring
//! them), later assignments win, and every key is optional — an empty
//! file yields [`RunConfig::default`]. The same key set is what
//! [`RunConfig::to_key_values`] emits, so a run's `config.copy` is
//! itself a loadable config.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agent::LossWeights;
use crate::experiment::{EnvKind, RunConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected 'key = value', got {text:?}")]
    Shape { line: usize, text: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: {key}: {message}")]
    Value {
        line: usize,
        key: String,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Documented keys, mirroring `RunConfig`. `out_dir` is deliberately not
/// a key: output locations come from the command line, keeping run
/// configs relocatable.
pub const CONFIG_KEYS: &[&str] = &[
    "env",
    "size",
    "layout",
    "horizon",
    "agent",
    "lr",
    "gamma",
    "alpha_value",
    "alpha_policy",
    "alpha_entropy",
    "beta",
    "k_steps",
    "alpha_encode",
    "hash_bits",
    "dense_dim",
    "ae_hidden",
    "hash_noise",
    "ae_lambda",
    "ae_update_period",
    "ae_lr",
    "ae_batch",
    "ae_buffer",
    "episodes",
    "seed",
];

fn parse_value<T: std::str::FromStr>(
    key: &str,
    value: &str,
    line: usize,
) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        line,
        key: key.to_string(),
        message: format!("{e} (got {value:?})"),
    })
}

/// Applies one assignment. `line` is used only for error messages.
pub fn apply_key(
    config: &mut RunConfig,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), ConfigError> {
    let w: &mut LossWeights = &mut config.weights;
    match key {
        "env" => match value {
            "grid" => {
                if !matches!(config.env, EnvKind::Grid { .. }) {
                    config.env = EnvKind::Grid { size: 40 };
                }
            }
            "wall" => {
                if !matches!(config.env, EnvKind::Wall { .. }) {
                    config.env = EnvKind::Wall {
                        layout: crate::experiment::DEFAULT_WALL_LAYOUT.to_string(),
                    };
                }
            }
            other => {
                return Err(ConfigError::Value {
                    line,
                    key: key.into(),
                    message: format!("expected grid | wall, got {other:?}"),
                })
            }
        },
        "size" => {
            let size = parse_value(key, value, line)?;
            config.env = EnvKind::Grid { size };
        }
        "layout" => {
            config.env = EnvKind::Wall {
                layout: value.replace("\\n", "\n"),
            };
        }
        "horizon" => config.horizon = parse_value(key, value, line)?,
        "agent" => {
            config.agent = value.parse().map_err(|e| ConfigError::Value {
                line,
                key: key.into(),
                message: e,
            })?
        }
        "lr" => w.learning_rate = parse_value(key, value, line)?,
        "gamma" => w.gamma = parse_value(key, value, line)?,
        "alpha_value" => w.alpha_value = parse_value(key, value, line)?,
        "alpha_policy" => w.alpha_policy = parse_value(key, value, line)?,
        "alpha_entropy" => w.alpha_entropy = parse_value(key, value, line)?,
        "beta" => w.beta = parse_value(key, value, line)?,
        "k_steps" => w.k_steps = parse_value(key, value, line)?,
        "alpha_encode" => config.alpha_encode = parse_value(key, value, line)?,
        "hash_bits" => config.latent.hash_bits = parse_value(key, value, line)?,
        "dense_dim" => config.latent.dense_dim = parse_value(key, value, line)?,
        "ae_hidden" => config.latent.hidden = parse_value(key, value, line)?,
        "hash_noise" => config.latent.noise_halfwidth = parse_value(key, value, line)?,
        "ae_lambda" => config.latent.aux_weight = parse_value(key, value, line)?,
        "ae_update_period" => config.latent.update_period = parse_value(key, value, line)?,
        "ae_lr" => config.latent.learning_rate = parse_value(key, value, line)?,
        "ae_batch" => config.latent.batch_size = parse_value(key, value, line)?,
        "ae_buffer" => config.latent.buffer_capacity = parse_value(key, value, line)?,
        "episodes" => config.episodes = parse_value(key, value, line)?,
        "seed" => config.seed = parse_value(key, value, line)?,
        _ => {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.into(),
            })
        }
    }
    Ok(())
}

/// Parses config text over the defaults. Wall layouts embed newlines as
/// the two characters `\n`.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut config = RunConfig::default();
    // `env`/`size`/`layout` interact; apply them in a fixed order so the
    // file's line order never matters.
    let mut staged: Vec<(usize, &str, &str)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(ConfigError::Shape {
                line,
                text: trimmed.to_string(),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Shape {
                line,
                text: trimmed.to_string(),
            });
        }
        staged.push((line, key, value));
    }
    let rank = |key: &str| match key {
        "env" => 0,
        "size" | "layout" => 1,
        _ => 2,
    };
    staged.sort_by_key(|&(line, key, _)| (rank(key), line));
    for (line, key, value) in staged {
        apply_key(&mut config, key, value, line)?;
    }
    config
        .validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}
