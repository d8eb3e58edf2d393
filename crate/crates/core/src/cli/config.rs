use std::collections::BTreeSet;
use std::path::Path;

use super::CliError;
use crate::training::{TrainConfig, TrainError};

/// Canonical spelling of a key; `learning_rate` is an alias of `lr`.
fn canonical(key: &str) -> &str {
    if key == "learning_rate" {
        "lr"
    } else {
        key
    }
}

/// Applies `key=value` lines on top of `base`. Returns the resolved config
/// and the canonical keys that were present.
pub fn parse_config_onto(
    base: TrainConfig,
    text: &str,
) -> Result<(TrainConfig, BTreeSet<String>), CliError> {
    let mut cfg = base;
    let mut seen = BTreeSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::ConfigSyntax { line: n + 1, text: raw.to_string() })?;
        let key = key.trim();
        if !seen.insert(canonical(key).to_string()) {
            return Err(CliError::DuplicateKey(key.to_string()));
        }
        cfg.set(key, value.trim()).map_err(|e| match e {
            TrainError::UnknownKey(k) => CliError::UnknownKey(k),
            TrainError::Value { key, value } => CliError::BadValue { key, value },
            other => CliError::Train(other),
        })?;
    }
    Ok((cfg, seen))
}

/// Config text over the defaults.
pub fn parse_config(text: &str) -> Result<TrainConfig, CliError> {
    Ok(parse_config_onto(TrainConfig::default(), text)?.0)
}

pub fn read_config_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::MissingConfig {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}
