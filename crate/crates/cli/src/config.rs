//! Run configuration: one file (JSON or `dotted.key = value` lines) plus
//! command-line overrides, echoed into every output directory.

use std::path::Path;

use ckm_core::evaluation::EvalConfig;
use ckm_core::sim::SimConfig;
use ckm_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub sim: SimConfig,
    /// Environments placed in the validation split (the last ones generated).
    pub val_envs: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sim: SimConfig::default(),
            val_envs: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    /// Cells at or above this gain count as covered.
    pub coverage_threshold_db: f64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            coverage_threshold_db: -90.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed key `{key}`")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("key `{key}` descends into a non-table value")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::Config(format!("key `{key}` descends into a non-table value")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// JSON literal when it parses as one, bare string otherwise.
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn parse_assignment(line: &str) -> Result<(&str, Value), CliError> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("expected `key = value`, got `{line}`")))?;
    Ok((k.trim(), parse_scalar(v.trim())))
}

fn from_value(v: Value) -> Result<RunConfig, CliError> {
    serde_json::from_value(v).map_err(|e| CliError::Config(format!("invalid configuration: {e}")))
}

impl RunConfig {
    /// Parses JSON (first non-blank character `{`) or `key = value` lines;
    /// `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        if text.trim_start().starts_with('{') {
            let v: Value =
                serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON configuration: {e}")))?;
            return from_value(v);
        }
        let mut root = Value::Object(Map::new());
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = parse_assignment(line)?;
            set_path(&mut root, k, v)?;
        }
        from_value(root)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `dotted.key=value` overrides on top of the current values.
    pub fn with_overrides<'a>(&self, overrides: impl IntoIterator<Item = &'a str>) -> Result<Self, CliError> {
        let mut root = serde_json::to_value(self).map_err(|e| CliError::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = parse_assignment(o)?;
            set_path(&mut root, k, v)?;
        }
        from_value(root)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
