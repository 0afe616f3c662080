//! Run configuration: an optional TOML file with `seed`, `[scenario]` and
//! `[ce]`, then `--set FIELD=VALUE` overrides on top.

use std::path::Path;

use fedaug_core::ce_optimizer::CEConfig;
use fedaug_core::system_model::{Scenario, ScenarioConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub ce: CEConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::config("config", e.message().to_string()))
    }
}

/// Which part of the run an override targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Scenario(Vec<String>),
    Ce(Vec<String>),
    Seed,
}

/// Splits `FIELD=VALUE`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::config(s, "expected FIELD=VALUE"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(CliError::config(s, "empty field name"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

pub fn target(field: &str) -> Target {
    let parts: Vec<String> = field.split('.').map(str::to_string).collect();
    match parts[0].as_str() {
        "seed" if parts.len() == 1 => Target::Seed,
        "ce" => Target::Ce(parts[1..].to_vec()),
        "scenario" => Target::Scenario(parts[1..].to_vec()),
        _ => Target::Scenario(parts),
    }
}

/// A literal from the command line: JSON when it parses, a bare string otherwise.
fn literal(value: &str) -> Value {
    serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()))
}

/// Replaces the field at `path` inside `item`, type-checked by round-tripping
/// through its serialized form.
pub fn set_field<T: Serialize + DeserializeOwned>(item: &T, path: &[String], field: &str, value: &str) -> Result<T> {
    let mut root = serde_json::to_value(item).map_err(|e| CliError::config(field, e.to_string()))?;
    if path.is_empty() {
        return Err(CliError::config(field, "missing field name"));
    }
    let mut slot = &mut root;
    for key in path {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(key.as_str()))
            .ok_or_else(|| CliError::config(field, "unknown field"))?;
    }
    *slot = literal(value);
    serde_json::from_value(root).map_err(|e| CliError::config(field, e.to_string()))
}

impl RunConfig {
    pub fn apply(&mut self, field: &str, value: &str) -> Result<()> {
        match target(field) {
            Target::Seed => {
                self.seed = value
                    .parse()
                    .map_err(|_| CliError::config(field, "expected a non-negative integer"))?;
            }
            Target::Ce(p) => self.ce = set_field(&self.ce, &p, field, value)?,
            Target::Scenario(p) => self.scenario = set_field(&self.scenario, &p, field, value)?,
        }
        Ok(())
    }
}

/// Applies a scenario-field override to an already generated scenario.
pub fn apply_to_scenario(s: &Scenario, field: &str, value: &str) -> Result<Scenario> {
    match target(field) {
        Target::Scenario(p) => {
            let out: Scenario = set_field(s, &p, field, value)?;
            out.validate()?;
            Ok(out)
        }
        _ => Err(CliError::config(field, "not a scenario field")),
    }
}
