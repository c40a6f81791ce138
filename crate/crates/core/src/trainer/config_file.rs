//! Line-oriented `key = value` configuration.
//!
//! Keys are the field names of [`ModelConfig`] and [`TrainConfig`]; `#`
//! starts a comment. A `scale = toy|full` line selects the defaults the
//! other keys are applied on top of, wherever it appears.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::transformer::ModelConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn toy() -> Self {
        RunConfig { model: ModelConfig::toy(), train: TrainConfig::toy() }
    }

    pub fn full_scale() -> Self {
        RunConfig { model: ModelConfig::full_scale(), train: TrainConfig::full_scale() }
    }

    pub fn for_scale(scale: &str) -> Result<Self> {
        match scale {
            "toy" => Ok(Self::toy()),
            "full" => Ok(Self::full_scale()),
            other => Err(Error::Config(format!("unknown scale {other:?} (expected toy or full)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        parse_config(&std::fs::read_to_string(path)?)
    }

    /// The settable keys, in a form [`parse_config`] reads back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for section in [serde_json::to_value(&self.model), serde_json::to_value(&self.train)] {
            if let Ok(Value::Object(map)) = section {
                for (k, v) in map {
                    let v = match v {
                        Value::String(s) => s,
                        other => other.to_string(),
                    };
                    out.push_str(&format!("{k} = {v}\n"));
                }
            }
        }
        out
    }
}

fn canonical(key: &str) -> &str {
    match key {
        "d_n" => "d_model",
        "lr" => "learning_rate",
        "h" => "heads",
        "n_t" => "layers",
        other => other,
    }
}

fn parse_like(existing: &Value, raw: &str, key: &str) -> Result<Value> {
    let bad = || Error::Config(format!("invalid value {raw:?} for {key}"));
    Ok(match existing {
        Value::Bool(_) => Value::Bool(match raw {
            "true" | "yes" | "on" | "1" => true,
            "false" | "no" | "off" | "0" => false,
            _ => return Err(bad()),
        }),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        Value::Number(_) => {
            let f = raw.parse::<f64>().map_err(|_| bad())?;
            serde_json::Number::from_f64(f).map(Value::Number).ok_or_else(bad)?
        }
        Value::String(_) => Value::String(raw.to_string()),
        _ => return Err(bad()),
    })
}

fn set_in(section: &mut Map<String, Value>, key: &str, raw: &str) -> Result<bool> {
    let Some(existing) = section.get(key) else { return Ok(false) };
    let value = parse_like(existing, raw, key)?;
    section.insert(key.to_string(), value);
    Ok(true)
}

/// Sets one field by name, parsing `raw` according to the field's type.
pub fn apply_setting(config: &mut RunConfig, key: &str, raw: &str) -> Result<()> {
    let key = canonical(key.trim());
    let raw = raw.trim();
    let Value::Object(mut model) = serde_json::to_value(&config.model)? else { unreachable!("struct serializes to a map") };
    let Value::Object(mut train) = serde_json::to_value(&config.train)? else { unreachable!("struct serializes to a map") };
    if set_in(&mut model, key, raw)? {
        config.model = serde_json::from_value(Value::Object(model)).map_err(|e| Error::Config(format!("{key}: {e}")))?;
    } else if set_in(&mut train, key, raw)? {
        config.train = serde_json::from_value(Value::Object(train)).map_err(|e| Error::Config(format!("{key}: {e}")))?;
    } else {
        return Err(Error::Config(format!("unknown configuration key {key:?}")));
    }
    Ok(())
}

fn split_line(line: &str) -> Option<std::result::Result<(&str, &str), ()>> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return None;
    }
    Some(line.split_once('=').map(|(k, v)| (k.trim(), v.trim())).ok_or(()))
}

/// Parses a whole config file.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        match split_line(line) {
            None => {}
            Some(Ok(pair)) => pairs.push(pair),
            Some(Err(())) => return Err(Error::Config(format!("line {}: expected `key = value`", n + 1))),
        }
    }
    let scale = pairs.iter().rev().find(|(k, _)| *k == "scale").map_or("toy", |(_, v)| *v);
    let mut config = RunConfig::for_scale(scale)?;
    for (k, v) in pairs.into_iter().filter(|(k, _)| *k != "scale") {
        apply_setting(&mut config, k, v)?;
    }
    config.validate()?;
    Ok(config)
}
