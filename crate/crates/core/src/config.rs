//! Run configuration: a TOML document with sections, dotted-key overrides
//! and a resolved snapshot written next to every output.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::baselines::MethodConfig;
use crate::dataset::DataConfig;
use crate::error::{Error, Result};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds worlds, splits, initialisation and batching.
    pub seed: u64,
    /// Worker threads (0 = one per core).
    pub jobs: usize,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub method: MethodConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 0,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            method: MethodConfig::default(),
        }
    }
}

fn config_err(path: impl Into<String>, message: impl ToString) -> Error {
    Error::Config {
        path: path.into(),
        message: message.to_string(),
    }
}

/// Parses an override value as a TOML literal, falling back to a string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Checks that every key of `doc` exists in `schema` and has a compatible
/// type, reporting the first offending dotted path.
fn check_keys(doc: &Value, schema: &Value, path: &str) -> Result<()> {
    match (doc, schema) {
        (Value::Table(d), Value::Table(s)) => {
            for (k, v) in d {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let sv = s.get(k).ok_or_else(|| config_err(&p, "unknown key"))?;
                check_keys(v, sv, &p)?;
            }
            Ok(())
        }
        (Value::Table(_), _) => Err(config_err(path, "expected a value, found a section")),
        (_, Value::Table(_)) => Err(config_err(path, "expected a section, found a value")),
        _ => Ok(()),
    }
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| config_err(parts[..i].join("."), "not a section"))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Default::default()));
    }
    Err(config_err(path, "empty key"))
}

impl RunConfig {
    /// Defaults, then the file (if any), then `key=value` overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let schema = Value::try_from(RunConfig::default()).map_err(|e| config_err("", e))?;
        let mut doc = Value::Table(Default::default());
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|source| Error::File {
                path: path.display().to_string(),
                source,
            })?;
            doc = Value::Table(text.parse::<toml::Table>().map_err(|e| config_err(path.display().to_string(), e))?);
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| config_err(o.as_str(), "override must look like key=value"))?;
            set_path(&mut doc, k.trim(), parse_value(v.trim()))?;
        }
        check_keys(&doc, &schema, "")?;
        let mut merged = schema;
        merge(&mut merged, doc);
        let mut cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| config_err("", e.message()))?;
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Propagates the run seed to every component.
    pub fn apply_seed(&mut self) {
        self.data.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate().map_err(|e| config_err("data", e))?;
        self.method.soft.validate().map_err(|e| config_err("method.soft", e))?;
        self.method.correction.validate().map_err(|e| config_err("method.correction", e))?;
        if self.data.image.horizon != self.data.horizon {
            return Err(config_err("data.image.horizon", "must equal data.horizon"));
        }
        if self.method.dt != self.data.rollout.dt {
            return Err(config_err("method.dt", "must equal data.rollout.dt"));
        }
        if self.train.batch_size == 0 {
            return Err(config_err("train.batch_size", "must be positive"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("resolved_config.toml"), self.to_toml())?;
        Ok(())
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
