//! Run configuration: a single JSON document with defaults for every section
//! except the scenario.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{validate_timing, BoundaryConfig, EngineError, StageLatencies};
use crate::fusion::{FusionError, PolicyConfig};
use crate::link::LinkModel;
use crate::metrics::MetricsConfig;
use crate::presets::{build_scenario, ScenarioConfig};
use crate::scenario::{Scenario, ScenarioError};

pub const SEED_ENV: &str = "IAAD_SIM_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error at line {line}, column {column} (`{path}`): {message}")]
    Parse { line: usize, column: usize, path: String, message: String },
    #[error("invalid config at `{path}`: {message}")]
    Validation { path: String, message: String },
}

fn validation(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { path: path.into(), message: message.into() }
}

/// Either a synthetic model or recorded traces. A single trace drives both
/// streams unless `heavy_trace` is given.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<LinkModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heavy_trace: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SweepConfig {
    Seeds { seeds: u64 },
    Param { param: String, values: Vec<serde_json::Value> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub link: LinkConfig,
    #[serde(default)]
    pub stages: StageLatencies,
    #[serde(default)]
    pub boundaries: BoundaryConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

impl RunConfig {
    /// Parses and validates a config document. Relative trace paths stay
    /// relative; see [`parse_config`] for file-relative resolution.
    pub fn from_json_str(text: &str) -> Result<RunConfig, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            ConfigError::Parse { line: inner.line(), column: inner.column(), path, message: inner.to_string() }
        })?;
        cfg.apply_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_defaults(&mut self) {
        if self.link.model.is_none() && self.link.trace.is_none() && self.link.heavy_trace.is_none() {
            self.link.model = Some(LinkModel::field());
        }
    }

    /// Checks every cross-field invariant and builds the scenario once.
    pub fn validate(&self) -> Result<Scenario, ConfigError> {
        match (&self.link.model, &self.link.trace, &self.link.heavy_trace) {
            (Some(_), Some(_), _) => return Err(validation("link", "`model` and `trace` are mutually exclusive")),
            (Some(_), None, Some(_)) => return Err(validation("link.heavy_trace", "requires `trace`")),
            (None, None, Some(_)) => return Err(validation("link.heavy_trace", "requires `trace`")),
            (None, None, None) => return Err(validation("link", "one of `model` or `trace` is required")),
            (Some(model), None, None) => model.validate().map_err(|e| validation("link.model", e.to_string()))?,
            _ => {}
        }
        self.policy.validate().map_err(|e| match e {
            FusionError::InvalidConfig { path, message } => validation(format!("policy.{path}"), message),
            other => validation("policy", other.to_string()),
        })?;
        let scenario = build_scenario(&self.scenario).map_err(|e| match e {
            ScenarioError::InvalidConfig { path, message } => validation(format!("scenario.{path}"), message),
            other => validation("scenario", other.to_string()),
        })?;
        validate_timing(&self.stages, &self.boundaries, scenario.frame_period_us).map_err(|e| match e {
            EngineError::Config { path, message } => validation(path, message),
            other => validation("boundaries", other.to_string()),
        })?;
        if let Some(SweepConfig::Param { values, .. }) = &self.sweep {
            if values.is_empty() {
                return Err(validation("sweep.values", "must not be empty"));
            }
        }
        if let Some(SweepConfig::Seeds { seeds: 0 }) = &self.sweep {
            return Err(validation("sweep.seeds", "must be at least 1"));
        }
        if let Some(SweepConfig::Param { param, values }) = &self.sweep {
            for v in values {
                self.with_param(param, v.clone())?;
            }
        }
        Ok(scenario)
    }

    /// A copy with the dotted `param` path set to `value`, revalidated.
    pub fn with_param(&self, param: &str, value: serde_json::Value) -> Result<RunConfig, ConfigError> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = doc.as_object_mut() {
            obj.remove("sweep");
        }
        let mut slot = &mut doc;
        for key in param.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(key))
                .ok_or_else(|| validation("sweep.param", format!("`{param}` does not name a config field")))?;
        }
        *slot = value;
        let text = doc.to_string();
        RunConfig::from_json_str(&text).map_err(|e| match e {
            ConfigError::Validation { path, message } => validation(path, format!("with {param} swept: {message}")),
            ConfigError::Parse { path, message, .. } => validation(path, format!("with {param} swept: {message}")),
            io => io,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.link.trace, &mut self.link.heavy_trace].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Reads, parses and validates a config file. Trace paths are resolved
/// relative to the file's directory.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let mut cfg = RunConfig::from_json_str(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

/// The command-line seed wins over the environment, which wins over the
/// config file.
pub fn effective_seed(config_seed: u64, env: Option<&str>, flag: Option<u64>) -> Result<u64, ConfigError> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match env {
        Some(v) => {
            v.trim().parse().map_err(|_| validation(SEED_ENV, format!("`{v}` is not a 64-bit unsigned integer")))
        }
        None => Ok(config_seed),
    }
}
