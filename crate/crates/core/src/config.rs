//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! total_steps = 50000
//!
//! [instance]
//! preset = "syn6-imbalanced"
//! target_multiplier = 1.0
//!
//! [scheduler]
//! kind = "a5c"
//! tau = 0.05
//! ```
//!
//! Absent keys take their defaults; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{preset, MultiTaskInstance};
use crate::error::{Error, Result};
use crate::learner::LearnerConfig;
use crate::schedulers::SchedulerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceConfig {
    /// Built-in instance name. Ignored when `file` is set.
    pub preset: String,
    /// Instance JSON file, relative paths resolved against the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    pub target_multiplier: f64,
    /// Per-task target overrides keyed by task name, applied before the multiplier.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub targets: BTreeMap<String, f64>,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            preset: "syn6".into(),
            file: None,
            target_multiplier: 1.0,
            targets: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Learner steps between evaluations.
    pub interval: u64,
    /// Episodes per task at each evaluation, with actions sampled from the policy.
    pub episodes: usize,
    pub episode_cap: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            interval: 2000,
            episodes: 5,
            episode_cap: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub total_steps: u64,
    /// Learner steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: u64,
    pub instance: InstanceConfig,
    pub scheduler: SchedulerConfig,
    pub learner: LearnerConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            total_steps: 50_000,
            checkpoint_interval: 0,
            instance: InstanceConfig::default(),
            scheduler: SchedulerConfig::default(),
            learner: LearnerConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::validation("total_steps", "must be positive"));
        }
        if !(self.instance.target_multiplier > 0.0 && self.instance.target_multiplier.is_finite()) {
            return Err(Error::validation("instance.target_multiplier", "must be positive"));
        }
        for (name, &t) in &self.instance.targets {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::validation(format!("instance.targets.{name}"), "must be positive"));
            }
        }
        if self.instance.file.is_none() && !crate::envs::PRESETS.contains(&self.instance.preset.as_str()) {
            return Err(Error::validation(
                "instance.preset",
                format!("unknown preset `{}`; known: {}", self.instance.preset, crate::envs::PRESETS.join(", ")),
            ));
        }
        if self.eval.interval == 0 {
            return Err(Error::validation("eval.interval", "must be positive"));
        }
        if self.eval.episodes == 0 {
            return Err(Error::validation("eval.episodes", "must be positive"));
        }
        if self.eval.episode_cap == 0 {
            return Err(Error::validation("eval.episode_cap", "must be positive"));
        }
        self.scheduler.validate()?;
        self.learner.validate()
    }

    /// Parses and validates TOML text. `origin` names the source in errors.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        Self::from_toml_with(text, origin, &[])
    }

    /// As [`RunConfig::from_toml`], then applies `section.key=value` overrides.
    pub fn from_toml_with(text: &str, origin: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| toml_error(&e, text, origin))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let rendered = toml::to_string(&table).map_err(|e| Error::Format(e.to_string()))?;
        let (cfg, source, name) = if overrides.is_empty() {
            (toml::from_str::<RunConfig>(text), text, origin.to_string())
        } else {
            (toml::from_str::<RunConfig>(&rendered), rendered.as_str(), format!("{origin} (with overrides)"))
        };
        let cfg = cfg.map_err(|e| toml_error(&e, source, &name))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Resolves the instance, with target overrides and multiplier applied.
    /// `base` is the directory relative instance paths are resolved against.
    pub fn build_instance(&self, base: Option<&Path>) -> Result<MultiTaskInstance> {
        let inst = match &self.instance.file {
            Some(f) => {
                let path = match base {
                    Some(b) if f.is_relative() => b.join(f),
                    _ => f.clone(),
                };
                MultiTaskInstance::load(&path)?
            }
            None => preset(&self.instance.preset)?,
        };
        inst.retarget(&self.instance.targets, self.instance.target_multiplier)
    }
}

/// Reads, parses and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    load_config_with(path, &[])
}

pub fn load_config_with(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = RunConfig::from_toml_with(&text, &path.display().to_string(), overrides)?;
    if let (Some(f), Some(dir)) = (&cfg.instance.file, path.parent()) {
        if f.is_relative() {
            cfg.instance.file = Some(dir.join(f));
        }
    }
    Ok(cfg)
}

fn toml_error(e: &toml::de::Error, text: &str, origin: &str) -> Error {
    let location = match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            format!("{origin}:{line}:{col}")
        }
        None => origin.to_string(),
    };
    Error::Config {
        location,
        message: e.message().trim().to_string(),
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| Error::Config {
        location: "--set".into(),
        message: format!("expected section.key=value, got `{spec}`"),
    })?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config {
            location: "--set".into(),
            message: format!("malformed key `{key}`"),
        });
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty key");
    let mut node = table;
    for p in parents {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| Error::Config {
            location: "--set".into(),
            message: format!("`{p}` is not a section"),
        })?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
