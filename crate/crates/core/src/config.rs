//! Run configuration: one JSON document with a section per command. Unknown
//! keys are rejected. `key.path=value` overrides are applied to the JSON tree
//! before it is parsed, so they go through the same validation as file values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metrics::JitterSpec;
use crate::pruning::PruneConfig;
use crate::synth::{DepthCorruption, SynthRecipe};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub recipe: SynthRecipe,
    /// Depth priors are written only when present.
    pub depth: Option<DepthCorruption>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSection {
    pub prune: PruneConfig,
    /// Importance logit for PLY files without an `importance` property.
    pub default_importance_logit: f64,
    /// Visibility hit threshold on max `T * alpha` for offline mode.
    pub visibility_threshold: f64,
}

impl Default for PruneSection {
    fn default() -> Self {
        PruneSection {
            prune: PruneConfig::default(),
            default_importance_logit: 0.0,
            visibility_threshold: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub tau_vis: Vec<f64>,
    pub tau_grad: Vec<f64>,
    /// Training steps per sweep cell; `None` keeps `train.steps`.
    pub steps: Option<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            tau_vis: vec![1.0, 2.0, 3.0],
            tau_grad: vec![1e-4, 5e-4, 1e-3],
            steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub jitter: JitterSpec,
    /// Accumulated-opacity level counted as leakage.
    pub leakage_threshold: f64,
    /// Depth stability tolerance; `None` uses 1% of the median view depth.
    pub depth_tolerance: Option<f64>,
    pub sweep: SweepConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            jitter: JitterSpec::default(),
            leakage_threshold: 0.05,
            depth_tolerance: None,
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthSection,
    pub train: TrainConfig,
    pub prune: PruneSection,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Parses `text` (empty means all defaults) after applying `overrides`.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut tree: Value = if text.trim().is_empty() {
            Value::Object(Default::default())
        } else {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        RunConfig::from_json(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.prune.prune.validate()?;
        if !(self.eval.leakage_threshold > 0.0 && self.eval.leakage_threshold < 1.0) {
            return Err(Error::Config("eval.leakage_threshold must lie in (0, 1)".into()));
        }
        if self.eval.sweep.tau_vis.is_empty() || self.eval.sweep.tau_grad.is_empty() {
            return Err(Error::Config("eval.sweep needs at least one value per threshold".into()));
        }
        Ok(())
    }
}

/// Applies `a.b.c=value`; `value` is parsed as JSON, falling back to a string.
pub fn apply_override(tree: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override {spec:?} has an empty key")));
    }
    let mut node = tree;
    for (i, k) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {spec:?}: {} is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(k.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(k.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!()
}
