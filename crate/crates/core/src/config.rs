//! Flat pipeline configuration.
//!
//! Every knob has a dotted key (`tsne.perplexity`, `partition.edge`, ...).
//! A TOML file may spell keys flat (`"tsne.perplexity" = 30`) or as tables
//! (`[tsne]` / `perplexity = 30`); both flatten to the same key. Unknown
//! keys are errors. `seed` feeds every stochastic stage.

use std::collections::BTreeMap;
use std::path::Path;

use toml::Value;

use crate::error::{Error, Result};
use crate::lscnet::{ClassWeighting, ModelSpec, TrainConfig};
use crate::metrics::{Aggregation, UnlabeledPolicy};
use crate::normalize::NormalizeParams;
use crate::partition::BlockSpec;
use crate::superpoint::SuperpointConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub normalize: NormalizeParams,
    pub superpoint: SuperpointConfig,
    pub model_preset: String,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub blocks: BlockSpec,
    pub min_confidence: u32,
    pub classifier: String,
    pub aggregation: Aggregation,
    pub unlabeled: UnlabeledPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            normalize: NormalizeParams::default(),
            superpoint: SuperpointConfig::default(),
            model_preset: "desk".into(),
            model: ModelSpec::desk(),
            train: TrainConfig::default(),
            blocks: BlockSpec::default(),
            min_confidence: 6,
            classifier: "lscnet".into(),
            aggregation: Aggregation::Micro,
            unlabeled: UnlabeledPolicy::Reject,
        }
    }
}

fn type_error(key: &str, want: &str, got: &Value) -> Error {
    Error::Config(format!("{key}: expected {want}, got {got}"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(type_error(key, "a number", v)),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(type_error(key, "a non-negative integer", v)),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| type_error(key, "true or false", v))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| type_error(key, "a string", v))
}

impl PipelineConfig {
    /// Sets one key. Model layout keys apply to the current preset, so
    /// `model.preset` should come first; [`PipelineConfig::apply`] ensures that.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let sp = &mut self.superpoint;
        match key {
            "seed" => {
                self.seed = match v {
                    Value::Integer(i) if *i >= 0 => *i as u64,
                    Value::String(s) => s.parse().map_err(|_| type_error(key, "an unsigned integer", v))?,
                    _ => return Err(type_error(key, "an unsigned integer", v)),
                }
            }
            "normalize.link_radius" => self.normalize.link_radius = as_f64(key, v)?,
            "msac.inlier_threshold" => self.normalize.msac.inlier_threshold = as_f64(key, v)?,
            "msac.iterations" => self.normalize.msac.iterations = as_usize(key, v)?,
            "superpoint.voxel_edge" => sp.voxel_edge = as_f64(key, v)?,
            "superpoint.max_embed_points" => sp.max_embed_points = as_usize(key, v)?,
            "tsne.perplexity" => sp.tsne.perplexity = as_f64(key, v)?,
            "tsne.iterations" => sp.tsne.iterations = as_usize(key, v)?,
            "tsne.learning_rate" => sp.tsne.learning_rate = as_f64(key, v)?,
            "tsne.early_exaggeration" => sp.tsne.early_exaggeration = as_f64(key, v)?,
            "tsne.exaggeration_iterations" => sp.tsne.exaggeration_iterations = as_usize(key, v)?,
            "tsne.initial_momentum" => sp.tsne.initial_momentum = as_f64(key, v)?,
            "tsne.final_momentum" => sp.tsne.final_momentum = as_f64(key, v)?,
            "tsne.momentum_switch" => sp.tsne.momentum_switch = as_usize(key, v)?,
            "cluster.threshold2d" => sp.cluster_threshold = as_f64(key, v)?,
            "linear.threshold" => sp.linear_threshold = as_f64(key, v)?,
            "solidity.threshold" => sp.solidity_threshold = as_f64(key, v)?,
            "solidity.max_depth" => sp.max_depth = as_usize(key, v)?,
            "solidity.alpha_factor" => sp.alpha_factor = as_f64(key, v)?,
            "spectral.k" => sp.spectral_k = as_usize(key, v)?,
            "model.preset" => {
                let name = as_str(key, v)?;
                self.model = ModelSpec::preset(name)?;
                self.model_preset = name.to_string();
            }
            "model.dropout" => self.model.dropout = as_f64(key, v)?,
            "model.radius_bound" => self.model.radius_bound = as_f64(key, v)?,
            "model.sa1.csm" | "model.sa1.rum" | "model.sa2.csm" | "model.sa2.rum" => {
                let layer = if key.starts_with("model.sa1") { 0 } else { 1 };
                let on = as_bool(key, v)?;
                let spec = self
                    .model
                    .layers
                    .get_mut(layer)
                    .ok_or_else(|| Error::Config(format!("{key}: the model has no such layer")))?;
                if key.ends_with("csm") {
                    spec.csm = on;
                } else {
                    spec.rum = on;
                }
            }
            "train.epochs" => self.train.epochs = as_usize(key, v)?,
            "train.batch_size" => self.train.batch_size = as_usize(key, v)?,
            "train.learning_rate" => self.train.learning_rate = as_f64(key, v)?,
            "train.momentum" => self.train.momentum = as_f64(key, v)?,
            "train.halve_every" => self.train.halve_every = as_usize(key, v)?,
            "train.min_purity" => self.train.min_purity = as_f64(key, v)?,
            "train.class_weighting" => {
                self.train.class_weighting = match as_str(key, v)? {
                    "inverse_frequency" => ClassWeighting::InverseFrequency,
                    "none" => ClassWeighting::None,
                    _ => return Err(type_error(key, "\"inverse_frequency\" or \"none\"", v)),
                }
            }
            "partition.edge" => self.blocks.edge = as_f64(key, v)?,
            "partition.offsets" => {
                let list = v.as_array().ok_or_else(|| type_error(key, "an array of numbers", v))?;
                self.blocks.offsets = list.iter().map(|x| as_f64(key, x)).collect::<Result<_>>()?;
            }
            "partition.points_per_block" => self.blocks.points_per_block = as_usize(key, v)?,
            "partition.voxel_edge" => self.blocks.voxel_edge = as_f64(key, v)?,
            "partition.min_training_points" => self.blocks.min_training_points = as_usize(key, v)?,
            "partition.min_confidence" => {
                self.min_confidence = u32::try_from(as_usize(key, v)?).map_err(|_| type_error(key, "a u32", v))?
            }
            "classifier.name" => {
                let name = as_str(key, v)?;
                if !crate::lscnet::classifier_names().contains(&name) {
                    return Err(Error::Config(format!(
                        "unknown classifier {name:?}; available: {}",
                        crate::lscnet::classifier_names().join(", ")
                    )));
                }
                self.classifier = name.to_string();
            }
            "metrics.aggregation" => {
                self.aggregation = match as_str(key, v)? {
                    "micro" => Aggregation::Micro,
                    "macro" => Aggregation::Macro,
                    _ => return Err(type_error(key, "\"micro\" or \"macro\"", v)),
                }
            }
            "metrics.exclude_unlabeled" => {
                self.unlabeled = if as_bool(key, v)? {
                    UnlabeledPolicy::Exclude
                } else {
                    UnlabeledPolicy::Reject
                }
            }
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Effective value of every key, sorted by key.
    pub fn entries(&self) -> BTreeMap<&'static str, Value> {
        let sp = &self.superpoint;
        let f = Value::Float;
        let u = |x: usize| Value::Integer(x as i64);
        let mut m = BTreeMap::new();
        let seed = i64::try_from(self.seed).map_or_else(|_| Value::String(self.seed.to_string()), Value::Integer);
        m.insert("seed", seed);
        m.insert("normalize.link_radius", f(self.normalize.link_radius));
        m.insert("msac.inlier_threshold", f(self.normalize.msac.inlier_threshold));
        m.insert("msac.iterations", u(self.normalize.msac.iterations));
        m.insert("superpoint.voxel_edge", f(sp.voxel_edge));
        m.insert("superpoint.max_embed_points", u(sp.max_embed_points));
        m.insert("tsne.perplexity", f(sp.tsne.perplexity));
        m.insert("tsne.iterations", u(sp.tsne.iterations));
        m.insert("tsne.learning_rate", f(sp.tsne.learning_rate));
        m.insert("tsne.early_exaggeration", f(sp.tsne.early_exaggeration));
        m.insert("tsne.exaggeration_iterations", u(sp.tsne.exaggeration_iterations));
        m.insert("tsne.initial_momentum", f(sp.tsne.initial_momentum));
        m.insert("tsne.final_momentum", f(sp.tsne.final_momentum));
        m.insert("tsne.momentum_switch", u(sp.tsne.momentum_switch));
        m.insert("cluster.threshold2d", f(sp.cluster_threshold));
        m.insert("linear.threshold", f(sp.linear_threshold));
        m.insert("solidity.threshold", f(sp.solidity_threshold));
        m.insert("solidity.max_depth", u(sp.max_depth));
        m.insert("solidity.alpha_factor", f(sp.alpha_factor));
        m.insert("spectral.k", u(sp.spectral_k));
        m.insert("model.preset", Value::String(self.model_preset.clone()));
        m.insert("model.dropout", f(self.model.dropout));
        m.insert("model.radius_bound", f(self.model.radius_bound));
        for (l, name) in [(0, "sa1"), (1, "sa2")] {
            if let Some(layer) = self.model.layers.get(l) {
                let (csm, rum) = if name == "sa1" {
                    ("model.sa1.csm", "model.sa1.rum")
                } else {
                    ("model.sa2.csm", "model.sa2.rum")
                };
                m.insert(csm, Value::Boolean(layer.csm));
                m.insert(rum, Value::Boolean(layer.rum));
            }
        }
        m.insert("train.epochs", u(self.train.epochs));
        m.insert("train.batch_size", u(self.train.batch_size));
        m.insert("train.learning_rate", f(self.train.learning_rate));
        m.insert("train.momentum", f(self.train.momentum));
        m.insert("train.halve_every", u(self.train.halve_every));
        m.insert("train.min_purity", f(self.train.min_purity));
        let weighting = match self.train.class_weighting {
            ClassWeighting::InverseFrequency => "inverse_frequency",
            ClassWeighting::None => "none",
        };
        m.insert("train.class_weighting", Value::String(weighting.into()));
        m.insert("partition.edge", f(self.blocks.edge));
        m.insert(
            "partition.offsets",
            Value::Array(self.blocks.offsets.iter().map(|&o| f(o)).collect()),
        );
        m.insert("partition.points_per_block", u(self.blocks.points_per_block));
        m.insert("partition.voxel_edge", f(self.blocks.voxel_edge));
        m.insert("partition.min_training_points", u(self.blocks.min_training_points));
        m.insert("partition.min_confidence", Value::Integer(self.min_confidence as i64));
        m.insert("classifier.name", Value::String(self.classifier.clone()));
        let agg = if self.aggregation == Aggregation::Micro { "micro" } else { "macro" };
        m.insert("metrics.aggregation", Value::String(agg.into()));
        m.insert("metrics.exclude_unlabeled", Value::Boolean(self.unlabeled == UnlabeledPolicy::Exclude));
        m
    }

    /// Applies flat key/value pairs, `model.preset` first, then validates.
    pub fn apply(&mut self, pairs: &[(String, Value)]) -> Result<()> {
        let (preset, rest): (Vec<_>, Vec<_>) = pairs.iter().partition(|(k, _)| k == "model.preset");
        for (k, v) in preset.into_iter().chain(rest) {
            self.set(k, v)?;
        }
        self.validate()
    }

    /// Defaults overridden by a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("config file: {e}")))?;
        let mut pairs = Vec::new();
        flatten("", &table, &mut pairs);
        let mut cfg = PipelineConfig::default();
        cfg.apply(&pairs)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Every module's own checks plus the cross-module ones.
    pub fn validate(&self) -> Result<()> {
        self.superpoint.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.blocks.validate()?;
        if !(self.normalize.link_radius > 0.0) || !(self.normalize.msac.inlier_threshold > 0.0) {
            return Err(Error::Config("link radius and inlier threshold must be > 0".into()));
        }
        if self.normalize.msac.iterations == 0 {
            return Err(Error::Config("msac needs at least one iteration".into()));
        }
        Ok(())
    }

    /// Superpoint settings with the pipeline seed threaded through.
    pub fn superpoint_config(&self) -> SuperpointConfig {
        let mut c = self.superpoint;
        c.tsne.seed = self.seed;
        c
    }

    pub fn normalize_params(&self) -> NormalizeParams {
        let mut p = self.normalize;
        p.msac.seed = self.seed;
        p
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// The TOML echo embedded in output artifacts.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(&format!("\"{k}\" = {v}\n"));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self.entries()).expect("toml values serialize")
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

/// Parses a `key=value` override. The value is read as a TOML value and
/// falls back to a bare string.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {text:?} is not key=value")))?;
    let (k, v) = (k.trim(), v.trim());
    let value = format!("x = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}
