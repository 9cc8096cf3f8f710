//! Run configuration: every tunable of the pipeline in one tree, loaded from
//! JSON or from `dotted.key = value` lines and validated as a whole.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::agent::{AgentConfig, ItemInit, Variant};
use crate::data::{SourceFormat, Split};
use crate::env::{EnvConfig, LmfConfig};
use crate::eval::BenchConfig;
use crate::training::{DdpgConfig, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_relations: usize,
    pub density: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_users: 50, n_items: 200, n_relations: 4, density: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Interaction file read by `ingest`.
    pub ratings: Option<PathBuf>,
    pub format: SourceFormat,
    /// Optional `head,relation,tail` file merged into the ingested data.
    pub triples: Option<PathBuf>,
    /// Preprocessed dataset directory. When unset, commands generate the
    /// planted synthetic data from `synth` and the run seed.
    pub dir: Option<PathBuf>,
    pub synth: SynthConfig,
    pub min_interactions: usize,
    pub relevance_threshold: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            ratings: None,
            format: SourceFormat::TabularRatings,
            triples: None,
            dir: None,
            synth: SynthConfig::default(),
            min_interactions: crate::data::DEFAULT_MIN_INTERACTIONS,
            relevance_threshold: crate::data::DEFAULT_RELEVANCE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
    pub split: Split,
    pub threads: usize,
    /// Training seeds of `ablate`, one run per seed and variant.
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            split: Split::Test,
            threads: 1,
            seeds: vec![1, 2, 3, 4, 5],
            variants: vec![Variant::M, Variant::MA, Variant::MK],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Write a checkpoint every this many episodes during `train`; 0 keeps
    /// only the final one.
    pub checkpoint_every: usize,
    pub data: DataConfig,
    pub lmf: LmfConfig,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub ddpg: DdpgConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            checkpoint_every: 0,
            data: DataConfig::default(),
            lmf: LmfConfig::default(),
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            ddpg: DdpgConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (JSON if the text starts with `{`, key=value lines
    /// otherwise), then applies `overrides` of the form `dotted.key=value`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.into(), source })?,
            None => String::new(),
        };
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut tree = serde_json::to_value(RunConfig::default()).expect("default config serializes");
        if text.trim_start().starts_with('{') {
            let file: Value = serde_json::from_str(text)
                .map_err(|e| ConfigError::Parse { line: e.line(), message: e.to_string() })?;
            merge(&mut tree, file, "")?;
        } else {
            for (k, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) =
                    split_assignment(line).map_err(|message| ConfigError::Parse { line: k + 1, message })?;
                set_dotted(&mut tree, key, value)?;
            }
        }
        for o in overrides {
            let (key, value) = split_assignment(o).map_err(|message| ConfigError::Parse { line: 0, message })?;
            set_dotted(&mut tree, key, value)?;
        }
        let cfg: RunConfig = serde_json::from_value(tree).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.env.validate().map_err(|e| invalid(&e))?;
        self.agent.validate().map_err(|e| invalid(&e))?;
        self.ddpg.validate().map_err(|e| invalid(&e))?;
        self.train.lkg.validate().map_err(|e| invalid(&e))?;
        self.bench.validate().map_err(|e| invalid(&e))?;
        let fail = |m: String| Err(ConfigError::Invalid(m));
        let s = &self.data.synth;
        if s.n_users == 0 || s.n_items == 0 || s.n_relations == 0 {
            return fail("data.synth sizes must be >= 1".into());
        }
        if !(s.density > 0.0 && s.density <= 1.0) {
            return fail(format!("data.synth.density {} outside (0, 1]", s.density));
        }
        if !self.data.relevance_threshold.is_finite() {
            return fail("data.relevance_threshold must be finite".into());
        }
        if self.lmf.k == 0 || !(self.lmf.lr > 0.0) || !(self.lmf.reg >= 0.0) || !(self.lmf.init_scale > 0.0) {
            return fail("lmf.k, lmf.lr and lmf.init_scale must be positive, lmf.reg >= 0".into());
        }
        if !(self.lmf.negative_ratio >= 0.0) || !(self.lmf.negative_weight > 0.0) {
            return fail("lmf.negative_ratio must be >= 0 and lmf.negative_weight > 0".into());
        }
        if self.agent.item_init == ItemInit::Lmf && self.agent.dim != self.lmf.k {
            return fail(format!(
                "agent.dim ({}) must equal lmf.k ({}) when item embeddings start from LMF factors",
                self.agent.dim, self.lmf.k
            ));
        }
        if !(self.train.noise_scale >= 0.0) {
            return fail("train.noise_scale must be >= 0".into());
        }
        if self.eval.k == 0 || self.eval.threads == 0 {
            return fail("eval.k and eval.threads must be >= 1".into());
        }
        if self.eval.seeds.is_empty() || self.eval.variants.is_empty() {
            return fail("eval.seeds and eval.variants must not be empty".into());
        }
        Ok(())
    }
}

fn split_assignment(s: &str) -> Result<(&str, &str), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key = value, found {:?}", s))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in {:?}", s));
    }
    Ok((k, v.trim()))
}

/// Numbers, booleans, arrays and quoted strings parse as JSON; anything
/// else is taken as a bare string.
fn parse_scalar(v: &str) -> Value {
    serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()))
}

fn set_dotted(tree: &mut Value, key: &str, value: &str) -> Result<(), ConfigError> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (n, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
        let slot = obj.get_mut(*part).ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
        if n + 1 == parts.len() {
            if slot.is_object() {
                return Err(ConfigError::Invalid(format!("`{}` is a section, not a value", key)));
            }
            *slot = parse_scalar(value);
            return Ok(());
        }
        node = slot;
    }
    unreachable!("split yields at least one part")
}

fn merge(base: &mut Value, file: Value, prefix: &str) -> Result<(), ConfigError> {
    let Value::Object(entries) = file else {
        return Err(ConfigError::Invalid(format!("`{}` must be an object", prefix.trim_end_matches('.'))));
    };
    let obj: &mut Map<String, Value> =
        base.as_object_mut().ok_or_else(|| ConfigError::UnknownKey(prefix.trim_end_matches('.').into()))?;
    for (k, v) in entries {
        let path = format!("{}{}", prefix, k);
        let slot = obj.get_mut(&k).ok_or_else(|| ConfigError::UnknownKey(path.clone()))?;
        if slot.is_object() {
            merge(slot, v, &format!("{}.", path))?;
        } else {
            *slot = v;
        }
    }
    Ok(())
}
