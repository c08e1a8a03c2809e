//! Run configuration: defaults, TOML loading, overrides and range checks.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderKind;
use crate::error::{Error, Result};
use crate::heads::{RankingLossConfig, TaskLossConfig};
use crate::inference::DecodeConfig;
use crate::metrics::Averaging;
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Features file for the pretrained adapter; unused by the toy encoder.
    pub model_name: Option<String>,
    pub dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Toy,
            model_name: None,
            dim: 32,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelationConfig {
    pub logits_normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub max_span_len: usize,
    pub neg_entity: usize,
    pub neg_relation: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub width_dim: usize,
    pub gamma: f64,
    pub m_pos: f64,
    pub m_neg: f64,
    pub delta: f64,
    pub theta_entity: f64,
    pub theta_relation: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub init_std: f64,
    pub grad_clip: Option<f64>,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Held out from the training file when no dev file is given; 0 disables.
    pub dev_fraction: f64,
    pub averaging: Averaging,
    /// Macro-average over every schema type instead of the observed ones.
    pub macro_all_types: bool,
    pub encoder: EncoderConfig,
    pub relation: RelationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_span_len: 10,
            neg_entity: 120,
            neg_relation: 120,
            epochs: 20,
            batch_size: 2,
            learning_rate: 5e-5,
            warmup_fraction: 0.1,
            width_dim: 25,
            gamma: 2.0,
            m_pos: 2.5,
            m_neg: 0.5,
            delta: 0.25,
            theta_entity: 0.85,
            theta_relation: 0.85,
            alpha: 1.0,
            beta: 1.0,
            seed: 42,
            init_std: 0.02,
            grad_clip: None,
            weight_decay: 0.0,
            dropout: 0.0,
            dev_fraction: 0.0,
            averaging: Averaging::Micro,
            macro_all_types: false,
            encoder: EncoderConfig::default(),
            relation: RelationConfig::default(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Applies `key = value` overrides; dotted keys address nested tables
    /// (`encoder.dim`). Values are read as TOML literals, bare words as
    /// strings.
    pub fn with_overrides<'a>(&self, overrides: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for (key, raw) in overrides {
            let value = parse_value(raw);
            let mut parts: Vec<&str> = key.split('.').collect();
            let leaf = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty key {key:?}")))?;
            let mut node = &mut table;
            for part in parts {
                node = node
                    .entry(part)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("{key}: {part} is not a table")))?;
            }
            node.insert(leaf.to_string(), value);
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.max_span_len >= 1, || "max_span_len must be at least 1".into())?;
        check(self.batch_size >= 1, || "batch_size must be at least 1".into())?;
        check(self.learning_rate.is_finite() && self.learning_rate > 0.0, || {
            format!("learning_rate must be positive, got {}", self.learning_rate)
        })?;
        check((0.0..=1.0).contains(&self.warmup_fraction), || {
            format!("warmup_fraction must lie in [0, 1], got {}", self.warmup_fraction)
        })?;
        check(self.width_dim >= 1, || "width_dim must be at least 1".into())?;
        check(self.gamma.is_finite() && self.gamma > 0.0, || format!("gamma must be positive, got {}", self.gamma))?;
        check(self.m_pos.is_finite() && self.m_neg.is_finite(), || "margins must be finite".into())?;
        for (name, theta) in [("theta_entity", self.theta_entity), ("theta_relation", self.theta_relation)] {
            check((0.0..=1.0).contains(&theta), || format!("{name} must lie in [0, 1], got {theta}"))?;
        }
        check(self.init_std.is_finite() && self.init_std > 0.0, || {
            format!("init_std must be positive, got {}", self.init_std)
        })?;
        if let Some(c) = self.grad_clip {
            check(c.is_finite() && c > 0.0, || format!("grad_clip must be positive, got {c}"))?;
        }
        check(self.weight_decay.is_finite() && self.weight_decay >= 0.0, || {
            format!("weight_decay must be non-negative, got {}", self.weight_decay)
        })?;
        check((0.0..1.0).contains(&self.dropout), || format!("dropout must lie in [0, 1), got {}", self.dropout))?;
        check((0.0..1.0).contains(&self.dev_fraction), || {
            format!("dev_fraction must lie in [0, 1), got {}", self.dev_fraction)
        })?;
        check(self.encoder.dim >= 1, || "encoder.dim must be at least 1".into())?;
        if self.encoder.kind == EncoderKind::Pretrained {
            check(self.encoder.model_name.is_some(), || {
                "encoder.model_name (the features file) is required for the pretrained encoder".into()
            })?;
        }
        self.task().validate()
    }

    pub fn ranking(&self) -> RankingLossConfig {
        RankingLossConfig {
            gamma: self.gamma,
            m_pos: self.m_pos,
            m_neg: self.m_neg,
        }
    }

    pub fn task(&self) -> TaskLossConfig {
        TaskLossConfig {
            alpha: self.alpha,
            beta: self.beta,
            delta: self.delta,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            ranking: self.ranking(),
            task: self.task(),
            logits_normalized: self.relation.logits_normalized,
            dropout: self.dropout,
        }
    }

    pub fn decode(&self) -> DecodeConfig {
        DecodeConfig {
            theta_entity: self.theta_entity,
            theta_relation: self.theta_relation,
            logits_normalized: self.relation.logits_normalized,
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
