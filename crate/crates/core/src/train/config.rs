use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{FeatureMode, SynthConfig};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::masker::Grouping;

use super::optim::OptimizerKind;

pub const SCHEMA_VERSION: u32 = 1;

/// Smallest batch the MI estimator and batch standardization accept.
pub const MIN_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset manifest; a synthetic cohort is generated when absent.
    pub manifest: Option<String>,
    /// Seed for the synthetic cohort.
    pub seed: u64,
    pub synth: SynthConfig,
    /// Fraction of strongest edges kept at graph construction.
    pub keep_fraction: f64,
    pub feature_mode: FeatureMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            manifest: None,
            seed: 0,
            synth: SynthConfig::default(),
            keep_fraction: 1.0,
            feature_mode: FeatureMode::ConnectivityRow,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskerConfig {
    pub hidden: usize,
    /// Group parameter; `N/2` when absent.
    pub k: Option<usize>,
    pub grouping: Grouping,
    pub tau: f64,
}

impl Default for MaskerConfig {
    fn default() -> Self {
        MaskerConfig {
            hidden: 64,
            k: None,
            grouping: Grouping::Size,
            tau: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Heavy-ball coefficient for SGD; plain SGD when zero.
    pub momentum: f64,
    pub optimizer: OptimizerKind,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            epochs: 30,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.0,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    /// Weight of the compression term `I(Z_sub, Z)`.
    pub beta: f64,
    pub optim: OptimConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            beta: 0.01,
            optim: OptimConfig {
                epochs: 100,
                batch_size: 32,
                lr: 0.003,
                momentum: 0.0,
                optimizer: OptimizerKind::Adam,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    /// Weight of the decorrelation terms.
    pub lambda: f64,
    /// Drop rate for perturbed edges.
    pub epsilon: f64,
    pub optim: OptimConfig,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            lambda: 1e-4,
            epsilon: 0.2,
            optim: OptimConfig {
                epochs: 30,
                batch_size: 32,
                lr: 0.001,
                momentum: 0.0,
                optimizer: OptimizerKind::Adam,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    /// Validation accuracy is checked every this many epochs.
    pub eval_every: usize,
    /// Train the encoder together with the head instead of a frozen probe.
    pub fine_tune_encoder: bool,
    pub threshold: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 300,
            lr: 0.1,
            l2: 1e-3,
            eval_every: 10,
            fine_tune_encoder: false,
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub top_k: usize,
    /// Gumbel resamples per graph when estimating selection frequency.
    pub samples: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            top_k: 20,
            samples: 20,
        }
    }
}

/// Every knob of an experiment, versioned by `schema_version`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Seed for single runs.
    pub seed: u64,
    /// Repeat seeds for cross-validated runs.
    pub seeds: Vec<u64>,
    pub folds: usize,
    /// Held-out fold for single runs.
    pub fold: usize,
    pub labeled_fraction: f64,
    /// Rényi order of the MI estimator.
    pub alpha: f64,
    pub data: DataConfig,
    pub masker: MaskerConfig,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub ssl: SslConfig,
    pub probe: ProbeConfig,
    pub explain: ExplainConfig,
    /// Write a model checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            folds: 5,
            fold: 0,
            labeled_fraction: 0.2,
            alpha: 2.0,
            data: DataConfig::default(),
            masker: MaskerConfig::default(),
            encoder: EncoderConfig::default(),
            pretrain: PretrainConfig::default(),
            ssl: SslConfig::default(),
            probe: ProbeConfig::default(),
            explain: ExplainConfig::default(),
            checkpoint_every: 0,
        }
    }
}

fn unknown_keys(given: &Value, known: &Value, path: &str, out: &mut Vec<String>) {
    let (Value::Object(g), Value::Object(k)) = (given, known) else {
        return;
    };
    for (key, v) in g {
        let p = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        match k.get(key) {
            None => out.push(p),
            Some(kv) => unknown_keys(v, kv, &p, out),
        }
    }
}

impl ExperimentConfig {
    /// Parse JSON, reporting every unknown or ill-typed key at once.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "config".into(),
            detail: e.to_string(),
        })?;
        let known = serde_json::to_value(ExperimentConfig::default())?;
        let mut bad = Vec::new();
        unknown_keys(&value, &known, "", &mut bad);
        if !bad.is_empty() {
            return Err(Error::Schema(bad));
        }
        let cfg: ExperimentConfig = serde_json::from_value(value.clone()).map_err(|e| {
            let mut keys = BTreeSet::new();
            collect_type_errors(&value, &known, "", &mut keys);
            if keys.is_empty() {
                keys.insert(e.to_string());
            }
            Error::Schema(keys.into_iter().collect())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            problems.push(format!(
                "schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.pretrain.beta >= 0.0) {
            problems.push("pretrain.beta must be >= 0".into());
        }
        if !(self.ssl.lambda >= 0.0) {
            problems.push("ssl.lambda must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.ssl.epsilon) {
            problems.push("ssl.epsilon must lie in [0, 1)".into());
        }
        if !(self.masker.tau > 0.0) {
            problems.push("masker.tau must be > 0".into());
        }
        if !(self.alpha > 0.0) || self.alpha == 1.0 {
            problems.push("alpha must be > 0 and != 1".into());
        }
        for (name, o) in [("pretrain", &self.pretrain.optim), ("ssl", &self.ssl.optim)] {
            if o.batch_size < MIN_BATCH {
                problems.push(format!("{name}.optim.batch_size must be >= {MIN_BATCH}"));
            }
            if !(o.lr >= 0.0) {
                problems.push(format!("{name}.optim.lr must be >= 0"));
            }
            if !(0.0..1.0).contains(&o.momentum) {
                problems.push(format!("{name}.optim.momentum must lie in [0, 1)"));
            }
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            problems.push("labeled_fraction must lie in (0, 1]".into());
        }
        if self.folds < 2 {
            problems.push("folds must be >= 2".into());
        }
        if self.fold >= self.folds {
            problems.push("fold must be < folds".into());
        }
        if self.seeds.is_empty() {
            problems.push("seeds must not be empty".into());
        }
        if !(self.data.keep_fraction > 0.0 && self.data.keep_fraction <= 1.0) {
            problems.push("data.keep_fraction must lie in (0, 1]".into());
        }
        if self.masker.k == Some(0) {
            problems.push("masker.k must be positive".into());
        }
        if self.masker.hidden == 0 {
            problems.push("masker.hidden must be positive".into());
        }
        if self.probe.eval_every == 0 {
            problems.push("probe.eval_every must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Group parameter for an `n`-node atlas.
    pub fn group_k(&self, n: usize) -> usize {
        self.masker.k.unwrap_or((n / 2).max(1))
    }
}

fn collect_type_errors(given: &Value, known: &Value, path: &str, out: &mut BTreeSet<String>) {
    match (given, known) {
        (Value::Object(g), Value::Object(k)) => {
            for (key, v) in g {
                let p = if path.is_empty() {
                    key.clone()
                } else {
                    format!("{path}.{key}")
                };
                if let Some(kv) = k.get(key) {
                    collect_type_errors(v, kv, &p, out);
                }
            }
        }
        (_, Value::Null) => {}
        (Value::Number(_), Value::Number(_))
        | (Value::String(_), Value::String(_))
        | (Value::Bool(_), Value::Bool(_))
        | (Value::Array(_), Value::Array(_)) => {}
        _ => {
            out.insert(path.to_string());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.pretrain.beta, 0.01);
        assert_eq!(cfg.ssl.lambda, 1e-4);
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = ExperimentConfig::from_json(r#"{"betta": 1, "ssl": {"lamda": 2}, "seed": 3}"#)
            .unwrap_err();
        match err {
            Error::Schema(keys) => assert_eq!(keys, vec!["betta", "ssl.lamda"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ill_typed_keys_are_listed() {
        let err = ExperimentConfig::from_json(r#"{"seed": "x", "ssl": {"epsilon": []}}"#)
            .unwrap_err();
        match err {
            Error::Schema(keys) => assert_eq!(keys, vec!["seed", "ssl.epsilon"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invariants_are_checked() {
        let mut cfg = ExperimentConfig::default();
        cfg.ssl.epsilon = 1.0;
        cfg.masker.tau = 0.0;
        cfg.pretrain.optim.batch_size = 4;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("epsilon") && msg.contains("tau") && msg.contains("batch_size"));
    }
}
