//! Experiment configuration.
//!
//! A config document is plain text, one `key = value` per line, `#` starts
//! a comment. Keys are flat and dotted (`optim.eta`). The same keys are
//! accepted as command-line overrides and in the JSON echo written next to
//! every run (`{"key": "value", ...}`). Resolution order: built-in defaults,
//! then the config file, then overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DomainAssignment, DomainShift};
use crate::error::{Error, Result};
use crate::federation::{Strategy, Variant};
use crate::prototypes::{validate_alpha, WeightMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic,
    /// One `(images, labels)` pair per domain.
    Idx(Vec<(PathBuf, PathBuf)>),
    /// A single CSV carrying a `domain` column.
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub strategy: Variant,
    pub alpha: f64,
    pub lambda: f64,
    pub weight_mode: WeightMode,
    pub seed: u64,
    pub rounds: usize,
    pub local_epochs: usize,

    pub hidden: Vec<usize>,
    pub embedding_dim: usize,

    pub eta: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,

    pub source: DataSource,
    pub num_classes: usize,
    pub num_domains: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub shift: DomainShift,

    pub clients: usize,
    pub n_way: Vec<usize>,
    pub k_shot: (usize, usize),
    pub assignment: DomainAssignment,
    pub test_fraction: f64,

    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            strategy: Variant::Pfpl,
            alpha: 0.5,
            lambda: 1.0,
            weight_mode: WeightMode::Similarity,
            seed: 0,
            rounds: 30,
            local_epochs: 1,
            hidden: vec![64],
            embedding_dim: 32,
            eta: 0.01,
            momentum: 0.9,
            weight_decay: 1e-5,
            batch_size: 4,
            source: DataSource::Synthetic,
            num_classes: 6,
            num_domains: 2,
            input_dim: 16,
            samples_per_class: 400,
            shift: DomainShift {
                rotation_step: std::f64::consts::FRAC_PI_2,
                scale_jitter: 0.5,
                offset: 1.0,
                noise_std: 0.3,
            },
            clients: 8,
            n_way: vec![3],
            k_shot: (50, 50),
            assignment: DomainAssignment::RoundRobin,
            test_fraction: 0.2,
            output_dir: None,
        }
    }
}

/// Every recognised key, in echo order.
pub const KEYS: &[&str] = &[
    "strategy",
    "alpha",
    "lambda",
    "weight_mode",
    "seed",
    "rounds",
    "local_epochs",
    "model.hidden",
    "model.embedding_dim",
    "optim.eta",
    "optim.momentum",
    "optim.weight_decay",
    "optim.batch_size",
    "data.source",
    "data.num_classes",
    "data.num_domains",
    "data.input_dim",
    "data.samples_per_class",
    "data.domain_rotation",
    "data.domain_scale",
    "data.domain_offset",
    "data.noise_std",
    "data.idx",
    "data.csv",
    "partition.clients",
    "partition.n",
    "partition.k",
    "partition.domains",
    "partition.test_fraction",
    "output_dir",
];

/// Keys a sweep may vary, with their short aliases.
pub const SWEEPABLE: &[(&str, &str)] = &[
    ("alpha", "alpha"),
    ("lambda", "lambda"),
    ("strategy", "strategy"),
    ("n", "partition.n"),
    ("k", "partition.k"),
    ("weight_mode", "weight_mode"),
    ("seed", "seed"),
];

/// Canonical key for a sweep dimension, or a config error.
pub fn sweep_key(name: &str) -> Result<&'static str> {
    SWEEPABLE
        .iter()
        .find(|(alias, key)| *alias == name || *key == name)
        .map(|(_, key)| *key)
        .ok_or_else(|| {
            Error::config(
                name,
                format!(
                    "not sweepable (sweepable keys: {})",
                    SWEEPABLE.iter().map(|(a, _)| *a).collect::<Vec<_>>().join(", ")
                ),
            )
        })
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("`{value}` is not {what}")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse(key, value, "a number")?;
    if !v.is_finite() {
        return Err(Error::config(key, "must be finite"));
    }
    Ok(v)
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s, "a non-negative integer"))
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Assign one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "strategy" => self.strategy = v.parse().map_err(|e: String| Error::config(key, e))?,
            "alpha" => self.alpha = parse_f64(key, v)?,
            "lambda" => self.lambda = parse_f64(key, v)?,
            "weight_mode" => self.weight_mode = v.parse().map_err(|e: String| Error::config(key, e))?,
            "seed" => self.seed = parse(key, v, "an unsigned integer")?,
            "rounds" => self.rounds = parse(key, v, "a non-negative integer")?,
            "local_epochs" => self.local_epochs = parse(key, v, "a non-negative integer")?,
            "model.hidden" => self.hidden = parse_list(key, v)?,
            "model.embedding_dim" => self.embedding_dim = parse(key, v, "a positive integer")?,
            "optim.eta" => self.eta = parse_f64(key, v)?,
            "optim.momentum" => self.momentum = parse_f64(key, v)?,
            "optim.weight_decay" => self.weight_decay = parse_f64(key, v)?,
            "optim.batch_size" => self.batch_size = parse(key, v, "a positive integer")?,
            "data.source" => {
                self.source = match v {
                    "synthetic" => DataSource::Synthetic,
                    "idx" => match &self.source {
                        DataSource::Idx(_) => self.source.clone(),
                        _ => DataSource::Idx(Vec::new()),
                    },
                    "csv" => match &self.source {
                        DataSource::Csv(_) => self.source.clone(),
                        _ => DataSource::Csv(PathBuf::new()),
                    },
                    other => {
                        return Err(Error::config(
                            key,
                            format!("unknown source `{other}` (expected synthetic, idx or csv)"),
                        ))
                    }
                }
            }
            "data.num_classes" => self.num_classes = parse(key, v, "a positive integer")?,
            "data.num_domains" => self.num_domains = parse(key, v, "a positive integer")?,
            "data.input_dim" => self.input_dim = parse(key, v, "a positive integer")?,
            "data.samples_per_class" => self.samples_per_class = parse(key, v, "a positive integer")?,
            "data.domain_rotation" => self.shift.rotation_step = parse_f64(key, v)?,
            "data.domain_scale" => self.shift.scale_jitter = parse_f64(key, v)?,
            "data.domain_offset" => self.shift.offset = parse_f64(key, v)?,
            "data.noise_std" => self.shift.noise_std = parse_f64(key, v)?,
            "data.idx" => {
                let pairs = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|pair| {
                        let (img, lab) = pair.split_once(':').ok_or_else(|| {
                            Error::config(key, format!("`{pair}` is not images:labels"))
                        })?;
                        Ok((PathBuf::from(img), PathBuf::from(lab)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if !pairs.is_empty() || matches!(self.source, DataSource::Idx(_)) {
                    self.source = DataSource::Idx(pairs);
                }
            }
            "data.csv" => {
                if !v.is_empty() || matches!(self.source, DataSource::Csv(_)) {
                    self.source = DataSource::Csv(PathBuf::from(v));
                }
            }
            "partition.clients" => self.clients = parse(key, v, "a positive integer")?,
            "partition.n" => self.n_way = parse_list(key, v)?,
            "partition.k" => {
                self.k_shot = match v.split_once("..") {
                    Some((lo, hi)) => (
                        parse(key, lo, "a positive integer")?,
                        parse(key, hi, "a positive integer")?,
                    ),
                    None => {
                        let k = parse(key, v, "a positive integer or a range lo..hi")?;
                        (k, k)
                    }
                }
            }
            "partition.domains" => {
                self.assignment = match v {
                    "round_robin" => DomainAssignment::RoundRobin,
                    "random" => DomainAssignment::Random,
                    other => {
                        return Err(Error::config(
                            key,
                            format!("unknown assignment `{other}` (expected round_robin or random)"),
                        ))
                    }
                }
            }
            "partition.test_fraction" => self.test_fraction = parse_f64(key, v)?,
            "output_dir" => self.output_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Textual value of one key, the inverse of [`Self::set`].
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "strategy" => self.strategy.to_string(),
            "alpha" => self.alpha.to_string(),
            "lambda" => self.lambda.to_string(),
            "weight_mode" => self.weight_mode.to_string(),
            "seed" => self.seed.to_string(),
            "rounds" => self.rounds.to_string(),
            "local_epochs" => self.local_epochs.to_string(),
            "model.hidden" => join(&self.hidden),
            "model.embedding_dim" => self.embedding_dim.to_string(),
            "optim.eta" => self.eta.to_string(),
            "optim.momentum" => self.momentum.to_string(),
            "optim.weight_decay" => self.weight_decay.to_string(),
            "optim.batch_size" => self.batch_size.to_string(),
            "data.source" => match self.source {
                DataSource::Synthetic => "synthetic",
                DataSource::Idx(_) => "idx",
                DataSource::Csv(_) => "csv",
            }
            .to_string(),
            "data.num_classes" => self.num_classes.to_string(),
            "data.num_domains" => self.num_domains.to_string(),
            "data.input_dim" => self.input_dim.to_string(),
            "data.samples_per_class" => self.samples_per_class.to_string(),
            "data.domain_rotation" => self.shift.rotation_step.to_string(),
            "data.domain_scale" => self.shift.scale_jitter.to_string(),
            "data.domain_offset" => self.shift.offset.to_string(),
            "data.noise_std" => self.shift.noise_std.to_string(),
            "data.idx" => match &self.source {
                DataSource::Idx(pairs) => pairs
                    .iter()
                    .map(|(i, l)| format!("{}:{}", i.display(), l.display()))
                    .collect::<Vec<_>>()
                    .join(","),
                _ => String::new(),
            },
            "data.csv" => match &self.source {
                DataSource::Csv(p) => p.display().to_string(),
                _ => String::new(),
            },
            "partition.clients" => self.clients.to_string(),
            "partition.n" => join(&self.n_way),
            "partition.k" => {
                if self.k_shot.0 == self.k_shot.1 {
                    self.k_shot.0.to_string()
                } else {
                    format!("{}..{}", self.k_shot.0, self.k_shot.1)
                }
            }
            "partition.domains" => match self.assignment {
                DomainAssignment::RoundRobin => "round_robin",
                DomainAssignment::Random => "random",
            }
            .to_string(),
            "partition.test_fraction" => self.test_fraction.to_string(),
            "output_dir" => self
                .output_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            other => return Err(Error::config(other, "unknown key")),
        })
    }

    /// All keys with their resolved values, in [`KEYS`] order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        KEYS.iter()
            .map(|&k| (k, self.get(k).expect("every listed key is readable")))
            .collect()
    }

    pub fn strategy(&self) -> Strategy {
        Strategy {
            variant: self.strategy,
            alpha: self.alpha,
            lambda: self.lambda,
            weight_mode: self.weight_mode,
        }
    }

    /// Apply `key = value` text (or a flat JSON object) on top of `self`.
    pub fn merge_document(&mut self, text: &str) -> Result<()> {
        if text.trim_start().starts_with('{') {
            let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)
                .map_err(|e| Error::config("<json>", e.to_string()))?;
            for (k, v) in map {
                let value = match v {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Number(n) => n.to_string(),
                    serde_json::Value::Bool(b) => b.to_string(),
                    other => return Err(Error::config(&k, format!("unsupported value {other}"))),
                };
                self.set(&k, &value)?;
            }
            return Ok(());
        }
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`"))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Defaults, then the optional config file, then `key=value` overrides;
    /// the result is validated.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::config("config", format!("cannot read {}: {e}", path.display()))
            })?;
            cfg.merge_document(&text)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Flat JSON echo of every key; loading it reproduces this config.
    pub fn to_json(&self) -> String {
        let map: serde_json::Map<String, serde_json::Value> = self
            .pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
            .collect();
        serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("string map") + "\n"
    }

    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        validate_alpha(self.alpha)?;
        self.strategy().validate()?;
        let positive = |key: &str, v: usize| {
            if v == 0 {
                Err(Error::config(key, "must be positive"))
            } else {
                Ok(())
            }
        };
        positive("model.embedding_dim", self.embedding_dim)?;
        if self.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "hidden widths must be positive"));
        }
        if !(self.eta > 0.0) {
            return Err(Error::config("optim.eta", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("optim.momentum", "must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("optim.weight_decay", "must be >= 0"));
        }
        positive("optim.batch_size", self.batch_size)?;
        positive("local_epochs", self.local_epochs)?;
        positive("partition.clients", self.clients)?;
        if self.clients > u32::MAX as usize {
            return Err(Error::config("partition.clients", "too many clients"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("data.num_classes", "need at least 2 classes"));
        }
        if self.n_way.is_empty() {
            return Err(Error::config("partition.n", "need at least one value"));
        }
        if let Some(&n) = self.n_way.iter().find(|&&n| n == 0 || n > self.num_classes) {
            return Err(Error::config(
                "partition.n",
                format!("{n} is outside 1..={}", self.num_classes),
            ));
        }
        if self.k_shot.0 == 0 || self.k_shot.0 > self.k_shot.1 {
            return Err(Error::config("partition.k", "need 1 <= k_min <= k_max"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::config("partition.test_fraction", "must lie in [0, 1)"));
        }
        match &self.source {
            DataSource::Synthetic => {
                positive("data.input_dim", self.input_dim)?;
                positive("data.num_domains", self.num_domains)?;
                positive("data.samples_per_class", self.samples_per_class)?;
                if self.shift.noise_std < 0.0 {
                    return Err(Error::config("data.noise_std", "must be >= 0"));
                }
                if self.shift.scale_jitter < 0.0 || self.shift.scale_jitter >= 1.0 {
                    return Err(Error::config(
                        "data.domain_scale",
                        "must lie in [0, 1) so scale entries stay nonzero",
                    ));
                }
            }
            DataSource::Idx(pairs) => {
                if pairs.is_empty() {
                    return Err(Error::config("data.idx", "list images:labels pairs, one per domain"));
                }
            }
            DataSource::Csv(path) => {
                if path.as_os_str().is_empty() {
                    return Err(Error::config("data.csv", "path required when data.source = csv"));
                }
            }
        }
        Ok(())
    }
}
