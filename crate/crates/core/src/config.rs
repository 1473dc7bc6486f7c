//! Flat `key = value` experiment configuration.
//!
//! The same setter backs config files, command-line overrides and the text
//! embedded in checkpoints, so the documented key set and the accepted key
//! set cannot drift apart.

use std::path::PathBuf;

use thiserror::Error;

use crate::mixer::{self, MixRatio};
use crate::model::ModelConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub experiment: String,
    pub ratio: MixRatio,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_max: f64,
    pub warmup_fraction: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub quick_eval_every: usize,
    pub quick_eval_size: usize,
    pub eval_seed: u64,
    pub eval_workers: usize,
    pub data_seed: u64,
    pub train_count: usize,
    pub val_count: usize,
    pub init_from: Option<PathBuf>,
    pub resume_from: Option<PathBuf>,
    pub eval_only: bool,
    pub checkpoint_every: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub precision: Precision,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            experiment: "run".into(),
            ratio: MixRatio { math: 1, nli: 1 },
            batch_size: 64,
            epochs: 3,
            lr_max: 3e-4,
            warmup_fraction: 0.06,
            clip_norm: 1.0,
            seed: 1,
            quick_eval_every: 100,
            quick_eval_size: 500,
            eval_seed: 1,
            eval_workers: 1,
            data_seed: 1,
            train_count: 20_000,
            val_count: 2_000,
            init_from: None,
            resume_from: None,
            eval_only: false,
            checkpoint_every: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            precision: Precision::F32,
            model: ModelConfig::default(),
        }
    }
}

/// Every accepted key with a one-line description, in rendering order.
pub const KEYS: &[(&str, &str)] = &[
    ("experiment", "experiment name; names the output files"),
    ("ratio", "math:NLI sub-batch ratio (1:0 math-only, 0:1 NLI-only)"),
    ("batch_size", "examples per optimizer step"),
    ("epochs", "full traversals of the math set (NLI set for 0:1)"),
    ("lr_max", "peak learning rate"),
    ("warmup_fraction", "fraction of steps with linear warmup"),
    ("clip_norm", "global gradient-norm clipping threshold"),
    ("seed", "training seed (init, shuffling)"),
    ("quick_eval_every", "steps between quick evaluations"),
    ("quick_eval_size", "examples per task in a quick evaluation"),
    ("eval_seed", "seed of the fixed quick-eval subsample"),
    ("eval_workers", "threads used for evaluation"),
    ("data_seed", "seed of the synthetic datasets"),
    ("train_count", "training examples per task"),
    ("val_count", "validation examples per task"),
    ("init_from", "checkpoint to start from (empty for random init)"),
    ("resume_from", "mid-run checkpoint to resume (empty to start fresh)"),
    ("eval_only", "evaluate the initial parameters without training"),
    ("checkpoint_every", "steps between resumable checkpoints (0 = off)"),
    ("adam_beta1", "Adam first-moment decay"),
    ("adam_beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam denominator epsilon"),
    ("precision", "arithmetic: f32 or f64"),
    ("vocab_size", "embedding rows"),
    ("max_seq_len", "positional embedding rows"),
    ("d_model", "model width"),
    ("n_heads", "attention heads"),
    ("n_layers", "transformer blocks"),
    ("d_ff", "feed-forward width"),
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn fmt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "experiment" => {
                if value.is_empty() || value.contains(['/', '\\']) {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        value: value.into(),
                        reason: "must be a non-empty file-name component".into(),
                    });
                }
                self.experiment = value.into();
            }
            "ratio" => {
                self.ratio = value.parse().map_err(|e: mixer::MixError| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    reason: e.to_string(),
                })?
            }
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "lr_max" => self.lr_max = parse_num(key, value)?,
            "warmup_fraction" => self.warmup_fraction = parse_num(key, value)?,
            "clip_norm" => self.clip_norm = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "quick_eval_every" => self.quick_eval_every = parse_num(key, value)?,
            "quick_eval_size" => self.quick_eval_size = parse_num(key, value)?,
            "eval_seed" => self.eval_seed = parse_num(key, value)?,
            "eval_workers" => self.eval_workers = parse_num(key, value)?,
            "data_seed" => self.data_seed = parse_num(key, value)?,
            "train_count" => self.train_count = parse_num(key, value)?,
            "val_count" => self.val_count = parse_num(key, value)?,
            "init_from" => self.init_from = parse_path(value),
            "resume_from" => self.resume_from = parse_path(value),
            "eval_only" => self.eval_only = parse_num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, value)?,
            "adam_eps" => self.adam_eps = parse_num(key, value)?,
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                            reason: "expected f32 or f64".into(),
                        })
                    }
                }
            }
            "vocab_size" => self.model.vocab_size = parse_num(key, value)?,
            "max_seq_len" => self.model.max_seq_len = parse_num(key, value)?,
            "d_model" => self.model.d_model = parse_num(key, value)?,
            "n_heads" => self.model.n_heads = parse_num(key, value)?,
            "n_layers" => self.model.n_layers = parse_num(key, value)?,
            "d_ff" => self.model.d_ff = parse_num(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "experiment" => self.experiment.clone(),
            "ratio" => self.ratio.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr_max" => self.lr_max.to_string(),
            "warmup_fraction" => self.warmup_fraction.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "seed" => self.seed.to_string(),
            "quick_eval_every" => self.quick_eval_every.to_string(),
            "quick_eval_size" => self.quick_eval_size.to_string(),
            "eval_seed" => self.eval_seed.to_string(),
            "eval_workers" => self.eval_workers.to_string(),
            "data_seed" => self.data_seed.to_string(),
            "train_count" => self.train_count.to_string(),
            "val_count" => self.val_count.to_string(),
            "init_from" => fmt_path(&self.init_from),
            "resume_from" => fmt_path(&self.resume_from),
            "eval_only" => self.eval_only.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "precision" => match self.precision {
                Precision::F32 => "f32".into(),
                Precision::F64 => "f64".into(),
            },
            "vocab_size" => self.model.vocab_size.to_string(),
            "max_seq_len" => self.model.max_seq_len.to_string(),
            "d_model" => self.model.d_model.to_string(),
            "n_heads" => self.model.n_heads.to_string(),
            "n_layers" => self.model.n_layers.to_string(),
            "d_ff" => self.model.d_ff.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// All keys in [`KEYS`] order, one `key = value` per line.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|(k, _)| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        KEYS.iter()
            .map(|(k, _)| (*k, self.get(k).expect("known key")))
            .collect()
    }

    /// Range and divisibility checks that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("quick_eval_every", self.quick_eval_every),
            ("quick_eval_size", self.quick_eval_size),
            ("eval_workers", self.eval_workers),
            ("train_count", self.train_count),
            ("val_count", self.val_count),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::Invalid(format!("{k} must be positive")));
        }
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "lr_max must be positive, got {}",
                self.lr_max
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(ConfigError::Invalid(format!(
                "warmup_fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(ConfigError::Invalid("Adam hyperparameters out of range".into()));
        }
        if self.quick_eval_size > self.val_count {
            return Err(ConfigError::Invalid(format!(
                "quick_eval_size {} exceeds val_count {}",
                self.quick_eval_size, self.val_count
            )));
        }
        mixer::sub_batch_size(self.ratio, self.batch_size).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// `--help` text block listing every key and its default.
    pub fn help_text() -> String {
        let d = Self::default();
        let mut out = String::from("CONFIG KEYS (file `key = value`, or --set key=value):\n");
        for (k, desc) in KEYS {
            out.push_str(&format!("  {k:<18} {desc} [default: {}]\n", d.get(k).unwrap()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default_and_valid() {
        let c = TrainConfig::from_text("").unwrap();
        assert_eq!(c, TrainConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn indivisible_batch_is_rejected() {
        let c = TrainConfig::from_text("ratio = 3:1\nbatch_size = 62\n").unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("62") && err.contains('4'), "{err}");
    }

    #[test]
    fn comments_and_errors() {
        let c = TrainConfig::from_text("# header\nseed = 7 # trailing\n\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(
            TrainConfig::from_text("colour = red"),
            Err(ConfigError::UnknownKey("colour".into()))
        );
        assert_eq!(TrainConfig::from_text("seed 7"), Err(ConfigError::Syntax { line: 1 }));
        assert!(matches!(
            TrainConfig::from_text("epochs = three"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.apply_text("ratio = 15:1\ninit_from = /tmp/a.ckpt\nprecision = f64\nd_model = 32")
            .unwrap();
        let back = TrainConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn help_lists_exactly_the_accepted_keys() {
        let help = TrainConfig::help_text();
        let c = TrainConfig::default();
        for (k, _) in KEYS {
            assert!(help.contains(&format!("  {k} ")), "{k}");
            let mut probe = c.clone();
            probe.set(k, &c.get(k).unwrap()).unwrap();
        }
        assert!(c.get("not_a_key").is_none());
    }

    #[test]
    fn quick_eval_size_bounded_by_val() {
        let c = TrainConfig::from_text("val_count = 100\nquick_eval_size = 101").unwrap();
        assert!(c.validate().is_err());
    }
}
