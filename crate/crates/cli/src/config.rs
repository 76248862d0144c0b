//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key must be one of
//! [`KEYS`]; values are parsed when set, so errors point at the offending
//! key. Overrides go through the same [`RunConfig::set`] after the file has
//! been read, so they always win.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mans_core::training::{AdamConfig, Batching, TrainConfig};
use mans_core::{Norm, SamplerConfig, Strategy};

use crate::error::CliError;

pub const KEYS: &[&str] = &[
    "train_path",
    "valid_path",
    "test_path",
    "feature_path",
    "output_dir",
    "dim",
    "feature_dim",
    "margin",
    "learning_rate",
    "epochs",
    "num_batches",
    "batch_size",
    "k",
    "norm",
    "seed",
    "strategy",
    "beta1",
    "beta2",
    "adam_decay1",
    "adam_decay2",
    "adam_eps",
    "renormalize",
    "checkpoint_every",
    "train_filled_features",
    "filter_false_negatives",
    "eval_lp",
    "eval_tc",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_path: Option<PathBuf>,
    pub valid_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub feature_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub dim: usize,
    pub feature_dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub num_batches: Option<usize>,
    pub batch_size: Option<usize>,
    pub k: usize,
    pub norm: Norm,
    pub seed: u64,
    pub strategy: Strategy,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_decay1: f64,
    pub adam_decay2: f64,
    pub adam_eps: f64,
    pub renormalize: bool,
    pub checkpoint_every: usize,
    pub train_filled_features: bool,
    pub filter_false_negatives: bool,
    pub eval_lp: bool,
    pub eval_tc: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let adam = AdamConfig::default();
        let sampler = SamplerConfig::default();
        RunConfig {
            train_path: None,
            valid_path: None,
            test_path: None,
            feature_path: None,
            output_dir: PathBuf::from("run"),
            dim: train.dim,
            feature_dim: 4096,
            margin: train.margin,
            learning_rate: adam.learning_rate,
            epochs: train.epochs,
            num_batches: None,
            batch_size: None,
            k: sampler.k,
            norm: train.norm,
            seed: train.seed,
            strategy: sampler.strategy,
            beta1: sampler.beta1,
            beta2: sampler.beta2,
            adam_decay1: adam.decay1,
            adam_decay2: adam.decay2,
            adam_eps: adam.eps,
            renormalize: train.renormalize,
            checkpoint_every: train.checkpoint_every,
            train_filled_features: train.train_filled_features,
            filter_false_negatives: sampler.filter_false_negatives,
            eval_lp: true,
            eval_tc: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Validation(format!("{key} = {value:?}: {e}")))
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Validation(format!(
                    "{}:{}: expected `key = value`, found {line:?}",
                    path.display(),
                    i + 1
                ))
            })?;
            config.set(key.trim(), value.trim()).map_err(|e| match e {
                CliError::Validation(m) => {
                    CliError::Validation(format!("{}:{}: {m}", path.display(), i + 1))
                }
                other => other,
            })?;
        }
        Ok(config)
    }

    /// Parses and stores one value. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "train_path" => self.train_path = parse_path(value),
            "valid_path" => self.valid_path = parse_path(value),
            "test_path" => self.test_path = parse_path(value),
            "feature_path" => self.feature_path = parse_path(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "dim" => self.dim = parse(key, value)?,
            "feature_dim" => self.feature_dim = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "num_batches" => self.num_batches = Some(parse(key, value)?),
            "batch_size" => self.batch_size = Some(parse(key, value)?),
            "k" => self.k = parse(key, value)?,
            "norm" => self.norm = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "strategy" => self.strategy = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_decay1" => self.adam_decay1 = parse(key, value)?,
            "adam_decay2" => self.adam_decay2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "renormalize" => self.renormalize = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "train_filled_features" => self.train_filled_features = parse(key, value)?,
            "filter_false_negatives" => self.filter_false_negatives = parse(key, value)?,
            "eval_lp" => self.eval_lp = parse(key, value)?,
            "eval_tc" => self.eval_tc = parse(key, value)?,
            _ => return Err(CliError::Validation(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "train_path" => show_path(&self.train_path),
            "valid_path" => show_path(&self.valid_path),
            "test_path" => show_path(&self.test_path),
            "feature_path" => show_path(&self.feature_path),
            "output_dir" => self.output_dir.display().to_string(),
            "dim" => self.dim.to_string(),
            "feature_dim" => self.feature_dim.to_string(),
            "margin" => self.margin.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "epochs" => self.epochs.to_string(),
            "num_batches" => self.num_batches?.to_string(),
            "batch_size" => self.batch_size?.to_string(),
            "k" => self.k.to_string(),
            "norm" => self.norm.to_string(),
            "seed" => self.seed.to_string(),
            "strategy" => self.strategy.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_decay1" => self.adam_decay1.to_string(),
            "adam_decay2" => self.adam_decay2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "renormalize" => self.renormalize.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "train_filled_features" => self.train_filled_features.to_string(),
            "filter_false_negatives" => self.filter_false_negatives.to_string(),
            "eval_lp" => self.eval_lp.to_string(),
            "eval_tc" => self.eval_tc.to_string(),
            _ => return None,
        })
    }

    /// Every key in canonical order. Reading this text back yields the same
    /// configuration.
    pub fn to_effective(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            if let Some(value) = self.get(key) {
                out.push_str(&format!("{key} = {value}\n"));
            }
        }
        out
    }

    pub fn batching(&self) -> Batching {
        match (self.num_batches, self.batch_size) {
            (_, Some(size)) => Batching::BatchSize(size),
            (Some(n), None) => Batching::NumBatches(n),
            (None, None) => Batching::NumBatches(400),
        }
    }

    /// Checks everything that does not need the dataset. Training commands
    /// additionally call [`require_data`](Self::require_data).
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.num_batches.is_some() && self.batch_size.is_some() {
            return bad("num_batches and batch_size are mutually exclusive; set only one".into());
        }
        if self.strategy.is_modality_aware() && self.feature_path.is_none() {
            return bad(format!(
                "feature_path is required for strategy {}",
                self.strategy
            ));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        self.train_config().validate()?;
        Ok(())
    }

    pub fn require_data(&self) -> Result<(&Path, &Path, &Path), CliError> {
        fn need<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
            p.as_deref()
                .ok_or_else(|| CliError::Validation(format!("{key} is required")))
        }
        Ok((
            need(&self.train_path, "train_path")?,
            need(&self.valid_path, "valid_path")?,
            need(&self.test_path, "test_path")?,
        ))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            margin: self.margin,
            epochs: self.epochs,
            batching: self.batching(),
            norm: self.norm,
            seed: self.seed,
            sampler: SamplerConfig {
                strategy: self.strategy,
                beta1: self.beta1,
                beta2: self.beta2,
                k: self.k,
                total_epochs: self.epochs,
                seed: self.seed,
                filter_false_negatives: self.filter_false_negatives,
            },
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                decay1: self.adam_decay1,
                decay2: self.adam_decay2,
                eps: self.adam_eps,
            },
            renormalize: self.renormalize,
            checkpoint_every: self.checkpoint_every,
            train_filled_features: self.train_filled_features,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_text_round_trips() {
        let mut c = RunConfig::default();
        c.set("strategy", "mans-h").unwrap();
        c.set("beta2", "0.25").unwrap();
        c.set("feature_path", "f.mmkf").unwrap();
        c.set("batch_size", "64").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, c.to_effective()).unwrap();
        assert_eq!(RunConfig::from_file(&path).unwrap(), c);
    }

    #[test]
    fn comments_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, "# header\n\ndim = 16  # inline\n").unwrap();
        assert_eq!(RunConfig::from_file(&path).unwrap().dim, 16);
        fs::write(&path, "dim = 16\nlearning_rat = 0.1\n").unwrap();
        let err = RunConfig::from_file(&path).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("learning_rat"), "{err}");
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = RunConfig::default();
        c.set("strategy", "mans_v").unwrap();
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("feature_path"));
        c.set("feature_path", "x.mmkf").unwrap();
        c.set("beta2", "1.5").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("beta2"));
        c.set("beta2", "0.5").unwrap();
        c.set("num_batches", "4").unwrap();
        c.set("batch_size", "4").unwrap();
        assert!(c.validate().is_err());
        assert!(c.set("dim", "lots").is_err());
    }
}
