//! Run settings and the `key = value` configuration file.
//!
//! Resolution order is defaults, then the config file, then command-line
//! flags. A config file holds one assignment per line; `#` starts a comment,
//! blank lines are ignored, and keys are the long flag names with `_` in
//! place of `-`:
//!
//! ```text
//! # sweep point 3
//! bits = 32
//! inv_epsilon = 1.0
//! alpha_mode = focal-pt
//! hidden = 64,32
//! ```
//!
//! Unknown or repeated keys are rejected with the offending line number.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use crate::encoder::{Activation, EncoderSpec};
use crate::error::{Error, Result};
use crate::loss::{AlphaMode, LossConfig, WeightGradMode};
use crate::train::{LrSchedule, TrainConfig};

impl FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "degree" => Ok(AlphaMode::Degree),
            "unit" => Ok(AlphaMode::Unit),
            "focal-pt" => Ok(AlphaMode::FocalPt),
            _ => Err(Error::InvalidConfig(format!(
                "alpha mode must be degree, unit or focal-pt, got {s:?}"
            ))),
        }
    }
}

impl FromStr for WeightGradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detached" => Ok(WeightGradMode::Detached),
            "full" => Ok(WeightGradMode::Full),
            _ => Err(Error::InvalidConfig(format!(
                "weight-grad mode must be detached or full, got {s:?}"
            ))),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::InvalidConfig(format!("activation must be relu or tanh, got {s:?}"))),
        }
    }
}

/// Parses a comma-separated list such as `64,32`. An empty string is an
/// empty list.
pub fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("bad list element {p:?}")))
        .collect()
}

/// Everything a training run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub bits: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub include_self_pairs: bool,
    pub map_at: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            bits: 16,
            hidden: vec![64],
            activation: Activation::Relu,
            include_self_pairs: false,
            map_at: 100,
        }
    }
}

pub const KEYS: &[&str] = &[
    "bits",
    "beta",
    "gamma",
    "inv_epsilon",
    "alpha_mode",
    "weight_grad",
    "batch",
    "epochs",
    "lr",
    "momentum",
    "weight_decay",
    "seed",
    "hidden",
    "activation",
    "fch_lr_multiplier",
    "lr_step_factor",
    "lr_step_every",
    "include_self_pairs",
    "map_at",
];

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse {key} = {raw:?}")))
}

impl Settings {
    pub fn encoder_spec(&self, input_dim: usize) -> EncoderSpec {
        EncoderSpec {
            input_dim,
            hidden: self.hidden.clone(),
            code_bits: self.bits,
            activation: self.activation,
        }
    }

    /// Assigns one key. Keys are those in [`KEYS`].
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let raw = raw.trim();
        match key {
            "bits" => self.bits = value(key, raw)?,
            "beta" => self.loss.beta = value(key, raw)?,
            "gamma" => self.loss.gamma = value(key, raw)?,
            "inv_epsilon" => self.loss.inv_epsilon = value(key, raw)?,
            "alpha_mode" => self.loss.alpha_mode = raw.parse()?,
            "weight_grad" => self.loss.weight_grad_mode = raw.parse()?,
            "batch" => self.train.batch_size = value(key, raw)?,
            "epochs" => self.train.epochs = value(key, raw)?,
            "lr" => self.train.lr = value(key, raw)?,
            "momentum" => self.train.momentum = value(key, raw)?,
            "weight_decay" => self.train.weight_decay = value(key, raw)?,
            "seed" => self.train.seed = value(key, raw)?,
            "hidden" => self.hidden = parse_list(raw).map_err(Error::InvalidConfig)?,
            "activation" => self.activation = raw.parse()?,
            "fch_lr_multiplier" => self.train.fch_lr_multiplier = value(key, raw)?,
            "lr_step_factor" => {
                let factor = value(key, raw)?;
                self.train.lr_schedule = match self.train.lr_schedule {
                    LrSchedule::Step { every, .. } => LrSchedule::Step { factor, every },
                    LrSchedule::Constant => LrSchedule::Step { factor, every: usize::MAX },
                };
            }
            "lr_step_every" => {
                let every = value(key, raw)?;
                self.train.lr_schedule = match self.train.lr_schedule {
                    LrSchedule::Step { factor, .. } => LrSchedule::Step { factor, every },
                    LrSchedule::Constant => LrSchedule::Step { factor: 1.0, every },
                };
            }
            "include_self_pairs" => self.include_self_pairs = value(key, raw)?,
            "map_at" => self.map_at = value(key, raw)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a config file's assignments on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, raw) = content.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {line_no}: expected `key = value`"))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::InvalidConfig(format!("line {line_no}: repeated key {key:?}")));
            }
            self.set(key, raw)
                .map_err(|e| Error::InvalidConfig(format!("line {line_no}: {}", strip(e))))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.train.validate()?;
        if self.bits == 0 {
            return Err(Error::InvalidConfig("bits must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be >= 1".into()));
        }
        if self.map_at == 0 {
            return Err(Error::InvalidConfig("map_at must be >= 1".into()));
        }
        Ok(())
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::InvalidConfig(m) => m,
        other => other.to_string(),
    }
}
