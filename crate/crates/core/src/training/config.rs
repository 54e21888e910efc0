use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::AU_IDS;

/// Multipliers fitted toward 0.5 marginals on the reference population
/// (see [`super::calibrate_multipliers`]).
pub const DEFAULT_MULTIPLIERS: [f64; 12] = [4.0, 4.3, 4.0, 1.0, 1.0, 1.0, 1.0, 1.0, 5.55, 1.0, 4.0, 4.0];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Sampling multiplier per AU column.
    pub minority_multipliers: [f64; 12],
    /// Weighted draws with replacement when true, a shuffled pass per epoch otherwise.
    pub balance: bool,
    pub eval_every: usize,
    pub stop_at_f1: Option<f64>,
    /// Fraction of subjects held out for per-epoch metrics (CLI only).
    pub holdout_fraction: f64,
    pub width_scale: f64,
    pub dropout_rate: Option<f64>,
    pub freeze_groups: Option<Vec<usize>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            momentum: 0.9,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            minority_multipliers: DEFAULT_MULTIPLIERS,
            balance: true,
            eval_every: 1,
            stop_at_f1: None,
            holdout_fraction: 0.0,
            width_scale: 0.125,
            dropout_rate: None,
            freeze_groups: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    balance: Option<bool>,
    eval_every: Option<usize>,
    stop_at_f1: Option<f64>,
    holdout_fraction: Option<f64>,
    width_scale: Option<f64>,
    dropout_rate: Option<f64>,
    freeze_groups: Option<Vec<usize>>,
}

impl TrainConfig {
    /// Parses the flat TOML schema; `multiplier_au<N>` keys set per-AU multipliers.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::invalid("train config", e.to_string()))?;
        let mut cfg = TrainConfig::default();
        let keys: Vec<String> = table.keys().filter(|k| k.starts_with("multiplier_au")).cloned().collect();
        for key in keys {
            let value = table.remove(&key).expect("key listed");
            let au: u8 = key["multiplier_au".len()..]
                .parse()
                .map_err(|_| Error::invalid("train config", format!("{key}: not an AU number")))?;
            let col = AU_IDS
                .iter()
                .position(|&a| a == au)
                .ok_or_else(|| Error::invalid("train config", format!("{key}: AU{au} is not detected")))?;
            cfg.minority_multipliers[col] = value
                .as_float()
                .or_else(|| value.as_integer().map(|i| i as f64))
                .ok_or_else(|| Error::invalid("train config", format!("{key}: expected a number")))?;
        }
        let file: FileConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::invalid("train config", e.to_string()))?;
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = file.$f { cfg.$f = v; })* };
        }
        take!(learning_rate, momentum, epochs, batch_size, seed, balance, eval_every, holdout_fraction, width_scale);
        cfg.stop_at_f1 = file.stop_at_f1.or(cfg.stop_at_f1);
        cfg.dropout_rate = file.dropout_rate.or(cfg.dropout_rate);
        cfg.freeze_groups = file.freeze_groups.or(cfg.freeze_groups);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Invalid { reason, .. } => Error::Parse { path: path.to_path_buf(), reason },
            other => other,
        })
    }

    /// Checks every field and reports all offenders together.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            bad.push(format!("learning_rate {} must be finite and >= 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bad.push(format!("momentum {} not in [0, 1)", self.momentum));
        }
        if self.epochs == 0 {
            bad.push("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            bad.push("batch_size must be >= 1".into());
        }
        if self.eval_every == 0 {
            bad.push("eval_every must be >= 1".into());
        }
        for (au, m) in AU_IDS.iter().zip(&self.minority_multipliers) {
            if !(1.0..=7.0).contains(m) {
                bad.push(format!("multiplier_au{au} {m} not in [1, 7]"));
            }
        }
        if let Some(f) = self.stop_at_f1 {
            if !(0.0..=1.0).contains(&f) {
                bad.push(format!("stop_at_f1 {f} not in [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            bad.push(format!("holdout_fraction {} not in [0, 1)", self.holdout_fraction));
        }
        if !(self.width_scale > 0.0 && self.width_scale <= 1.0) {
            bad.push(format!("width_scale {} not in (0, 1]", self.width_scale));
        }
        if let Some(d) = self.dropout_rate {
            if !(0.0..1.0).contains(&d) {
                bad.push(format!("dropout_rate {d} not in [0, 1)"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid("train config", bad.join("; ")))
        }
    }
}
