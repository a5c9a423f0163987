//! Run configuration: one TOML document with a section per concern, plus
//! dotted `key=value` overrides.
//!
//! ```toml
//! seed = 0
//! dtype = "f32"
//!
//! [pretrain]
//! total_iters = 600
//! lr = 1e-3
//!
//! [controller]
//! enabled = true
//! noise = true
//!
//! [far]
//! weight_pretrain = 0.1
//! weight_finetune = 0.1
//! ```

use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::degrade::DegradationRanges;
use crate::error::{Error, Result};
use crate::evalbench::SweepConfig;
use crate::losses::LossWeights;
use crate::metrics::PerceptualConfig;
use crate::models::{LrnConfig, SrConfig};
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

/// Regularizer weights for the two stages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FarConfig {
    pub weight_pretrain: f64,
    pub weight_finetune: f64,
}

impl Default for FarConfig {
    fn default() -> Self {
        Self {
            weight_pretrain: 0.1,
            weight_finetune: 0.1,
        }
    }
}

impl FarConfig {
    pub const FINETUNE_RANGE: (f64, f64) = (0.05, 0.3);

    /// Zero disables a stage's regularizer; a nonzero finetuning weight must
    /// lie in [`FarConfig::FINETUNE_RANGE`].
    pub fn validate(&self) -> Result<()> {
        if !(self.weight_pretrain >= 0.0 && self.weight_pretrain.is_finite()) {
            return Err(Error::Config(format!(
                "far.weight_pretrain must be >= 0, got {}",
                self.weight_pretrain
            )));
        }
        let (lo, hi) = Self::FINETUNE_RANGE;
        let w = self.weight_finetune;
        if w != 0.0 && !(lo..=hi).contains(&w) {
            return Err(Error::Config(format!(
                "far.weight_finetune must be 0 or within [{lo}, {hi}], got {w}"
            )));
        }
        Ok(())
    }
}

/// Settings of the regularizer histogram experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FarHistConfig {
    pub patch_size: usize,
    pub patches: usize,
    pub bins: usize,
    pub presets: Vec<String>,
}

impl Default for FarHistConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            patches: 100,
            bins: 20,
            presets: vec!["blur2".into(), "noise15".into(), "jpeg40".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub dtype: Precision,
    pub deterministic: bool,
    pub lrn: LrnConfig,
    pub sr: SrConfig,
    pub degrade: DegradationRanges,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub sr_train: TrainConfig,
    pub controller: ControllerConfig,
    pub far: FarConfig,
    pub loss: LossWeights,
    pub perceptual: PerceptualConfig,
    pub interp: SweepConfig,
    pub far_hist: FarHistConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            dtype: Precision::F32,
            deterministic: false,
            lrn: LrnConfig::default(),
            sr: SrConfig::default(),
            degrade: DegradationRanges::default(),
            pretrain: TrainConfig::default(),
            finetune: TrainConfig::finetune(),
            sr_train: TrainConfig::desk_sr(),
            controller: ControllerConfig::default(),
            far: FarConfig::default(),
            loss: LossWeights::default(),
            perceptual: PerceptualConfig::default(),
            interp: SweepConfig::default(),
            far_hist: FarHistConfig::default(),
        }
    }
}

/// Base settings a config file is layered on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-size models and schedules.
    #[default]
    Paper,
    /// Tiny models and short schedules that finish on one CPU core.
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::Config(format!("unknown profile `{s}` (expected paper or desk)"))),
        }
    }
}

impl Config {
    pub fn desk() -> Self {
        Self {
            lrn: LrnConfig::desk(),
            sr: SrConfig::desk(),
            pretrain: TrainConfig::desk_pretrain(),
            finetune: TrainConfig::desk_finetune(),
            sr_train: TrainConfig::desk_sr(),
            far_hist: FarHistConfig {
                patch_size: 32,
                ..FarHistConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Paper => Self::default(),
            Profile::Desk => Self::desk(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype.dtype()
    }

    /// Layers `text` (TOML) and then `overrides` (`dotted.key=value`) over
    /// `base`. Override values are parsed as TOML and fall back to strings.
    pub fn layered(base: &Config, text: Option<&str>, overrides: &[String]) -> Result<Config> {
        let mut table = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
        let mut given = Vec::new();
        if let Some(text) = text {
            let file: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
            leaf_keys(&file, "", &mut given);
            merge(&mut table, file);
        }
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            let key = key.trim();
            set_dotted(&mut table, key, parse_value(raw.trim()))?;
            given.push(key.to_string());
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        // Keys the schema does not know are dropped by deserialization, so
        // anything missing after a round trip was never a config key.
        let back = toml::Table::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(k) = given.iter().find(|k| !has_dotted(&back, k)) {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, base: &Config, overrides: &[String]) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::layered(base, Some(&text), overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let scale = self.lrn.scale;
        if self.sr.scale != scale {
            return Err(Error::Config(format!(
                "sr.scale {} differs from lrn.scale {scale}",
                self.sr.scale
            )));
        }
        self.pretrain.validate(scale).map_err(|e| prefix("pretrain", e))?;
        self.finetune.validate(scale).map_err(|e| prefix("finetune", e))?;
        self.sr_train.validate(scale).map_err(|e| prefix("sr_train", e))?;
        self.far.validate()?;
        self.loss.validate()?;
        self.degrade.validate()?;
        if let Some(r) = self.interp.ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!("interp.ratios: {r} outside [0, 1]")));
        }
        for p in &self.far_hist.presets {
            p.parse::<crate::degrade::Preset>().map_err(|e| prefix("far_hist.presets", e))?;
        }
        if self.far_hist.bins == 0 || self.far_hist.patches == 0 || self.far_hist.patch_size == 0 {
            return Err(Error::Config("far_hist sizes must be >= 1".into()));
        }
        Ok(())
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{section}.{m}")),
        other => Error::Config(format!("{section}: {other}")),
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn merge(dst: &mut toml::Table, src: toml::Table) {
    for (k, v) in src {
        match (dst.get_mut(&k), v) {
            (Some(toml::Value::Table(d)), toml::Value::Table(s)) => merge(d, s),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
}

fn leaf_keys(t: &toml::Table, path: &str, out: &mut Vec<String>) {
    for (k, v) in t {
        let full = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match v {
            toml::Value::Table(inner) if !inner.is_empty() => leaf_keys(inner, &full, out),
            _ => out.push(full),
        }
    }
}

fn has_dotted(t: &toml::Table, key: &str) -> bool {
    let mut cur = t;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        match cur.get(*part) {
            Some(toml::Value::Table(inner)) if i + 1 < parts.len() => cur = inner,
            Some(_) if i + 1 == parts.len() => return true,
            _ => return false,
        }
    }
    false
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Config(format!("`{part}` in `{key}` is not a section"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for cfg in [Config::default(), Config::desk()] {
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            assert_eq!(Config::layered(&Config::default(), Some(&text), &[]).unwrap(), cfg);
        }
    }

    #[test]
    fn finetune_defaults_follow_the_reference_schedule() {
        let f = Config::default().finetune;
        assert!((2e-6..=5e-6).contains(&f.lr));
        assert!((300..=600).contains(&f.total_iters));
        assert_eq!(Config::default().pretrain.ema_decay, 0.999);
        assert_eq!(Config::default().far.weight_finetune, 0.1);
    }

    #[test]
    fn file_then_overrides() {
        let text = "seed = 5\n[controller]\nenabled = false\n[pretrain]\nlr = 0.5\n";
        let cfg = Config::layered(
            &Config::desk(),
            Some(text),
            &["pretrain.lr=0.25".into(), "controller.noise=false".into(), "dtype=f64".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 5);
        assert!(!cfg.controller.enabled && !cfg.controller.noise);
        assert_eq!(cfg.pretrain.lr, 0.25);
        assert_eq!(cfg.dtype, Precision::F64);
        assert_eq!(cfg.lrn, LrnConfig::desk());
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let base = Config::desk();
        assert!(Config::layered(&base, Some("bogus = 1"), &[]).is_err());
        assert!(Config::layered(&base, None, &["pretrain.nope=1".into()]).is_err());
        assert!(Config::layered(&base, None, &["pretrain.lr".into()]).is_err());
        assert!(Config::layered(&base, None, &["pretrain.ema_decay=1.0".into()]).is_err());
        assert!(Config::layered(&base, None, &["far.weight_finetune=0.5".into()]).is_err());
        assert!(Config::layered(&base, None, &["far.weight_finetune=0".into()]).is_ok());
        assert!(Config::layered(&base, None, &["pretrain.patch_size=30".into()]).is_err());
        assert!(Config::layered(&base, None, &["interp.ratios=[0.0, 2.0]".into()]).is_err());
        // Optional paths absent from the defaults are still known keys.
        let cfg = Config::layered(&base, Some("[perceptual]\nweights = \"w.safetensors\""), &[]).unwrap();
        assert_eq!(cfg.perceptual.weights.as_deref(), Some(Path::new("w.safetensors")));
    }
}
