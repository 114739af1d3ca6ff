use std::fmt;
use std::str::FromStr;

use crate::arch::config::config_lines;
use crate::arch::ModelConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Encoder and constraint network under the constraint loss.
    Constraint,
    /// Restorer under the deraining loss with the encoder frozen.
    Derain,
    /// Everything under the weighted sum of both losses.
    Joint,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Self::Constraint, Self::Derain, Self::Joint];

    pub fn name(self) -> &'static str {
        match self {
            Self::Constraint => "constraint",
            Self::Derain => "derain",
            Self::Joint => "joint",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Self::Constraint => 0,
            Self::Derain => 1,
            Self::Joint => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.tag() == tag)
            .ok_or_else(|| Error::Format(format!("unknown phase tag {tag}")))
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown phase `{s}` (expected constraint, derain or joint)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    TwoPhase,
    Joint,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "two-phase" | "twophase" => Ok(Self::TwoPhase),
            "joint" => Ok(Self::Joint),
            _ => Err(Error::Config(format!("unknown mode `{s}` (expected two-phase or joint)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_final: f64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub patch_size: usize,
    /// Weight of the deraining loss in joint mode.
    pub lambda1: f64,
    /// Weight of the constraint loss in joint mode.
    pub lambda2: f64,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 3e-4,
            lr_final: 1e-6,
            total_steps: 2000,
            batch_size: 1,
            patch_size: 64,
            lambda1: 1.0,
            lambda2: 1.0,
            seed: 0,
            mode: Mode::TwoPhase,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr_final <= self.lr_init) || self.lr_final < 0.0 {
            return fail("learning rates must satisfy 0 <= lr_final <= lr_init");
        }
        if self.total_steps == 0 || self.batch_size == 0 {
            return fail("total_steps and batch_size must be positive");
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(4) {
            return fail("patch_size must be a positive multiple of 4");
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 9] = [
        "lr_init",
        "lr_final",
        "total_steps",
        "batch_size",
        "patch_size",
        "lambda1",
        "lambda2",
        "seed",
        "mode",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("`{k}` has an invalid value `{v}`")))
        }
        let (k, v) = (key.trim(), value.trim());
        match k {
            "lr_init" => self.lr_init = num(k, v)?,
            "lr_final" => self.lr_final = num(k, v)?,
            "total_steps" => self.total_steps = num(k, v)?,
            "batch_size" => self.batch_size = num(k, v)?,
            "patch_size" => self.patch_size = num(k, v)?,
            "lambda1" => self.lambda1 = num(k, v)?,
            "lambda2" => self.lambda2 = num(k, v)?,
            "seed" => self.seed = num(k, v)?,
            "mode" => self.mode = v.parse()?,
            other => return Err(Error::Config(format!("unknown training key `{other}`"))),
        }
        Ok(())
    }
}

/// Applies a `key=value` config text holding model and training keys on top
/// of `model` and `train`. Setting `base_channels` without `rdb_growth`
/// re-derives the growth as `base / 2`.
pub fn apply_config_text(text: &str, model: &mut ModelConfig, train: &mut TrainConfig) -> Result<()> {
    let lines = config_lines(text)?;
    for &(k, v) in &lines {
        if TrainConfig::KEYS.contains(&k) {
            train.set(k, v)?;
        } else {
            model.set(k, v)?;
        }
    }
    let keys: Vec<&str> = lines.iter().map(|(k, _)| *k).collect();
    if keys.contains(&"base_channels") && !keys.contains(&"rdb_growth") {
        model.rdb_growth = (model.base_channels / 2).max(1);
    }
    model.validate()?;
    train.validate()
}

/// `lr_final + (lr_init - lr_final) (1 + cos(pi step / total)) / 2`.
pub fn cosine_lr(step: u64, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::InvalidArgument(format!(
            "step {step} is past the schedule end {}",
            cfg.total_steps
        )));
    }
    if step == cfg.total_steps {
        return Ok(cfg.lr_final);
    }
    let t = step as f64 / cfg.total_steps as f64;
    Ok(cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + (std::f64::consts::PI * t).cos()))
}
