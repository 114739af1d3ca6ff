use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Architecture variants: the full model and the five ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Ablation {
    #[default]
    Full,
    /// No deraining U-Net; a conv head maps the degradation maps to a rain residual.
    S1,
    /// No encoder and no constraint network.
    S2,
    /// Encoder kept but never pretrained (no constraint network).
    S3,
    /// Plain convolutions instead of deformable ones in the encoder.
    S4,
    /// Concatenation instead of interaction blocks.
    S5,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [Self::Full, Self::S1, Self::S2, Self::S3, Self::S4, Self::S5];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::S1 => "s1",
            Self::S2 => "s2",
            Self::S3 => "s3",
            Self::S4 => "s4",
            Self::S5 => "s5",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}` (expected full, s1..s5)")))
    }
}

/// Architectural hyperparameters. Serialises to a flat `key=value` text file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub num_scales: usize,
    pub mpb_dilations: Vec<usize>,
    pub rdb_count: usize,
    pub rdb_growth: usize,
    pub msib_rb_depths: Vec<usize>,
    pub ca_reduction: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_base(16)
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|p| parse_usize(key, p.trim()))
        .collect()
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}` expects a non-negative integer, got `{v}`")))
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl ModelConfig {
    /// Defaults with `rdb_growth = base / 2`.
    pub fn with_base(base_channels: usize) -> Self {
        Self {
            base_channels,
            num_scales: 3,
            mpb_dilations: vec![2, 4],
            rdb_count: 3,
            rdb_growth: (base_channels / 2).max(1),
            msib_rb_depths: vec![1, 2],
            ca_reduction: 4,
            ablation: Ablation::Full,
        }
    }

    /// Channel width at scale `level` (0 = full resolution).
    pub fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_scales != 3 {
            return fail(format!("num_scales must be 3, got {}", self.num_scales));
        }
        if self.base_channels == 0 || self.rdb_count == 0 || self.rdb_growth == 0 || self.ca_reduction == 0 {
            return fail("base_channels, rdb_count, rdb_growth and ca_reduction must be positive".into());
        }
        if self.mpb_dilations.contains(&0) {
            return fail("mpb_dilations must be positive".into());
        }
        if self.msib_rb_depths.is_empty() || self.msib_rb_depths.contains(&0) {
            return fail("msib_rb_depths must be a non-empty list of positive depths".into());
        }
        let branches = 2 + self.mpb_dilations.len();
        for level in 0..=self.num_scales {
            let widths = [branches * self.width(level), 2 * self.width(level)];
            if let Some(w) = widths.iter().find(|&&w| w % self.ca_reduction != 0) {
                return fail(format!("ca_reduction {} does not divide attention width {w}", self.ca_reduction));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "base_channels={}\nnum_scales={}\nmpb_dilations={}\nrdb_count={}\nrdb_growth={}\nmsib_rb_depths={}\nca_reduction={}\nablation={}\n",
            self.base_channels,
            self.num_scales,
            join(&self.mpb_dilations),
            self.rdb_count,
            self.rdb_growth,
            join(&self.msib_rb_depths),
            self.ca_reduction,
            self.ablation,
        )
    }

    /// Sets one `key=value` field. `rdb_growth` is not re-derived here.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (k, v) = (key.trim(), value.trim());
        match k {
            "base_channels" => self.base_channels = parse_usize(k, v)?,
            "num_scales" => self.num_scales = parse_usize(k, v)?,
            "mpb_dilations" => self.mpb_dilations = parse_list(k, v)?,
            "rdb_count" => self.rdb_count = parse_usize(k, v)?,
            "rdb_growth" => self.rdb_growth = parse_usize(k, v)?,
            "msib_rb_depths" => self.msib_rb_depths = parse_list(k, v)?,
            "ca_reduction" => self.ca_reduction = parse_usize(k, v)?,
            "ablation" => self.ablation = v.parse()?,
            other => return Err(Error::Config(format!("unknown model key `{other}`"))),
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 8] = [
        "base_channels",
        "num_scales",
        "mpb_dilations",
        "rdb_count",
        "rdb_growth",
        "msib_rb_depths",
        "ca_reduction",
        "ablation",
    ];

    /// Parses `key=value` lines over the defaults. Blank lines and `#`
    /// comments are skipped; unknown keys are errors. When `base_channels`
    /// is given without `rdb_growth`, the growth follows `base / 2`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut growth = None;
        for (k, v) in config_lines(text)? {
            if k == "rdb_growth" {
                growth = Some(parse_usize(k, v)?);
            } else {
                cfg.set(k, v)?;
            }
        }
        cfg.rdb_growth = growth.unwrap_or((cfg.base_channels / 2).max(1));
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `key=value` pairs of a config text, skipping blank lines and `#` comments.
pub fn config_lines(text: &str) -> Result<Vec<(&str, &str)>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|line| {
            line.split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{line}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ModelConfig::default();
        assert_eq!(c.base_channels, 16);
        assert_eq!(c.rdb_growth, 8);
        assert_eq!(c.mpb_dilations, vec![2, 4]);
        assert_eq!(c.msib_rb_depths, vec![1, 2]);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip_and_overrides() {
        let mut c = ModelConfig::with_base(8);
        c.ablation = Ablation::S4;
        c.mpb_dilations = vec![2, 3, 5];
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
        let d = ModelConfig::from_text("# desk\nbase_channels = 32\n").unwrap();
        assert_eq!((d.base_channels, d.rdb_growth), (32, 16));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ModelConfig::from_text("num_scales=4").is_err());
        assert!(ModelConfig::from_text("colour=blue").is_err());
        assert!(ModelConfig::from_text("ca_reduction=3").is_err());
        assert!(ModelConfig::from_text("ablation=s9").is_err());
        assert!(ModelConfig::from_text("rdb_count=0").is_err());
    }

    #[test]
    fn ablation_names_parse() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert_eq!("S3".parse::<Ablation>().unwrap(), Ablation::S3);
    }
}
