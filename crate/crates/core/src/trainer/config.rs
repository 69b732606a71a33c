//! Plain-text `key = value` configuration files.

use std::fmt::Display;
use std::str::FromStr;

use super::{ArchitectureConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::neural::DownsampleMode;

/// Ordered `key = value` pairs; `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

pub fn parse_key_values(text: &str) -> Result<KeyValues> {
    let mut kv = KeyValues::default();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("config line {}: expected key = value, got {line:?}", no + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::invalid(format!("config line {}: empty key", no + 1)));
        }
        kv.set(k, v.trim());
    }
    Ok(kv)
}

impl KeyValues {
    /// Later values replace earlier ones for the same key.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::invalid(format!("config key {key}: cannot parse {v:?}"))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn extend(&mut self, other: &KeyValues) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn set_from<T: FromStr>(kv: &KeyValues, key: &str, slot: &mut T) -> Result<()> {
    if let Some(v) = kv.parsed(key)? {
        *slot = v;
    }
    Ok(())
}

pub(crate) fn parse_downsample(s: &str) -> Option<DownsampleMode> {
    match s {
        "avg-pool" => Some(DownsampleMode::AvgPool),
        "stride-conv" => Some(DownsampleMode::StrideConv),
        _ => None,
    }
}

pub(crate) fn downsample_name(d: DownsampleMode) -> &'static str {
    match d {
        DownsampleMode::AvgPool => "avg-pool",
        DownsampleMode::StrideConv => "stride-conv",
    }
}

impl ArchitectureConfig {
    pub const KEYS: [&'static str; 7] = ["m", "side", "unet_levels", "base_channels", "kernel", "downsample", "residual"];

    /// Overrides the fields present in `kv`. A new `side` without an explicit
    /// `unet_levels` resets the level count to its default.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        set_from(kv, "m", &mut self.m)?;
        if let Some(side) = kv.parsed("side")? {
            self.side = side;
            self.unet_levels = Self::default_levels(side);
        }
        set_from(kv, "unet_levels", &mut self.unet_levels)?;
        set_from(kv, "base_channels", &mut self.base_channels)?;
        set_from(kv, "kernel", &mut self.kernel)?;
        set_from(kv, "residual", &mut self.residual)?;
        if let Some(d) = kv.get("downsample") {
            self.downsample =
                parse_downsample(d).ok_or_else(|| Error::invalid(format!("downsample must be avg-pool or stride-conv, got {d}")))?;
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("m", self.m);
        kv.set("side", self.side);
        kv.set("unet_levels", self.unet_levels);
        kv.set("base_channels", self.base_channels);
        kv.set("kernel", self.kernel);
        kv.set("downsample", downsample_name(self.downsample));
        kv.set("residual", self.residual);
        kv
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 14] = [
        "epochs",
        "batch_size",
        "lr",
        "sigma_train",
        "w1",
        "w2",
        "w3",
        "beta_alpha",
        "beta_beta",
        "freeze_patience",
        "freeze_rel_tol",
        "force_freeze_fraction",
        "seed",
        "total_steps",
    ];

    /// Overrides the fields present in `kv`. `total_steps` is derived and ignored.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        set_from(kv, "epochs", &mut self.epochs)?;
        set_from(kv, "batch_size", &mut self.batch_size)?;
        set_from(kv, "lr", &mut self.lr)?;
        set_from(kv, "sigma_train", &mut self.sigma_train)?;
        set_from(kv, "w1", &mut self.weights.w1)?;
        set_from(kv, "w2", &mut self.weights.w2)?;
        set_from(kv, "w3", &mut self.weights.w3)?;
        set_from(kv, "beta_alpha", &mut self.beta_alpha)?;
        set_from(kv, "beta_beta", &mut self.beta_beta)?;
        set_from(kv, "freeze_patience", &mut self.freeze_patience)?;
        set_from(kv, "freeze_rel_tol", &mut self.freeze_rel_tol)?;
        set_from(kv, "force_freeze_fraction", &mut self.force_freeze_fraction)?;
        set_from(kv, "seed", &mut self.seed)?;
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.lr);
        kv.set("sigma_train", self.sigma_train);
        kv.set("w1", self.weights.w1);
        kv.set("w2", self.weights.w2);
        kv.set("w3", self.weights.w3);
        kv.set("beta_alpha", self.beta_alpha);
        kv.set("beta_beta", self.beta_beta);
        kv.set("freeze_patience", self.freeze_patience);
        kv.set("freeze_rel_tol", self.freeze_rel_tol);
        kv.set("force_freeze_fraction", self.force_freeze_fraction);
        kv.set("seed", self.seed);
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let kv = parse_key_values("# run\nepochs = 3\n\nlr=0.01 # faster\nepochs = 5\n").unwrap();
        assert_eq!(kv.get("epochs"), Some("5"));
        assert_eq!(kv.get("lr"), Some("0.01"));
        assert_eq!(kv.keys().count(), 2);
        assert!(parse_key_values("just words\n").is_err());
        assert!(parse_key_values("= 3\n").is_err());
    }

    #[test]
    fn train_config_round_trip() {
        let mut cfg = TrainConfig { epochs: 7, lr: 3e-4, sigma_train: 0.05, seed: 11, ..Default::default() };
        cfg.weights.w3 = 2.5;
        let text = cfg.to_key_values().render();
        let mut back = TrainConfig::default();
        back.apply(&parse_key_values(&text).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn arch_side_resets_levels() {
        let mut a = ArchitectureConfig::new(100, 64);
        assert_eq!(a.unet_levels, 3);
        a.apply(&parse_key_values("side = 128\ndownsample = stride-conv").unwrap()).unwrap();
        assert_eq!((a.side, a.unet_levels, a.downsample), (128, 4, DownsampleMode::StrideConv));
        a.apply(&parse_key_values("side = 32\nunet_levels = 1").unwrap()).unwrap();
        assert_eq!(a.unet_levels, 1);
        let back = {
            let mut b = ArchitectureConfig::new(1, 16);
            b.apply(&a.to_key_values()).unwrap();
            b
        };
        assert_eq!(back, a);
        assert!(a.apply(&parse_key_values("downsample = bilinear").unwrap()).is_err());
        assert!(a.apply(&parse_key_values("kernel = three").unwrap()).is_err());
    }
}
