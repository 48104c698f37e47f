//! `key = value` training configuration.

use std::fmt::Write as _;

use crate::codec::ColorSpace;
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, Init, Scheme};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub repeat: usize,
    pub n_hidden: usize,
    pub hidden_channel: usize,
    pub lr_base: f32,
    pub decay: f32,
    /// Mixture components for the final block.
    pub k: usize,
    pub seed: u64,
    pub colorspace: ColorSpace,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub prior_net_enabled: bool,
    pub scheme: Scheme,
    /// `legall`, `haar`, `zero` or `random`.
    pub init: String,
    /// Fraction of patches held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            repeat: 2,
            n_hidden: 2,
            hidden_channel: 64,
            lr_base: 0.001,
            decay: 0.99,
            k: 5,
            seed: 0,
            colorspace: ColorSpace::Rgb,
            patch_size: 32,
            patch_stride: 32,
            prior_net_enabled: false,
            scheme: Scheme::Quadrant,
            init: "legall".into(),
            val_fraction: 0.1,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "bad value {v:?} for {key} (expected true/false)"
        ))),
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, v) = (key.trim(), value.trim());
            match key {
                "epochs" => c.epochs = parse_value(key, v)?,
                "batch_size" => c.batch_size = parse_value(key, v)?,
                "repeat" => c.repeat = parse_value(key, v)?,
                "n_hidden" => c.n_hidden = parse_value(key, v)?,
                "hidden_channel" => c.hidden_channel = parse_value(key, v)?,
                "lr_base" | "lr" => c.lr_base = parse_value(key, v)?,
                "decay" => c.decay = parse_value(key, v)?,
                "K" | "k" => c.k = parse_value(key, v)?,
                "seed" => c.seed = parse_value(key, v)?,
                "colorspace" => {
                    c.colorspace = match v.to_ascii_lowercase().as_str() {
                        "rgb" => ColorSpace::Rgb,
                        "ycbcr" => ColorSpace::YCbCr,
                        _ => return Err(Error::Config(format!("unknown colorspace {v:?}"))),
                    }
                }
                "patch_size" => c.patch_size = parse_value(key, v)?,
                "patch_stride" => c.patch_stride = parse_value(key, v)?,
                "prior_net_enabled" => c.prior_net_enabled = parse_bool(key, v)?,
                "scheme" => {
                    c.scheme = match v {
                        "1" | "separable" => Scheme::Separable,
                        "2" | "quadrant" => Scheme::Quadrant,
                        _ => return Err(Error::Config(format!("unknown scheme {v:?}"))),
                    }
                }
                "init" => {
                    Init::from_name(v, 0).map_err(|e| Error::Config(e.to_string()))?;
                    c.init = v.to_string();
                }
                "val_fraction" => c.val_fraction = parse_value(key, v)?,
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("repeat", self.repeat),
            ("hidden_channel", self.hidden_channel),
            ("K", self.k),
            ("patch_stride", self.patch_stride),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.patch_size < 2 || !self.patch_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "patch_size {} is not a power of two ≥ 2",
                self.patch_size
            )));
        }
        if !(self.lr_base > 0.0 && self.lr_base.is_finite())
            || !(self.decay > 0.0 && self.decay <= 1.0)
        {
            return Err(Error::Config(
                "lr_base must be positive and decay in (0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Canonical text that parses back to the same configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let cs = match self.colorspace {
            ColorSpace::Rgb => "rgb",
            ColorSpace::YCbCr => "ycbcr",
        };
        let scheme = if self.scheme == Scheme::Separable {
            "separable"
        } else {
            "quadrant"
        };
        let _ = write!(
            s,
            "epochs = {}\nbatch_size = {}\nrepeat = {}\nn_hidden = {}\nhidden_channel = {}\n\
             lr_base = {}\ndecay = {}\nK = {}\nseed = {}\ncolorspace = {cs}\npatch_size = {}\n\
             patch_stride = {}\nprior_net_enabled = {}\nscheme = {scheme}\ninit = {}\nval_fraction = {}\n",
            self.epochs,
            self.batch_size,
            self.repeat,
            self.n_hidden,
            self.hidden_channel,
            self.lr_base,
            self.decay,
            self.k,
            self.seed,
            self.patch_size,
            self.patch_stride,
            self.prior_net_enabled,
            self.init,
            self.val_fraction,
        );
        s
    }

    pub fn flow_config(&self, channels: usize) -> FlowConfig {
        FlowConfig {
            repeat: self.repeat,
            hidden: self.hidden_channel,
            n_hidden: self.n_hidden,
            ..FlowConfig::new(self.scheme, channels)
        }
    }

    pub fn flow_init(&self) -> Result<Init> {
        Init::from_name(&self.init, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = TrainConfig::parse("# desk run\nepochs = 3\nK=4\nprior_net_enabled = true # on\n")
            .unwrap();
        assert_eq!((c.epochs, c.k, c.prior_net_enabled), (3, 4, true));
        assert_eq!((c.repeat, c.n_hidden, c.hidden_channel), (2, 2, 64));
        assert_eq!((c.lr_base, c.decay), (0.001, 0.99));
    }

    #[test]
    fn text_round_trip() {
        let c = TrainConfig {
            colorspace: ColorSpace::YCbCr,
            scheme: Scheme::Separable,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "epochs = 0",
            "colour = rgb",
            "patch_size = 24",
            "decay = 1.5",
            "lr",
            "init = db4",
            "K = x",
        ] {
            assert!(
                matches!(TrainConfig::parse(bad), Err(Error::Config(_))),
                "{bad}"
            );
        }
    }
}
