use std::fmt;
use std::str::FromStr;

use crate::decoder::UpsampleFusion;
use crate::error::{Error, Result};
use crate::kv;

/// The four ablation configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// (i) U-Net with a DenseNet-121-style encoder.
    BaselineUnetDensenet,
    /// (ii) (i) + WGCAM with plain GAP.
    WgcamGap,
    /// (iii) (i) + WGCAM with learnable weighted GAP.
    WgcamLwgap,
    /// (iv) (iii) + the anti-aliased decoder module.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::BaselineUnetDensenet,
        Variant::WgcamGap,
        Variant::WgcamLwgap,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BaselineUnetDensenet => "baseline_unet_densenet",
            Variant::WgcamGap => "wgcam_gap",
            Variant::WgcamLwgap => "wgcam_lwgap",
            Variant::Full => "full",
        }
    }

    pub fn roman(self) -> &'static str {
        match self {
            Variant::BaselineUnetDensenet => "i",
            Variant::WgcamGap => "ii",
            Variant::WgcamLwgap => "iii",
            Variant::Full => "iv",
        }
    }

    pub fn has_wgcam(self) -> bool {
        self != Variant::BaselineUnetDensenet
    }

    pub fn learnable_alpha(self) -> bool {
        matches!(self, Variant::WgcamLwgap | Variant::Full)
    }

    pub fn full_decoder(self) -> bool {
        self == Variant::Full
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = s.trim().to_ascii_lowercase();
        Variant::ALL
            .into_iter()
            .find(|x| x.name() == v || x.roman() == v || format!("({})", x.roman()) == v)
            .ok_or_else(|| {
                Error::config("variant", format!("unknown variant `{s}`; expected i, ii, iii or iv"))
            })
    }
}

/// Architecture hyperparameters. Parameter names, shapes and initial values
/// are a pure function of this record.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// `(height, width)`, both divisible by 32.
    pub input_size: (usize, usize),
    pub input_channels: usize,
    pub growth_rate: usize,
    /// Dense layers in each of the four encoder blocks.
    pub block_layers: Vec<usize>,
    /// Output channels of the five decoder stages, deepest first.
    pub decoder_widths: Vec<usize>,
    pub bottleneck_width: usize,
    pub wgcam_reduction: usize,
    pub gaussian_sigma: f64,
    pub upsample_fusion: UpsampleFusion,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Full-size profile: 512x512 RGB, DenseNet-121 block structure.
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Full,
            input_size: (512, 512),
            input_channels: 3,
            growth_rate: 32,
            block_layers: vec![6, 12, 24, 16],
            decoder_widths: vec![256, 128, 64, 32, 16],
            bottleneck_width: 512,
            wgcam_reduction: 8,
            gaussian_sigma: 1.0,
            upsample_fusion: UpsampleFusion::Mean,
            seed: 0,
        }
    }
}

pub const DOWNSAMPLE: usize = 32;

impl ModelConfig {
    /// Small profile used by tests: 64x64 inputs, growth 8, 2 layers per block.
    pub fn desk() -> Self {
        ModelConfig {
            input_size: (64, 64),
            growth_rate: 8,
            block_layers: vec![2, 2, 2, 2],
            decoder_widths: vec![64, 64, 32, 16, 16],
            bottleneck_width: 64,
            ..ModelConfig::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
            return Err(Error::config(
                "input_size",
                format!("{h}x{w} must be positive multiples of {DOWNSAMPLE}"),
            ));
        }
        if self.input_channels == 0 {
            return Err(Error::config("input_channels", "must be at least 1"));
        }
        if self.growth_rate == 0 {
            return Err(Error::config("growth_rate", "must be at least 1"));
        }
        if self.block_layers.len() != 4 || self.block_layers.contains(&0) {
            return Err(Error::config("block_layers", "expected four positive layer counts"));
        }
        if self.decoder_widths.len() != 5 {
            return Err(Error::config("decoder_widths", "expected five widths, deepest first"));
        }
        if let Some(w) = self.decoder_widths.iter().find(|&&w| w < 2 || w % 2 != 0) {
            return Err(Error::config("decoder_widths", format!("width {w} must be even and >= 2")));
        }
        if self.bottleneck_width < 2 || !self.bottleneck_width.is_multiple_of(2) {
            return Err(Error::config("bottleneck_width", "must be even and >= 2"));
        }
        if self.wgcam_reduction == 0 {
            return Err(Error::config("wgcam_reduction", "must be at least 1"));
        }
        if !(self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::config("gaussian_sigma", "must be positive"));
        }
        Ok(())
    }

    /// Sets one field from its text form. Returns `false` for unknown keys.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "variant" => self.variant = value.parse()?,
            "input_size" => self.input_size = parse_size(value)?,
            "input_channels" => self.input_channels = kv::parse_num(key, value)?,
            "growth_rate" => self.growth_rate = kv::parse_num(key, value)?,
            "block_layers" => self.block_layers = kv::parse_list(key, value)?,
            "decoder_widths" => self.decoder_widths = kv::parse_list(key, value)?,
            "bottleneck_width" => self.bottleneck_width = kv::parse_num(key, value)?,
            "wgcam_reduction" => self.wgcam_reduction = kv::parse_num(key, value)?,
            "gaussian_sigma" => self.gaussian_sigma = kv::parse_num(key, value)?,
            "upsample_fusion" => {
                self.upsample_fusion = match value {
                    "mean" => UpsampleFusion::Mean,
                    "concat" => UpsampleFusion::Concat,
                    _ => return Err(Error::config(key, format!("expected mean or concat, got `{value}`"))),
                }
            }
            "seed" => self.seed = kv::parse_num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let fusion = match self.upsample_fusion {
            UpsampleFusion::Mean => "mean",
            UpsampleFusion::Concat => "concat",
        };
        [
            ("variant", self.variant.name().to_string()),
            ("input_size", format!("{}x{}", self.input_size.0, self.input_size.1)),
            ("input_channels", self.input_channels.to_string()),
            ("growth_rate", self.growth_rate.to_string()),
            ("block_layers", kv::join_list(&self.block_layers)),
            ("decoder_widths", kv::join_list(&self.decoder_widths)),
            ("bottleneck_width", self.bottleneck_width.to_string()),
            ("wgcam_reduction", self.wgcam_reduction.to_string()),
            ("gaussian_sigma", format!("{:?}", self.gaussian_sigma)),
            ("upsample_fusion", fusion.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn to_text(&self) -> String {
        kv::render(&self.to_kv())
    }

    /// Parses the text written by [`ModelConfig::to_text`]; unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in kv::parse(text)? {
            if !cfg.apply(&k, &v)? {
                return Err(Error::config(k, "unknown model config key"));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_size(value: &str) -> Result<(usize, usize)> {
    match value.split_once(['x', 'X']) {
        Some((h, w)) => Ok((
            kv::parse_num("input_size", h.trim())?,
            kv::parse_num("input_size", w.trim())?,
        )),
        None => {
            let s = kv::parse_num("input_size", value)?;
            Ok((s, s))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_parse_from_roman_and_names() {
        for v in Variant::ALL {
            assert_eq!(v.roman().parse::<Variant>().unwrap(), v);
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("v".parse::<Variant>().is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ModelConfig::desk().with_variant(Variant::WgcamGap);
        cfg.gaussian_sigma = 0.8;
        cfg.upsample_fusion = UpsampleFusion::Concat;
        cfg.seed = 99;
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn validation() {
        let mut cfg = ModelConfig::desk();
        cfg.input_size = (48, 64);
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "input_size"));
        let mut cfg = ModelConfig::desk();
        cfg.decoder_widths = vec![8, 8, 8, 8];
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::from_text("colour = red").is_err());
        ModelConfig::default().validate().unwrap();
    }
}
