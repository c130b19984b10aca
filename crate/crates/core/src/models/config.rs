use serde::{Deserialize, Serialize};

use crate::blocks::BnSettings;
use crate::error::{Error, Result};
use crate::nn_ops::{DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Caggnet,
    Unet,
}

/// The only resampling the networks use; kept in the config so saved
/// checkpoints state it explicitly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    #[default]
    Nearest2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: Arch,
    pub levels: usize,
    /// Aggregation columns after the encoder column (ignored by U-Net).
    pub columns: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub upsample_mode: UpsampleMode,
    pub wab_reduction: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::Caggnet,
            levels: 4,
            columns: 3,
            base_channels: 8,
            in_channels: 1,
            upsample_mode: UpsampleMode::Nearest2,
            wab_reduction: 2,
            bn_eps: DEFAULT_BN_EPS,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn tiny(arch: Arch) -> Self {
        ModelConfig {
            arch,
            levels: 2,
            columns: 1,
            base_channels: 2,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.levels < 2 {
            return fail(format!("levels must be >= 2, got {}", self.levels));
        }
        if self.levels > 16 {
            return fail(format!("levels {} is unreasonably deep", self.levels));
        }
        if self.arch == Arch::Caggnet && self.columns < 1 {
            return fail("columns must be >= 1".into());
        }
        if self.base_channels < 1 {
            return fail("base_channels must be >= 1".into());
        }
        if self.in_channels != 1 && self.in_channels != 3 {
            return fail(format!("in_channels must be 1 or 3, got {}", self.in_channels));
        }
        if self.wab_reduction < 1 {
            return fail("wab_reduction must be >= 1".into());
        }
        if self.arch == Arch::Caggnet && !self.base_channels.is_multiple_of(self.wab_reduction) {
            return fail(format!(
                "base_channels {} must be divisible by wab_reduction {}",
                self.base_channels, self.wab_reduction
            ));
        }
        if self.bn_eps.is_nan() || self.bn_eps <= 0.0 || !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return fail("bn_eps must be > 0 and bn_momentum in (0, 1]".into());
        }
        Ok(())
    }

    /// Channel count at level `i`: `C0 · 2^i`.
    pub fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn widths(&self) -> Vec<usize> {
        (0..self.levels).map(|i| self.width(i)).collect()
    }

    /// Input height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub(crate) fn bn(&self) -> BnSettings {
        BnSettings {
            eps: self.bn_eps,
            momentum: self.bn_momentum,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rules() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = [
            ModelConfig {
                levels: 1,
                ..Default::default()
            },
            ModelConfig {
                columns: 0,
                ..Default::default()
            },
            ModelConfig {
                base_channels: 0,
                ..Default::default()
            },
            ModelConfig {
                in_channels: 2,
                ..Default::default()
            },
            ModelConfig {
                base_channels: 3,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        let unet = ModelConfig {
            arch: Arch::Unet,
            columns: 0,
            base_channels: 3,
            ..Default::default()
        };
        assert!(unet.validate().is_ok());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<ModelConfig>(r#"{"levels": 3, "colums": 2}"#);
        assert!(err.is_err());
        let ok: ModelConfig = serde_json::from_str(r#"{"arch": "unet", "levels": 3}"#).unwrap();
        assert_eq!((ok.arch, ok.levels, ok.columns), (Arch::Unet, 3, 3));
    }

    #[test]
    fn widths_double() {
        let c = ModelConfig::default();
        assert_eq!(c.widths(), [8, 16, 32, 64]);
        assert_eq!(c.spatial_multiple(), 8);
    }
}
