//! The `train` command's JSON experiment record.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use caggnet::models::ModelConfig;
use caggnet::train::{AdamConfig, FocalLossConfig, Loss, TrainConfig};
use caggnet::DType;
use serde::{Deserialize, Serialize};

/// Which dataset split drives validation and early stopping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ValSplit {
    #[default]
    Val,
    Train,
}

fn single() -> DType {
    DType::Single
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory; relative paths resolve against the config file.
    pub dataset: Option<PathBuf>,
    /// When set, seeds both initialization and shuffling.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub val_split: ValSplit,
    #[serde(default)]
    pub resize: Option<[usize; 2]>,
    #[serde(default = "single")]
    pub precision: DType,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: Loss,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            seed: None,
            val_split: ValSplit::Val,
            resize: None,
            precision: DType::Single,
            model: ModelConfig::default(),
            loss: Loss::default(),
            optimizer: AdamConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum LossKind {
    Bce,
    Focal,
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// Dataset directory (with images/, masks/ and manifest.json).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Seeds both weight initialisation and batch shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epochs without a val IoU improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub loss: Option<LossKind>,
    /// Focal class weight for the foreground.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Focal focusing exponent.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Split scored for early stopping; `train` scores the training set itself.
    #[arg(long, value_enum)]
    pub val_split: Option<ValSplit>,
    /// Train in f64 instead of f32.
    #[arg(long)]
    pub double: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(d) = &cfg.dataset {
            if d.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.dataset = Some(base.join(d));
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(d) = &o.dataset {
            self.dataset = Some(d.clone());
        }
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(e) = o.epochs {
            self.train.epochs_max = e;
        }
        if let Some(b) = o.batch_size {
            self.train.batch_size = b;
        }
        if let Some(p) = o.patience {
            self.train.patience = p;
        }
        if let Some(lr) = o.lr {
            self.optimizer.lr = lr;
        }
        if let Some(v) = o.val_split {
            self.val_split = v;
        }
        if o.double {
            self.precision = DType::Double;
        }
        match o.loss {
            Some(LossKind::Bce) => {
                if o.alpha.is_some() || o.gamma.is_some() {
                    bail!("--alpha/--gamma only apply to the focal loss");
                }
                self.loss = Loss::bce();
            }
            Some(LossKind::Focal) => {
                let base = match self.loss {
                    Loss::Focal(c) => c,
                    Loss::Bce { .. } => FocalLossConfig::default(),
                };
                self.loss = Loss::Focal(FocalLossConfig {
                    alpha: o.alpha.unwrap_or(base.alpha),
                    gamma: o.gamma.unwrap_or(base.gamma),
                    ..base
                });
            }
            None => match &mut self.loss {
                Loss::Focal(c) => {
                    c.alpha = o.alpha.unwrap_or(c.alpha);
                    c.gamma = o.gamma.unwrap_or(c.gamma);
                }
                Loss::Bce { .. } if o.alpha.is_some() || o.gamma.is_some() => {
                    bail!("--alpha/--gamma given but the configured loss is bce");
                }
                Loss::Bce { .. } => {}
            },
        }
        if let Some(s) = self.seed {
            self.model.seed = s;
            self.train.seed = s;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_none() {
            bail!("no dataset given (config key `dataset` or --dataset)");
        }
        if let Some([h, w]) = self.resize {
            if h == 0 || w == 0 {
                bail!("resize extents must be positive");
            }
        }
        self.model.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use caggnet::models::Arch;

    #[test]
    fn minimal_config_uses_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"dataset": "d"}"#).unwrap();
        assert_eq!(c.train.patience, 32);
        assert_eq!(c.optimizer.lr, 1e-3);
        assert_eq!(c.precision, DType::Single);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        for bad in [
            r#"{"dataset": "d", "epochs": 3}"#,
            r#"{"model": {"level": 3}}"#,
            r#"{"train": {"epoch_max": 3}}"#,
            r#"{"optimizer": {"learning_rate": 3}}"#,
            r#"{"loss": {"kind": "focal", "alpha": 0.2, "gama": 2}}"#,
            r#"{"loss": {"kind": "dice"}}"#,
        ] {
            assert!(serde_json::from_str::<RunConfig>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn nested_sections_parse() {
        let c: RunConfig = serde_json::from_str(
            r#"{"dataset": "d", "model": {"arch": "unet", "levels": 3},
                "loss": {"kind": "focal", "alpha": 0.4, "gamma": 1.0},
                "train": {"epochs_max": 7}}"#,
        )
        .unwrap();
        assert_eq!(c.model.arch, Arch::Unet);
        assert_eq!(
            c.loss,
            Loss::Focal(FocalLossConfig {
                alpha: 0.4,
                gamma: 1.0,
                clamp_eps: 1e-7
            })
        );
        assert_eq!(c.train.epochs_max, 7);
        let b: RunConfig = serde_json::from_str(r#"{"loss": {"kind": "bce"}}"#).unwrap();
        assert_eq!(b.loss, Loss::bce());
    }

    #[test]
    fn flag_overrides() {
        let mut c = RunConfig {
            loss: Loss::bce(),
            ..Default::default()
        };
        let o = Overrides {
            loss: Some(LossKind::Focal),
            alpha: Some(0.25),
            gamma: Some(2.0),
            seed: Some(4),
            epochs: Some(9),
            ..Default::default()
        };
        c.apply(&o).unwrap();
        assert_eq!(c.loss, Loss::Focal(FocalLossConfig::default()));
        assert_eq!((c.model.seed, c.train.seed, c.train.epochs_max), (4, 4, 9));
        let mut b = RunConfig {
            loss: Loss::bce(),
            ..Default::default()
        };
        assert!(b
            .apply(&Overrides {
                alpha: Some(0.3),
                ..Default::default()
            })
            .is_err());
    }

    #[test]
    fn missing_dataset_fails_validation() {
        assert!(RunConfig::default().validate().is_err());
    }
}
