use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::dataio::{AugmentConfig, Schema};
use crate::error::{Error, IoContext, Result};
use crate::losses::LossWeights;
use crate::networks::{BranchMode, CombineMode, DiscriminatorConfig, GeneratorConfig};

/// Flat training configuration; every field has a default, so a config file
/// only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: u32,
    pub lr: f64,
    pub lr_constant_epochs: u32,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gdl_weight: f64,
    pub branch_mode: BranchMode,
    pub combine_mode: CombineMode,
    pub cross_identity: bool,
    pub seed: u64,
    pub image_height: usize,
    pub image_width: usize,
    /// Epochs between checkpoints; 0 saves only at the end.
    pub checkpoint_interval: u32,
    pub schema: Schema,

    pub base_channels: usize,
    pub image_res_blocks: usize,
    pub decoder_res_blocks: usize,
    pub use_coord_conv: bool,
    pub mask_aware: bool,
    pub tau: f64,
    pub disc_base_channels: usize,
    pub disc_layers: usize,
    pub face_discriminator: bool,
    pub face_crop: usize,

    pub flip_probability: f64,
    pub jitter: f32,
    pub double_precision: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 20,
            epochs: 600,
            lr: 2e-4,
            lr_constant_epochs: 275,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            k: 3,
            alpha: 10.0,
            beta: 10.0,
            lambda: 10.0,
            gdl_weight: 1.0,
            branch_mode: BranchMode::Dual,
            combine_mode: CombineMode::Concat,
            cross_identity: false,
            seed: 0,
            image_height: 256,
            image_width: 256,
            checkpoint_interval: 10,
            schema: Schema::Face68,
            base_channels: 64,
            image_res_blocks: 9,
            decoder_res_blocks: 4,
            use_coord_conv: true,
            mask_aware: true,
            tau: 100.0,
            disc_base_channels: 64,
            disc_layers: 3,
            face_discriminator: false,
            face_crop: 64,
            flip_probability: 0.5,
            jitter: 0.1,
            double_precision: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path).at(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr_constant_epochs > self.epochs {
            return Err(Error::Config(format!(
                "lr_constant_epochs {} exceeds epochs {}",
                self.lr_constant_epochs, self.epochs
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("invalid lr {}", self.lr)));
        }
        for (n, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{n} must lie in [0, 1), got {b}")));
            }
        }
        if self.face_discriminator && self.schema != Schema::Body {
            return Err(Error::Config(
                "the face discriminator needs the body schema".into(),
            ));
        }
        self.loss_weights().validate()?;
        self.generator_config().validate()
    }

    pub fn dtype(&self) -> DType {
        if self.double_precision {
            DType::F64
        } else {
            DType::F32
        }
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.image_height, self.image_width)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            gdl_weight: self.gdl_weight,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            k: self.k,
            base_channels: self.base_channels,
            branch_mode: self.branch_mode,
            combine_mode: self.combine_mode,
            use_coord_conv: self.use_coord_conv,
            image_size: self.image_size(),
            mask_channels: self.schema.mask_channels(),
            image_res_blocks: self.image_res_blocks,
            decoder_res_blocks: self.decoder_res_blocks,
            tau: self.tau,
            mask_aware: self.mask_aware,
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            in_channels: 3 + self.schema.mask_channels(),
            base_channels: self.disc_base_channels,
            downsample_layers: self.disc_layers,
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            flip_probability: self.flip_probability,
            brightness: self.jitter,
            contrast: self.jitter,
            saturation: self.jitter,
        }
    }
}

/// Learning rate for `epoch`: constant for `lr_constant_epochs`, then linear
/// decay reaching zero at `epochs`.
pub fn lr_schedule(epoch: f64, cfg: &TrainConfig) -> Result<f64> {
    let total = cfg.epochs as f64;
    if !(epoch >= 0.0 && epoch <= total) {
        return Err(Error::EpochOutOfRange {
            epoch,
            epochs: cfg.epochs,
        });
    }
    let flat = cfg.lr_constant_epochs as f64;
    if epoch < flat || total == flat {
        return Ok(cfg.lr);
    }
    Ok(cfg.lr * (total - epoch) / (total - flat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() -> Result<()> {
        let cfg = TrainConfig::default();
        let again = TrainConfig::from_toml_str(&cfg.to_toml_string()?)?;
        assert_eq!(cfg, again);
        Ok(())
    }

    #[test]
    fn partial_file() -> Result<()> {
        let cfg = TrainConfig::from_toml_str("batch_size = 2\nbranch_mode = \"synth_only\"\n")?;
        assert_eq!(cfg.batch_size, 2);
        assert_eq!(cfg.branch_mode, BranchMode::SynthOnly);
        assert_eq!(cfg.epochs, 600);
        assert!(TrainConfig::from_toml_str("nonsense = 1").is_err());
        Ok(())
    }

    #[test]
    fn schedule_endpoints() -> Result<()> {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0.0, &cfg)?, 2e-4);
        assert_eq!(lr_schedule(274.0, &cfg)?, 2e-4);
        assert_eq!(lr_schedule(600.0, &cfg)?, 0.0);
        assert!((lr_schedule(437.5, &cfg)? - 1e-4).abs() < 1e-18);
        assert!(lr_schedule(-1.0, &cfg).is_err());
        assert!(lr_schedule(601.0, &cfg).is_err());
        Ok(())
    }
}
