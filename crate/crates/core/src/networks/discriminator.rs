use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Conv2d, ConvBlock, ParamStore};
use crate::dataio::BoundingBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    /// Frame channels plus mask channels.
    pub in_channels: usize,
    pub base_channels: usize,
    /// Stride-2 layers; 3 gives the 70×70 receptive field.
    pub downsample_layers: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 4,
            base_channels: 64,
            downsample_layers: 3,
        }
    }
}

impl DiscriminatorConfig {
    /// Number of intermediate feature sets exposed for feature matching.
    pub fn feature_layers(&self) -> usize {
        self.downsample_layers + 1
    }

    /// Receptive field of one output score, in pixels.
    pub fn receptive_field(&self) -> usize {
        // 4×4 kernels; the last hidden layer and the head have stride 1.
        let mut strides = vec![1usize, 1];
        strides.extend(std::iter::repeat_n(2, self.downsample_layers));
        strides.iter().fold(1, |rf, s| (rf - 1) * s + 4)
    }
}

/// Scores and the activations of every hidden layer.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    /// `(B, 1, h, w)` patch scores.
    pub scores: Tensor,
    pub features: Vec<Tensor>,
}

/// Conditional PatchGAN over `cat(frame, mask)`.
#[derive(Debug)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    store: ParamStore,
    layers: Vec<ConvBlock>,
    head: Conv2d,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        if cfg.in_channels == 0 || cfg.base_channels == 0 || cfg.downsample_layers == 0 {
            return Err(Error::Config("discriminator sizes must be positive".into()));
        }
        let mut store = ParamStore::new(seed, dtype, device);
        let mut layers = Vec::new();
        let mut c = cfg.in_channels;
        for i in 0..cfg.feature_layers() {
            let out = cfg.base_channels << i.min(3);
            let stride = if i < cfg.downsample_layers { 2 } else { 1 };
            layers.push(ConvBlock::new(
                &mut store,
                &format!("layer{i}"),
                c,
                out,
                4,
                stride,
                2,
                i > 0,
                Activation::LeakyRelu,
            )?);
            c = out;
        }
        let head = Conv2d::new(&mut store, "head", c, 1, 4, 1, 2, true)?;
        Ok(Self {
            cfg,
            store,
            layers,
            head,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn discriminate(&self, frame: &Tensor, mask: &Tensor) -> Result<DiscriminatorOutput> {
        let x = Tensor::cat(&[frame, mask], 1)?;
        if x.dims4()?.1 != self.cfg.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "discriminator expects {} input channels, got {}",
                self.cfg.in_channels,
                x.dims()[1]
            )));
        }
        let mut features = Vec::with_capacity(self.layers.len());
        let mut y = x;
        for l in &self.layers {
            y = l.forward(&y)?;
            features.push(y.clone());
        }
        Ok(DiscriminatorOutput {
            scores: self.head.forward(&y)?,
            features,
        })
    }
}

/// Square crops of side `size` centered on each box, shifted to stay inside
/// the image. `x` is `(B, C, H, W)` with one box per batch element.
pub fn crop_around(x: &Tensor, boxes: &[BoundingBox], size: usize) -> Result<Tensor> {
    let (b, _, h, w) = x.dims4()?;
    if boxes.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "{} boxes for batch {b}",
            boxes.len()
        )));
    }
    if size > h || size > w {
        return Err(Error::ShapeMismatch(format!(
            "crop {size} exceeds image {h}x{w}"
        )));
    }
    let start = |c: f64, n: usize| -> usize {
        let s = (c - size as f64 / 2.0).round().max(0.0) as usize;
        s.min(n - size)
    };
    let crops = boxes
        .iter()
        .enumerate()
        .map(|(i, bx)| {
            let (cx, cy) = bx.center();
            Ok(x.narrow(0, i, 1)?
                .narrow(2, start(cy, h), size)?
                .narrow(3, start(cx, w), size)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&crops, 0)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_receptive_field() {
        assert_eq!(DiscriminatorConfig::default().receptive_field(), 70);
    }

    #[test]
    fn scores_are_a_map() -> Result<()> {
        let dev = Device::Cpu;
        let cfg = DiscriminatorConfig {
            in_channels: 4,
            base_channels: 4,
            downsample_layers: 3,
        };
        let d = Discriminator::new(cfg, 0, DType::F32, &dev)?;
        let x = Tensor::rand(0f32, 1., (1, 3, 64, 64), &dev)?;
        let m = Tensor::zeros((1, 1, 64, 64), DType::F32, &dev)?;
        let out = d.discriminate(&x, &m)?;
        let (_, c, sh, sw) = out.scores.dims4()?;
        assert_eq!(c, 1);
        assert!(sh > 1 && sw > 1);
        assert_eq!(out.features.len(), 4);
        let again = d.discriminate(&x, &m)?;
        let diff = (out.scores - again.scores)?
            .abs()?
            .max_all()?
            .to_scalar::<f32>()?;
        assert_eq!(diff, 0.0);
        Ok(())
    }
}
