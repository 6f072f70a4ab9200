use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// Frozen multi-layer feature extractor for perceptual distances.
pub trait FeatureExtractor {
    /// Activations of every layer for a `(B, 3, H, W)` batch in `[0, 1]`.
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>>;

    /// Short description recorded in reports and checkpoints.
    fn describe(&self) -> String;

    /// True when the weights are a stand-in rather than a calibrated network.
    fn is_proxy(&self) -> bool;
}

/// Returns the input as its single layer.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![x.clone()])
    }

    fn describe(&self) -> String {
        "identity".into()
    }

    fn is_proxy(&self) -> bool {
        true
    }
}

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Five 3×3 convolution + ReLU stages with fixed random weights, shaped like
/// the early layers of a classification backbone (stride 2 before stages 2-5).
/// Weights are plain tensors, never trainable.
#[derive(Debug, Clone)]
pub struct RandomConvExtractor {
    seed: u64,
    layers: Vec<(Tensor, usize)>,
    mean: Tensor,
    std: Tensor,
}

impl RandomConvExtractor {
    pub const DEFAULT_SEED: u64 = 0x5eed_f00d;

    pub fn new(seed: u64, widths: &[usize], dtype: DType, device: &Device) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut c = 3;
        for (i, &w) in widths.iter().enumerate() {
            let fan_in = (c * 9) as f64;
            let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            let data: Vec<f64> = (0..w * c * 9).map(|_| dist.sample(&mut rng)).collect();
            let weight = Tensor::from_vec(data, (w, c, 3, 3), device)?.to_dtype(dtype)?;
            layers.push((weight, if i == 0 { 1 } else { 2 }));
            c = w;
        }
        let stat = |v: [f64; 3]| -> Result<Tensor> {
            Ok(Tensor::from_vec(v.to_vec(), (1, 3, 1, 1), device)?.to_dtype(dtype)?)
        };
        Ok(Self {
            seed,
            layers,
            mean: stat(IMAGENET_MEAN)?,
            std: stat(IMAGENET_STD)?,
        })
    }

    /// The default five-layer extractor.
    pub fn standard(dtype: DType, device: &Device) -> Result<Self> {
        Self::new(Self::DEFAULT_SEED, &[16, 32, 64, 64, 64], dtype, device)
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut y = x.broadcast_sub(&self.mean)?.broadcast_div(&self.std)?;
        let mut out = Vec::with_capacity(self.layers.len());
        for (w, stride) in &self.layers {
            y = y.conv2d(w, 1, *stride, 1, 1)?.relu()?;
            out.push(y.clone());
        }
        Ok(out)
    }

    fn describe(&self) -> String {
        format!(
            "random-conv(seed={}, layers={})",
            self.seed,
            self.layers.len()
        )
    }

    fn is_proxy(&self) -> bool {
        true
    }
}
