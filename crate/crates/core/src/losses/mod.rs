//! Training objectives.
//!
//! Every function returns a scalar tensor so it can be backpropagated; use
//! [`scalar`] to read the value.

pub mod extractor;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

pub use extractor::{FeatureExtractor, IdentityExtractor, RandomConvExtractor};

use crate::error::{Error, Result};
use crate::networks::{Discriminator, DiscriminatorOutput};

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

fn mean_abs_diff(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok((a - b)?.abs()?.mean_all()?)
}

fn sum_all(terms: Vec<Tensor>) -> Result<Tensor> {
    let mut it = terms.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::ShapeMismatch("no loss terms".into()))?;
    it.try_fold(first, |acc, t| Ok((acc + t)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Generator,
    Discriminator,
}

/// `½E[(D(real)-1)²] + ½E[D(fake)²]`.
pub fn lsgan_discriminator_loss(real_scores: &Tensor, fake_scores: &Tensor) -> Result<Tensor> {
    let real = (real_scores.affine(1.0, -1.0)?.sqr()?.mean_all()? * 0.5)?;
    let fake = (fake_scores.sqr()?.mean_all()? * 0.5)?;
    Ok((real + fake)?)
}

/// `½E[(D(fake)-1)²]`.
pub fn lsgan_generator_loss(fake_scores: &Tensor) -> Result<Tensor> {
    Ok((fake_scores.affine(1.0, -1.0)?.sqr()?.mean_all()? * 0.5)?)
}

/// Least-squares adversarial loss for `role`, conditioned on `mask`. For the
/// discriminator role the generated frame is detached.
pub fn adversarial_loss(
    d: &Discriminator,
    generated: &Tensor,
    real: &Tensor,
    mask: &Tensor,
    role: Role,
) -> Result<Tensor> {
    match role {
        Role::Generator => lsgan_generator_loss(&d.discriminate(generated, mask)?.scores),
        Role::Discriminator => {
            let r = d.discriminate(real, mask)?.scores;
            let f = d.discriminate(&generated.detach(), mask)?.scores;
            lsgan_discriminator_loss(&r, &f)
        }
    }
}

/// `Σ_i mean|F_i(generated) - F_i(real)|`.
pub fn perceptual_loss(
    extractor: &dyn FeatureExtractor,
    generated: &Tensor,
    real: &Tensor,
) -> Result<Tensor> {
    let fg = extractor.features(generated)?;
    let fr = extractor.features(real)?;
    sum_all(
        fg.iter()
            .zip(&fr)
            .map(|(a, b)| mean_abs_diff(a, b))
            .collect::<Result<_>>()?,
    )
}

/// `Σ_i mean|fake_i - real_i|` over discriminator activations. The real side
/// is detached.
pub fn feature_matching_from(
    fake: &DiscriminatorOutput,
    real: &DiscriminatorOutput,
) -> Result<Tensor> {
    if fake.features.len() != real.features.len() {
        return Err(Error::ShapeMismatch("feature layer counts differ".into()));
    }
    sum_all(
        fake.features
            .iter()
            .zip(&real.features)
            .map(|(f, r)| mean_abs_diff(f, &r.detach()))
            .collect::<Result<_>>()?,
    )
}

pub fn feature_matching_loss(
    d: &Discriminator,
    generated: &Tensor,
    real: &Tensor,
    mask: &Tensor,
) -> Result<Tensor> {
    let fake = d.discriminate(generated, mask)?;
    let real = d.discriminate(real, mask)?;
    feature_matching_from(&fake, &real)
}

/// `Σ_k mean|warped_k - real|`.
pub fn transformation_loss(warped: &[Tensor], real: &Tensor) -> Result<Tensor> {
    if warped.is_empty() {
        return Err(Error::ShapeMismatch(
            "transformation loss needs at least one warped frame".into(),
        ));
    }
    sum_all(
        warped
            .iter()
            .map(|w| mean_abs_diff(w, real))
            .collect::<Result<_>>()?,
    )
}

/// `mean||∇h a| - |∇h b|| + mean||∇v a| - |∇v b||` with forward differences
/// on `(B, C, H, W)` images.
pub fn gradient_difference_loss(generated: &Tensor, real: &Tensor) -> Result<Tensor> {
    if generated.dims() != real.dims() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            generated.dims(),
            real.dims()
        )));
    }
    let (_, _, h, w) = generated.dims4()?;
    let grad = |x: &Tensor, axis: usize, n: usize| -> Result<Tensor> {
        Ok((x.narrow(axis, 1, n - 1)? - x.narrow(axis, 0, n - 1)?)?.abs()?)
    };
    let mut terms = Vec::new();
    if w > 1 {
        terms.push(mean_abs_diff(&grad(generated, 3, w)?, &grad(real, 3, w)?)?);
    }
    if h > 1 {
        terms.push(mean_abs_diff(&grad(generated, 2, h)?, &grad(real, 2, h)?)?);
    }
    if terms.is_empty() {
        return Ok(Tensor::zeros((), generated.dtype(), generated.device())?);
    }
    sum_all(terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Perceptual loss.
    pub alpha: f64,
    /// Feature matching.
    pub beta: f64,
    /// Transformation loss.
    pub lambda: f64,
    /// Gradient difference; 0 disables it.
    pub gdl_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 10.0,
            lambda: 10.0,
            gdl_weight: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("gdl_weight", self.gdl_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "loss weight {name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Only the adversarial term survives.
    pub fn adversarial_only() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            lambda: 0.0,
            gdl_weight: 0.0,
        }
    }
}

/// Unweighted generator loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub gan: f64,
    pub vgg: f64,
    pub fm: f64,
    pub tra: f64,
    pub gdl: f64,
}

impl LossParts {
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("gan", self.gan),
            ("vgg", self.vgg),
            ("fm", self.fm),
            ("tra", self.tra),
            ("gdl", self.gdl),
        ]
    }

    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.named()
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

fn effective(weights: &LossWeights, cross_identity: bool) -> LossWeights {
    if cross_identity {
        LossWeights::adversarial_only()
    } else {
        *weights
    }
}

/// `gan + α·vgg + β·fm + λ·tra + gdl_weight·gdl`; cross-identity training
/// keeps the adversarial term only.
pub fn total_generator_loss(
    parts: &LossParts,
    weights: &LossWeights,
    cross_identity: bool,
) -> Result<f64> {
    if let Some(name) = parts.first_non_finite() {
        return Err(Error::NonFiniteLoss {
            step: 0,
            component: name.to_string(),
            last_checkpoint: None,
        });
    }
    let w = effective(weights, cross_identity);
    Ok(parts.gan
        + w.alpha * parts.vgg
        + w.beta * parts.fm
        + w.lambda * parts.tra
        + w.gdl_weight * parts.gdl)
}

/// Differentiable generator loss terms; absent terms count as zero.
#[derive(Debug, Clone, Default)]
pub struct LossTerms {
    pub gan: Option<Tensor>,
    pub vgg: Option<Tensor>,
    pub fm: Option<Tensor>,
    pub tra: Option<Tensor>,
    pub gdl: Option<Tensor>,
}

impl LossTerms {
    pub fn parts(&self) -> Result<LossParts> {
        let v = |t: &Option<Tensor>| -> Result<f64> {
            t.as_ref().map(scalar).transpose().map(|x| x.unwrap_or(0.0))
        };
        Ok(LossParts {
            gan: v(&self.gan)?,
            vgg: v(&self.vgg)?,
            fm: v(&self.fm)?,
            tra: v(&self.tra)?,
            gdl: v(&self.gdl)?,
        })
    }

    /// The weighted sum as a tensor, skipping terms with zero weight.
    pub fn total(&self, weights: &LossWeights, cross_identity: bool) -> Result<Tensor> {
        let w = effective(weights, cross_identity);
        let mut terms = Vec::new();
        for (t, wt) in [
            (&self.gan, 1.0),
            (&self.vgg, w.alpha),
            (&self.fm, w.beta),
            (&self.tra, w.lambda),
            (&self.gdl, w.gdl_weight),
        ] {
            if let Some(t) = t {
                if wt != 0.0 {
                    terms.push(t.affine(wt, 0.0)?);
                }
            }
        }
        sum_all(terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn default_weights_on_unit_parts() -> Result<()> {
        let parts = LossParts {
            gan: 1.0,
            vgg: 1.0,
            fm: 1.0,
            tra: 1.0,
            gdl: 0.0,
        };
        let w = LossWeights {
            gdl_weight: 0.0,
            ..Default::default()
        };
        assert_eq!(total_generator_loss(&parts, &w, false)?, 31.0);
        assert_eq!(total_generator_loss(&parts, &w, true)?, 1.0);
        Ok(())
    }

    #[test]
    fn lsgan_half_scores() -> Result<()> {
        let half = Tensor::full(0.5f64, (2, 1, 3, 3), &Device::Cpu)?;
        assert!((scalar(&lsgan_discriminator_loss(&half, &half)?)? - 0.25).abs() < 1e-12);
        Ok(())
    }

    #[test]
    fn gdl_ignores_offset() -> Result<()> {
        let x = Tensor::rand(0f64, 1., (1, 3, 5, 5), &Device::Cpu)?;
        assert!(scalar(&gradient_difference_loss(&(&x + 0.3)?, &x)?)? < 1e-12);
        Ok(())
    }

    #[test]
    fn nan_part_is_rejected() {
        let parts = LossParts {
            vgg: f64::NAN,
            ..Default::default()
        };
        assert!(total_generator_loss(&parts, &LossWeights::default(), false).is_err());
    }
}
