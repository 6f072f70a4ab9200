//! Parameter storage and the handful of layers the networks are built from.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Named trainable tensors, created from a seeded generator so that
/// initialization is reproducible.
#[derive(Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: &str, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(handle)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], mean: f64, std: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(mean, std).map_err(|e| Error::Config(e.to_string()))?;
        let data: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.insert(name, data, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.insert(name, vec![value; n], shape)
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrite every parameter from `tensors`, which must hold exactly the
    /// same names and shapes.
    pub fn load(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        if tensors.len() != self.vars.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.vars.len(),
                tensors.len()
            )));
        }
        for (name, var) in &self.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        }
        Ok(())
    }

    /// Detached copies of every parameter.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().detach().copy()?)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    None,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Activation::Relu => x.relu()?,
            Activation::LeakyRelu => x.maximum(&x.affine(0.2, 0.0)?)?,
            Activation::None => x.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

/// Weights are drawn from N(0, 0.02).
pub const INIT_STD: f64 = 0.02;

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.normal(
            &format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            0.0,
            INIT_STD,
        )?;
        let bias = if bias {
            Some(store.constant(&format!("{name}.bias"), &[out_ch], 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = if self.stride == 1 {
            unfold_conv(x, &self.weight, self.padding)?
        } else {
            x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?
        };
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dims()[0], 1, 1))?)?,
            None => y,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }
}

/// Stride-1 convolution as shifted views and one matrix product.
fn unfold_conv(x: &Tensor, weight: &Tensor, pad: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (co, ci, kh, kw) = weight.dims4()?;
    if ci != c {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {ci} channels, got {c}"
        )));
    }
    let (ho, wo) = (
        (h + 2 * pad + 1).saturating_sub(kh),
        (w + 2 * pad + 1).saturating_sub(kw),
    );
    if ho == 0 || wo == 0 {
        return Err(Error::ShapeMismatch(format!(
            "{h}x{w} input too small for a {kh}x{kw} kernel"
        )));
    }
    let wm = weight.reshape((co, c * kh * kw))?;
    if kh == 1 && kw == 1 && pad == 0 {
        return Ok(wm
            .broadcast_matmul(&x.reshape((b, c, h * w))?)?
            .reshape((b, co, h, w))?);
    }
    let xp = if pad > 0 {
        x.pad_with_zeros(2, pad, pad)?.pad_with_zeros(3, pad, pad)?
    } else {
        x.clone()
    };
    let mut cols = Vec::with_capacity(kh * kw);
    for i in 0..kh {
        for j in 0..kw {
            cols.push(xp.narrow(2, i, ho)?.narrow(3, j, wo)?);
        }
    }
    let cols = Tensor::stack(&cols, 2)?.reshape((b, c * kh * kw, ho * wo))?;
    Ok(wm.broadcast_matmul(&cols)?.reshape((b, co, ho, wo))?)
}

/// Per-sample, per-channel normalization with a learned affine.
#[derive(Debug, Clone)]
pub struct InstanceNorm {
    gamma: Tensor,
    beta: Tensor,
}

const IN_EPS: f64 = 1e-5;

impl InstanceNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(&format!("{name}.gamma"), &[channels], 1.0)?,
            beta: store.constant(&format!("{name}.beta"), &[channels], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let flat = x.flatten_from(2)?;
        let mean = flat.mean_keepdim(2)?;
        let centered = flat.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(2)?;
        let normed = centered.broadcast_div(&(var + IN_EPS)?.sqrt()?)?;
        let y = normed
            .broadcast_mul(&self.gamma.reshape((1, c, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1))?)?;
        Ok(y.reshape(((), c, h, w))?)
    }
}

/// Convolution, optional instance norm, activation.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    conv: Conv2d,
    norm: Option<InstanceNorm>,
    act: Activation,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        norm: bool,
        act: Activation,
    ) -> Result<Self> {
        let conv = Conv2d::new(
            store,
            &format!("{name}.conv"),
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            !norm,
        )?;
        let norm = if norm {
            Some(InstanceNorm::new(store, &format!("{name}.norm"), out_ch)?)
        } else {
            None
        };
        Ok(Self { conv, norm, act })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv.forward(x)?;
        let y = match &self.norm {
            Some(n) => n.forward(&y)?,
            None => y,
        };
        self.act.apply(&y)
    }
}

/// `x + IN(conv(ReLU(IN(conv(x)))))` with 3×3 convolutions.
#[derive(Debug, Clone)]
pub struct ResBlock {
    first: ConvBlock,
    second: ConvBlock,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            first: ConvBlock::new(
                store,
                &format!("{name}.0"),
                channels,
                channels,
                3,
                1,
                1,
                true,
                Activation::Relu,
            )?,
            second: ConvBlock::new(
                store,
                &format!("{name}.1"),
                channels,
                channels,
                3,
                1,
                1,
                true,
                Activation::None,
            )?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok((x + self.second.forward(&self.first.forward(x)?)?)?)
    }
}

/// Two channels holding normalized x and y coordinates, `(B, 2, H, W)`.
pub fn coordinate_channels(
    b: usize,
    h: usize,
    w: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    use crate::geometry::axis_coord;
    let mut data = Vec::with_capacity(2 * h * w);
    data.extend((0..h * w).map(|p| axis_coord(p % w, w)));
    data.extend((0..h * w).map(|p| axis_coord(p / w, h)));
    let t = Tensor::from_vec(data, (1, 2, h, w), device)?.to_dtype(dtype)?;
    Ok(t.broadcast_as((b, 2, h, w))?.contiguous()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unfold_matches_direct_convolution() -> Result<()> {
        let dev = Device::Cpu;
        let x = Tensor::randn(0f64, 1., (2, 3, 7, 6), &dev)?;
        for (k, pad) in [(3, 1), (1, 0), (4, 2), (3, 0)] {
            let w = Tensor::randn(0f64, 1., (5, 3, k, k), &dev)?;
            let a = x.conv2d(&w, pad, 1, 1, 1)?;
            let b = unfold_conv(&x, &w, pad)?;
            assert_eq!(a.dims(), b.dims());
            let diff = (a - b)?.abs()?.max_all()?.to_scalar::<f64>()?;
            assert!(diff < 1e-12, "k={k} pad={pad}: {diff}");
        }
        Ok(())
    }
}
