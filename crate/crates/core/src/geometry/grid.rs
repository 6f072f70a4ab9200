use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-position sampling coordinates, shape `(B, H, W, 2)`, last axis `(x, y)`
/// in normalized `[-1, 1]` space with align-corners semantics: `-1` and `1`
/// are the centers of the border cells.
#[derive(Debug, Clone)]
pub struct SamplingGrid(Tensor);

impl SamplingGrid {
    pub fn new(coords: Tensor) -> Result<Self> {
        let (_, _, _, two) = coords.dims4()?;
        if two != 2 {
            return Err(Error::ShapeMismatch(format!(
                "sampling grid last axis must be 2, got {two}"
            )));
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.dims()[0]
    }

    /// `(H, W)`.
    pub fn size(&self) -> (usize, usize) {
        let d = self.0.dims();
        (d[1], d[2])
    }

    pub fn cat(grids: &[SamplingGrid]) -> Result<SamplingGrid> {
        let ts: Vec<&Tensor> = grids.iter().map(|g| &g.0).collect();
        SamplingGrid::new(Tensor::cat(&ts, 0)?)
    }

    pub fn detach(&self) -> SamplingGrid {
        SamplingGrid(self.0.detach())
    }
}

/// Softmax temperature applied to affinities before weighting the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub tau: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { tau: 100.0 }
    }
}

impl GridConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { tau })
    }
}

/// Normalized coordinate of index `i` along an axis of length `n`.
#[inline]
pub fn axis_coord(i: usize, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// The identity sampling grid of size `h`×`w`, batch 1.
pub fn regular_grid(h: usize, w: usize, dtype: DType, device: &Device) -> Result<SamplingGrid> {
    if h == 0 || w == 0 {
        return Err(Error::ShapeMismatch(
            "grid dimensions must be positive".into(),
        ));
    }
    let mut data = Vec::with_capacity(h * w * 2);
    for i in 0..h {
        for j in 0..w {
            data.push(axis_coord(j, w));
            data.push(axis_coord(i, h));
        }
    }
    let t = Tensor::from_vec(data, (1, h, w, 2), device)?.to_dtype(dtype)?;
    SamplingGrid::new(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_endpoints() {
        assert_eq!(axis_coord(0, 5), -1.0);
        assert_eq!(axis_coord(2, 5), 0.0);
        assert_eq!(axis_coord(4, 5), 1.0);
        assert_eq!(axis_coord(0, 1), 0.0);
    }

    #[test]
    fn grid_layout_is_x_then_y() -> Result<()> {
        let g = regular_grid(2, 3, DType::F64, &Device::Cpu)?;
        assert_eq!(g.size(), (2, 3));
        let v = g.coords().flatten_all()?.to_vec1::<f64>()?;
        assert_eq!(v[..6], [-1.0, -1.0, 0.0, -1.0, 1.0, -1.0]);
        assert!(regular_grid(0, 3, DType::F64, &Device::Cpu).is_err());
        assert!(SamplingGrid::new(Tensor::zeros((1, 2, 2, 3), DType::F32, &Device::Cpu)?).is_err());
        Ok(())
    }
}
