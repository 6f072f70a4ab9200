//! Independent scalar reference implementations and fixtures shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

pub mod checks;
pub mod smoke;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsnet_core::dataio::CellBox;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A `(C, H, W)` feature map stored row-major, channel first.
#[derive(Debug, Clone)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn random(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> Self {
        let data = (0..c * h * w)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Self { c, h, w, data }
    }

    pub fn at(&self, ch: usize, y: usize, x: usize) -> f64 {
        self.data[(ch * self.h + y) * self.w + x]
    }

    /// Channel vector at flat position `p`.
    pub fn vector(&self, p: usize) -> Vec<f64> {
        (0..self.c)
            .map(|ch| self.data[ch * self.h * self.w + p])
            .collect()
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::from_vec(self.data.clone(), (self.c, self.h, self.w), &Device::Cpu).unwrap()
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let (c, h, w) = t.dims3().unwrap();
        let data = t
            .to_dtype(DType::F64)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        Self { c, h, w, data }
    }
}

pub fn tensor_to_vec(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `<a, b> / (|a| |b| + 1e-8)` over every position pair.
pub fn cosine_oracle(e: &Map, f: &Map) -> Vec<Vec<f64>> {
    let n = e.h * e.w;
    let mut s = vec![vec![0.0; n]; n];
    for p in 0..n {
        let a = e.vector(p);
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        for q in 0..n {
            let b = f.vector(q);
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            s[p][q] = dot / (na * nb + 1e-8);
        }
    }
    s
}

/// Which `(p, q)` pairs a box partition keeps.
pub fn partition_oracle(bs: &CellBox, bd: &CellBox, h: usize, w: usize) -> Vec<Vec<bool>> {
    let inside = |b: &CellBox, p: usize| {
        let (y, x) = (p / w, p % w);
        y >= b.y0 && y <= b.y1 && x >= b.x0 && x <= b.x1
    };
    let n = h * w;
    (0..n)
        .map(|p| (0..n).map(|q| inside(bs, p) == inside(bd, q)).collect())
        .collect()
}

pub fn linspace_coord(i: usize, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// Regular grid coordinates `(x, y)` per flat position.
pub fn regular_grid_oracle(h: usize, w: usize) -> Vec<[f64; 2]> {
    let mut g = Vec::new();
    for i in 0..h {
        for j in 0..w {
            g.push([linspace_coord(j, w), linspace_coord(i, h)]);
        }
    }
    g
}

/// Softmax-weighted grid over valid entries of each row.
pub fn weighted_grid_oracle(
    s: &[Vec<f64>],
    valid: &[Vec<bool>],
    grid: &[[f64; 2]],
    tau: f64,
) -> Vec<[f64; 2]> {
    s.iter()
        .zip(valid)
        .map(|(row, ok)| {
            let m = row
                .iter()
                .zip(ok)
                .filter(|(_, &v)| v)
                .map(|(x, _)| tau * x)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut acc = [0.0, 0.0];
            let mut z = 0.0;
            for (q, (x, &v)) in row.iter().zip(ok).enumerate() {
                if v {
                    let wgt = (tau * x - m).exp();
                    z += wgt;
                    acc[0] += wgt * grid[q][0];
                    acc[1] += wgt * grid[q][1];
                }
            }
            [acc[0] / z, acc[1] / z]
        })
        .collect()
}

/// Bilinear sample of every channel at pixel coordinates `(px, py)` with
/// border clamping.
pub fn bilinear_oracle(m: &Map, px: f64, py: f64) -> Vec<f64> {
    let x = px.clamp(0.0, (m.w - 1) as f64);
    let y = py.clamp(0.0, (m.h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(m.w - 1);
    let y1 = (y0 + 1).min(m.h - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    (0..m.c)
        .map(|c| {
            m.at(c, y0, x0) * (1.0 - fx) * (1.0 - fy)
                + m.at(c, y0, x1) * fx * (1.0 - fy)
                + m.at(c, y1, x0) * (1.0 - fx) * fy
                + m.at(c, y1, x1) * fx * fy
        })
        .collect()
}

/// Warp `m` with normalized coordinates, one per output position.
pub fn warp_oracle(m: &Map, grid: &[[f64; 2]], ho: usize, wo: usize) -> Map {
    let mut data = vec![0.0; m.c * ho * wo];
    for (p, g) in grid.iter().enumerate() {
        let px = (g[0] + 1.0) / 2.0 * (m.w - 1) as f64;
        let py = (g[1] + 1.0) / 2.0 * (m.h - 1) as f64;
        for (c, v) in bilinear_oracle(m, px, py).into_iter().enumerate() {
            data[c * ho * wo + p] = v;
        }
    }
    Map {
        c: m.c,
        h: ho,
        w: wo,
        data,
    }
}

/// A random box inside an `h`×`w` cell grid.
pub fn random_cells(rng: &mut impl Rng, h: usize, w: usize) -> CellBox {
    let (a, b) = (rng.random_range(0..h), rng.random_range(0..h));
    let (c, d) = (rng.random_range(0..w), rng.random_range(0..w));
    CellBox {
        y0: a.min(b),
        y1: a.max(b),
        x0: c.min(d),
        x1: c.max(d),
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let up = f(&xp);
        xp[i] = orig - h;
        let down = f(&xp);
        xp[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// Relative error between gradients, scaled by the larger norm.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
