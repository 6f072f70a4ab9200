//! Differentiable bilinear sampling.

use candle_core::{DType, Device, Tensor};

use super::grid::SamplingGrid;
use crate::error::{Error, Result};

/// Pixel size of one feature cell.
pub const PATCH: usize = 8;

/// Coordinates this close to an integer are snapped onto it (value only, the
/// gradient is untouched) so identity grids reproduce their input exactly.
fn snap_tolerance(dtype: DType) -> f64 {
    match dtype {
        DType::F64 => 1e-9,
        _ => 1e-3,
    }
}

fn snap(coord: &Tensor) -> Result<Tensor> {
    let d = coord.detach();
    let resid = (&d - d.round()?)?;
    let near = resid.abs()?.lt(snap_tolerance(coord.dtype()))?;
    let resid = near.where_cond(&resid, &resid.zeros_like()?)?;
    Ok((coord - resid)?)
}

/// Floor of a detached coordinate, clamped so the right/bottom neighbour is
/// in range, as host indices.
fn lower_indices(coord: &Tensor, n: usize) -> Result<Vec<u32>> {
    let hi = n.saturating_sub(2) as f64;
    let v = coord
        .detach()
        .floor()?
        .clamp(0.0, hi)?
        .to_dtype(DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?;
    Ok(v.into_iter().map(|x| x as u32).collect())
}

/// Sample `input` `(B, C, H, W)` at pixel coordinates `px`, `py` (both
/// `(B, N)`, `x` along width), producing `(B, C, N)`. Coordinates are clamped
/// to the image (border replication).
pub fn bilinear_sample(input: &Tensor, px: &Tensor, py: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = input.dims4()?;
    let (pb, n) = px.dims2()?;
    if pb != b || py.dims2()? != (b, n) {
        return Err(Error::ShapeMismatch(format!(
            "sample coordinates {:?}/{:?} for input {:?}",
            px.dims(),
            py.dims(),
            input.dims()
        )));
    }
    let px = snap(&px.clamp(0.0, (w - 1) as f64)?)?;
    let py = snap(&py.clamp(0.0, (h - 1) as f64)?)?;
    let x0 = lower_indices(&px, w)?;
    let y0 = lower_indices(&py, h)?;
    let device = input.device();
    let dtype = input.dtype();

    let as_coord = |v: &[u32]| -> Result<Tensor> {
        Ok(Tensor::from_vec(
            v.iter().map(|&x| x as f64).collect::<Vec<_>>(),
            (b, n),
            device,
        )?
        .to_dtype(dtype)?)
    };
    let wx = (&px - as_coord(&x0)?)?.unsqueeze(1)?;
    let wy = (&py - as_coord(&y0)?)?.unsqueeze(1)?;

    let x1: Vec<u32> = x0.iter().map(|&x| (x + 1).min(w as u32 - 1)).collect();
    let y1: Vec<u32> = y0.iter().map(|&y| (y + 1).min(h as u32 - 1)).collect();
    let flat = input.reshape((b, c, h * w))?;
    let gather = |ys: &[u32], xs: &[u32]| -> Result<Tensor> {
        let idx: Vec<u32> = ys.iter().zip(xs).map(|(&y, &x)| y * w as u32 + x).collect();
        let idx = Tensor::from_vec(idx, (b, 1, n), device)?
            .broadcast_as((b, c, n))?
            .contiguous()?;
        Ok(flat.gather(&idx, 2)?)
    };
    let one_minus = |t: &Tensor| -> Result<Tensor> { Ok(t.affine(-1.0, 1.0)?) };
    let (wx1, wy1) = (one_minus(&wx)?, one_minus(&wy)?);

    let v00 = gather(&y0, &x0)?.broadcast_mul(&(&wx1 * &wy1)?)?;
    let v01 = gather(&y0, &x1)?.broadcast_mul(&(&wx * &wy1)?)?;
    let v10 = gather(&y1, &x0)?.broadcast_mul(&(&wx1 * &wy)?)?;
    let v11 = gather(&y1, &x1)?.broadcast_mul(&(&wx * &wy)?)?;
    Ok((((v00 + v01)? + v10)? + v11)?)
}

/// Bilinearly sample feature maps `(B, C, H, W)` at `grid` `(B, Ho, Wo, 2)`.
pub fn warp_features(features: &Tensor, grid: &SamplingGrid) -> Result<Tensor> {
    let (b, c, h, w) = features.dims4()?;
    let (ho, wo) = grid.size();
    if grid.batch() != b {
        return Err(Error::ShapeMismatch(format!(
            "grid batch {} for {b} feature maps",
            grid.batch()
        )));
    }
    let coords = grid.coords().reshape((b, ho * wo, 2))?;
    let to_pixels = |axis: usize, n: usize| -> Result<Tensor> {
        let u = coords.narrow(2, axis, 1)?.squeeze(2)?;
        Ok(u.affine(0.5 * (n as f64 - 1.0), 0.5 * (n as f64 - 1.0))?)
    };
    let px = to_pixels(0, w)?;
    let py = to_pixels(1, h)?;
    Ok(bilinear_sample(features, &px, &py)?.reshape((b, c, ho, wo))?)
}

/// `(n·PATCH) × n` matrix that linearly interpolates a cell-indexed signal at
/// pixel centers, extrapolating past the outermost cell centers.
fn upsample_matrix(cells: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let pixels = cells * PATCH;
    let mut m = vec![0.0f64; pixels * cells];
    let half = (PATCH as f64 - 1.0) / 2.0;
    for r in 0..pixels {
        if cells == 1 {
            m[r] = 1.0;
            continue;
        }
        let phi = (r as f64 - half) / PATCH as f64;
        let i0 = (phi.floor().max(0.0) as usize).min(cells - 2);
        let t = phi - i0 as f64;
        m[r * cells + i0] = 1.0 - t;
        m[r * cells + i0 + 1] = t;
    }
    Ok(Tensor::from_vec(m, (pixels, cells), device)?.to_dtype(dtype)?)
}

/// Warp a full-resolution image `(B, C, 8·Hf, 8·Wf)` with a feature-resolution
/// grid `(B, Hf, Wf, 2)`.
///
/// The grid is read as source cell positions and interpolated to every pixel;
/// cell `c` corresponds to pixel `8c + 3.5`, the center of its 8×8 patch, so
/// shifting the grid by one cell shifts the image by 8 pixels and each patch
/// moves coherently.
pub fn warp_image_patchwise(image: &Tensor, grid: &SamplingGrid) -> Result<Tensor> {
    let (b, c, h, w) = image.dims4()?;
    let (hf, wf) = grid.size();
    if h != hf * PATCH || w != wf * PATCH || grid.batch() != b {
        return Err(Error::ShapeMismatch(format!(
            "image {:?} is not {PATCH}x the grid {:?}",
            image.dims(),
            grid.coords().dims()
        )));
    }
    let device = image.device();
    let dtype = image.dtype();
    let up_h = upsample_matrix(hf, dtype, device)?;
    let up_w_t = upsample_matrix(wf, dtype, device)?.t()?.contiguous()?;
    let half = (PATCH as f64 - 1.0) / 2.0;
    let to_pixels = |axis: usize, cells: usize| -> Result<Tensor> {
        let u = grid.coords().narrow(3, axis, 1)?.squeeze(3)?;
        let idx = u.affine(0.5 * (cells as f64 - 1.0), 0.5 * (cells as f64 - 1.0))?;
        let up = up_h.broadcast_matmul(&idx)?.broadcast_matmul(&up_w_t)?;
        Ok(up.affine(PATCH as f64, half)?.reshape((b, h * w))?)
    };
    let px = to_pixels(0, wf)?;
    let py = to_pixels(1, hf)?;
    Ok(bilinear_sample(image, &px, &py)?.reshape((b, c, h, w))?)
}
