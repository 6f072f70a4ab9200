//! Affinities between subject and driving feature positions, and the
//! similarity-weighted sampling grid built from them.

use candle_core::{DType, Tensor};
use log::warn;

use super::grid::{GridConfig, SamplingGrid};
use crate::dataio::CellBox;
use crate::error::{Error, Result};

/// Guards the cosine denominator against zero-norm positions.
pub const COSINE_EPS: f64 = 1e-8;

/// Keeps the norm's gradient finite at exactly-zero feature vectors.
const NORM_FLOOR: f64 = 1e-20;

/// Affinity between subject position `p` (rows) and driving position `q`
/// (columns), both in row-major order over the feature map. Entries whose
/// `valid` flag is 0 were never computed: they hold 0 and are excluded from
/// any softmax.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub values: Tensor,
    pub valid: Tensor,
    /// Number of affinities actually evaluated.
    pub computed_entries: usize,
}

impl SimilarityMatrix {
    pub fn positions(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn valid_flags(&self) -> Result<Vec<Vec<u8>>> {
        Ok(self.valid.to_vec2::<u8>()?)
    }
}

fn check_pair(e: &Tensor, f: &Tensor) -> Result<(usize, usize, usize)> {
    let (c, h, w) = e.dims3()?;
    if f.dims3()? != (c, h, w) {
        return Err(Error::ShapeMismatch(format!(
            "subject features {:?} vs driving features {:?}",
            e.dims(),
            f.dims()
        )));
    }
    Ok((c, h, w))
}

/// `(N, C)` position-major view and `(N,)` L2 norms.
fn positions_and_norms(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = x.dims3()?;
    let flat = x.reshape((c, h * w))?;
    let norms = (flat.sqr()?.sum(0)? + NORM_FLOOR)?.sqrt()?;
    Ok((flat.t()?.contiguous()?, norms))
}

/// Elements per broadcast product chunk in [`pairwise_dot`].
const DOT_CHUNK: usize = 1 << 22;

/// `a (R, C) · b (N, C)ᵀ` with every entry reduced over `C` in the same
/// order, so a sub-block reproduces the full product bit for bit.
fn pairwise_dot(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims2()?;
    let n = b.dims()[0];
    let rows = (DOT_CHUNK / (n * c).max(1)).clamp(1, r.max(1));
    let bt = b.unsqueeze(0)?;
    let mut parts = Vec::with_capacity(r.div_ceil(rows));
    let mut start = 0;
    while start < r {
        let len = rows.min(r - start);
        let chunk = a.narrow(0, start, len)?.unsqueeze(1)?;
        parts.push(chunk.broadcast_mul(&bt)?.sum(2)?);
        start += len;
    }
    Ok(Tensor::cat(&parts, 0)?)
}

fn cosine_block(ep: &Tensor, en: &Tensor, fp: &Tensor, fn_: &Tensor) -> Result<Tensor> {
    let dot = pairwise_dot(ep, fp)?;
    let denom = (en.unsqueeze(1)?.broadcast_mul(&fn_.unsqueeze(0)?)? + COSINE_EPS)?;
    Ok(dot.broadcast_div(&denom)?)
}

/// Full cosine affinity between every subject and every driving position.
///
/// `e` and `f` are single `(C, H, W)` feature maps.
pub fn cosine_similarity(e: &Tensor, f: &Tensor) -> Result<SimilarityMatrix> {
    let (_, h, w) = check_pair(e, f)?;
    let n = h * w;
    let (ep, en) = positions_and_norms(e)?;
    let (fp, fnm) = positions_and_norms(f)?;
    let values = cosine_block(&ep, &en, &fp, &fnm)?;
    let valid = Tensor::ones((n, n), DType::U8, e.device())?;
    Ok(SimilarityMatrix {
        values,
        valid,
        computed_entries: n * n,
    })
}

fn partition(cells: &CellBox, h: usize, w: usize) -> (Vec<u32>, Vec<u32>) {
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for y in 0..h {
        for x in 0..w {
            let p = (y * w + x) as u32;
            if cells.contains(y, x) {
                inside.push(p);
            } else {
                outside.push(p);
            }
        }
    }
    (inside, outside)
}

/// Affinities restricted to inside↔inside and outside↔outside pairs of the
/// subject and driving boxes (given in feature cells).
///
/// Falls back to [`cosine_similarity`] when some subject position would be
/// left without any partner (a non-empty subject partition facing an empty
/// driving one).
pub fn mask_aware_similarity(
    e: &Tensor,
    f: &Tensor,
    bbox_subject: &CellBox,
    bbox_driving: &CellBox,
) -> Result<SimilarityMatrix> {
    let (_, h, w) = check_pair(e, f)?;
    let n = h * w;
    let (in_s, out_s) = partition(bbox_subject, h, w);
    let (in_d, out_d) = partition(bbox_driving, h, w);
    if (!in_s.is_empty() && in_d.is_empty()) || (!out_s.is_empty() && out_d.is_empty()) {
        warn!(
            "degenerate box partition (subject {}/{}, driving {}/{} inside/outside); using full similarity",
            in_s.len(),
            out_s.len(),
            in_d.len(),
            out_d.len()
        );
        return cosine_similarity(e, f);
    }

    let device = e.device();
    let (ep, en) = positions_and_norms(e)?;
    let (fp, fnm) = positions_and_norms(f)?;
    let block = |rows: &[u32], cols: &[u32]| -> Result<Option<Tensor>> {
        if rows.is_empty() || cols.is_empty() {
            return Ok(None);
        }
        let ri = Tensor::new(rows, device)?;
        let ci = Tensor::new(cols, device)?;
        Ok(Some(cosine_block(
            &ep.index_select(&ri, 0)?,
            &en.index_select(&ri, 0)?,
            &fp.index_select(&ci, 0)?,
            &fnm.index_select(&ci, 0)?,
        )?))
    };
    let inside = block(&in_s, &in_d)?;
    let outside = block(&out_s, &out_d)?;

    // Block-diagonal matrix in partition order, then permuted back.
    let dtype = e.dtype();
    let zeros = |r: usize, c: usize| Tensor::zeros((r, c), dtype, device);
    let (ri, ro, ci, co) = (in_s.len(), out_s.len(), in_d.len(), out_d.len());
    let mut rows = Vec::new();
    if ri > 0 {
        let mut parts = vec![inside.clone().unwrap_or(zeros(ri, ci)?)];
        if co > 0 {
            parts.push(zeros(ri, co)?);
        }
        rows.push(Tensor::cat(&parts, 1)?);
    }
    if ro > 0 {
        let mut parts = Vec::new();
        if ci > 0 {
            parts.push(zeros(ro, ci)?);
        }
        parts.push(outside.clone().unwrap_or(zeros(ro, co)?));
        rows.push(Tensor::cat(&parts, 1)?);
    }
    let permuted = Tensor::cat(&rows, 0)?;
    let row_order: Vec<u32> = in_s.iter().chain(&out_s).copied().collect();
    let col_order: Vec<u32> = in_d.iter().chain(&out_d).copied().collect();
    let values = permuted
        .index_select(&Tensor::new(inverse(&row_order).as_slice(), device)?, 0)?
        .index_select(&Tensor::new(inverse(&col_order).as_slice(), device)?, 1)?;

    let mut valid = vec![0u8; n * n];
    for (rows, cols) in [(&in_s, &in_d), (&out_s, &out_d)] {
        for &p in rows.iter() {
            for &q in cols.iter() {
                valid[p as usize * n + q as usize] = 1;
            }
        }
    }
    Ok(SimilarityMatrix {
        values,
        valid: Tensor::from_vec(valid, (n, n), device)?,
        computed_entries: ri * ci + ro * co,
    })
}

fn inverse(order: &[u32]) -> Vec<u32> {
    let mut inv = vec![0u32; order.len()];
    for (i, &p) in order.iter().enumerate() {
        inv[p as usize] = i as u32;
    }
    inv
}

/// Weight the regular grid `g` (batch 1) by a row-wise softmax of
/// `tau · S` over valid entries: `G'[p] = Σ_q softmax_q(τ S[p, q]) · G[q]`.
pub fn weighted_grid(
    s: &SimilarityMatrix,
    g: &SamplingGrid,
    cfg: &GridConfig,
) -> Result<SamplingGrid> {
    let n = s.positions();
    let (gh, gw) = g.size();
    if g.batch() != 1 || gh * gw != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} similarity rows for a {gh}x{gw} grid with batch {}",
            g.batch()
        )));
    }
    let row_valid = s.valid.to_dtype(DType::U32)?.sum(1)?.to_vec1::<u32>()?;
    if let Some(row) = row_valid.iter().position(|&c| c == 0) {
        return Err(Error::EmptySimilarityRow { row });
    }
    let logits = s.values.affine(cfg.tau, 0.0)?;
    let neg_inf =
        Tensor::full(f64::NEG_INFINITY, (n, n), logits.device())?.to_dtype(logits.dtype())?;
    let masked = s.valid.where_cond(&logits, &neg_inf)?;
    let row_max = masked.max_keepdim(1)?.detach();
    let exps = masked.broadcast_sub(&row_max)?.exp()?;
    let weights = exps.broadcast_div(&exps.sum_keepdim(1)?)?;
    let coords = g.coords().reshape((n, 2))?;
    SamplingGrid::new(weights.matmul(&coords)?.reshape((1, gh, gw, 2))?)
}
