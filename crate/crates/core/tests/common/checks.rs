//! Property checks run both by the integration tests (at reduced size) and
//! by the acceptance harness. Each returns a one-line summary or a failure
//! description.

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use tsnet_core::dataio::synthetic::{generate, SyntheticConfig};
use tsnet_core::dataio::{sample_training_batch, CellBox};
use tsnet_core::geometry::{
    cosine_similarity, mask_aware_similarity, regular_grid, warp_features, weighted_grid,
    GridConfig, SamplingGrid, SimilarityMatrix,
};
use tsnet_core::losses::{
    feature_matching_from, gradient_difference_loss, lsgan_discriminator_loss,
    lsgan_generator_loss, perceptual_loss, scalar, total_generator_loss, transformation_loss,
    LossParts, LossWeights, RandomConvExtractor,
};
use tsnet_core::networks::{DiscriminatorOutput, Generator, GeneratorConfig, GeneratorInput};

use super::*;

pub type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn grid_points(g: &SamplingGrid) -> Vec<[f64; 2]> {
    tensor_to_vec(g.coords())
        .chunks(2)
        .map(|c| [c[0], c[1]])
        .collect()
}

fn flat_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

fn valid_of(s: &SimilarityMatrix) -> Vec<Vec<bool>> {
    s.valid_flags()
        .unwrap()
        .into_iter()
        .map(|r| r.into_iter().map(|v| v == 1).collect())
        .collect()
}

/// Scalar-loop oracles for the four geometry primitives on random instances.
pub fn geometry_oracles(instances: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let h = r.random_range(1..=6);
        let w = r.random_range(1..=6);
        let c = r.random_range(1..=8);
        let tau = [1.0, 10.0, 100.0][i % 3];
        let e = Map::random(&mut r, c, h, w);
        let f = Map::random(&mut r, c, h, w);
        let bs = random_cells(&mut r, h, w);
        let bd = random_cells(&mut r, h, w);

        let full = cosine_similarity(&e.tensor(), &f.tensor()).map_err(e2s)?;
        let want = cosine_oracle(&e, &f);
        worst = worst.max(max_abs_diff(
            &tensor_to_vec(&full.values),
            &flat_rows(&want),
        ));

        let masked = mask_aware_similarity(&e.tensor(), &f.tensor(), &bs, &bd).map_err(e2s)?;
        let part = partition_oracle(&bs, &bd, h, w);
        let got_valid = valid_of(&masked);
        let fallback = got_valid.iter().all(|r| r.iter().all(|&v| v));
        if !fallback {
            ensure(got_valid == part, || {
                format!("instance {i}: valid pattern differs from partition")
            })?;
        } else {
            let row_empty = part.iter().any(|r| !r.iter().any(|&v| v));
            let all_inside = part.iter().all(|r| r.iter().all(|&v| v));
            ensure(row_empty || all_inside, || {
                format!("instance {i}: unexpected fallback")
            })?;
        }
        let masked_vals = tensor_to_vec(&masked.values);
        let want_masked: Vec<f64> = want
            .iter()
            .zip(&got_valid)
            .flat_map(|(row, ok)| row.iter().zip(ok).map(|(&v, &k)| if k { v } else { 0.0 }))
            .collect();
        worst = worst.max(max_abs_diff(&masked_vals, &want_masked));

        let cfg = GridConfig::new(tau).map_err(e2s)?;
        let base = regular_grid(h, w, DType::F64, &Device::Cpu).map_err(e2s)?;
        let grid = weighted_grid(&masked, &base, &cfg).map_err(e2s)?;
        let want_grid = weighted_grid_oracle(&want, &got_valid, &regular_grid_oracle(h, w), tau);
        worst = worst.max(max_abs_diff(&flat(&grid_points(&grid)), &flat(&want_grid)));

        // Warp a different-sized map with a random grid reaching past the border.
        let (hs, ws) = (r.random_range(1..=6), r.random_range(1..=6));
        let src = Map::random(&mut r, c, hs, ws);
        let pts: Vec<[f64; 2]> = (0..h * w)
            .map(|_| [r.random_range(-1.2..1.2), r.random_range(-1.2..1.2)])
            .collect();
        let g =
            SamplingGrid::new(Tensor::from_vec(flat(&pts), (1, h, w, 2), &Device::Cpu).unwrap())
                .map_err(e2s)?;
        let warped = warp_features(&src.tensor().unsqueeze(0).unwrap(), &g).map_err(e2s)?;
        let want_warp = warp_oracle(&src, &pts, h, w);
        worst = worst.max(max_abs_diff(&tensor_to_vec(&warped), &want_warp.data));
    }
    ensure(worst <= 1e-6, || {
        format!("max abs error {worst:.3e} > 1e-6")
    })?;
    Ok(format!("{instances} instances, max abs error {worst:.2e}"))
}

pub fn flat(pts: &[[f64; 2]]) -> Vec<f64> {
    pts.iter().flatten().copied().collect()
}

/// Mask-aware grids equal full-similarity grids with cross-partition entries
/// masked, bit for bit, and evaluate fewer affinities.
pub fn mask_aware_equivalence(partitions: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let mut checked_smaller = 0;
    for i in 0..partitions {
        let (h, w, c) = (
            r.random_range(2..=6),
            r.random_range(2..=6),
            r.random_range(1..=8),
        );
        let dtype = if i % 2 == 0 { DType::F64 } else { DType::F32 };
        let e = Map::random(&mut r, c, h, w)
            .tensor()
            .to_dtype(dtype)
            .unwrap();
        let f = Map::random(&mut r, c, h, w)
            .tensor()
            .to_dtype(dtype)
            .unwrap();
        let bs = random_cells(&mut r, h, w);
        let bd = random_cells(&mut r, h, w);
        let aware = mask_aware_similarity(&e, &f, &bs, &bd).map_err(e2s)?;
        let full = cosine_similarity(&e, &f).map_err(e2s)?;
        let part = partition_oracle(&bs, &bd, h, w);
        let degenerate = part.iter().any(|row| !row.iter().any(|&v| v));
        let valid: Vec<u8> = if degenerate {
            vec![1; h * w * h * w]
        } else {
            part.iter().flatten().map(|&v| v as u8).collect()
        };
        let n = h * w;
        let masked_full = SimilarityMatrix {
            values: full.values.clone(),
            valid: Tensor::from_vec(valid, (n, n), &Device::Cpu).unwrap(),
            computed_entries: full.computed_entries,
        };
        let base = regular_grid(h, w, dtype, &Device::Cpu).map_err(e2s)?;
        let cfg = GridConfig::default();
        let a = tensor_to_vec(weighted_grid(&aware, &base, &cfg).map_err(e2s)?.coords());
        let b = tensor_to_vec(
            weighted_grid(&masked_full, &base, &cfg)
                .map_err(e2s)?
                .coords(),
        );
        ensure(a == b, || {
            format!(
                "partition {i}: grids differ by {:.3e}",
                max_abs_diff(&a, &b)
            )
        })?;

        let inside = |b: &CellBox| b.area();
        let nondegenerate = |b: &CellBox| inside(b) > 0 && inside(b) < n;
        if nondegenerate(&bs) && nondegenerate(&bd) {
            ensure(aware.computed_entries < n * n, || {
                format!(
                    "partition {i}: {} entries computed, not fewer than {}",
                    aware.computed_entries,
                    n * n
                )
            })?;
            checked_smaller += 1;
        }
    }
    Ok(format!(
        "{partitions} partitions identical, {checked_smaller} with strictly fewer entries"
    ))
}

fn var_f64(data: &[f64], shape: &[usize]) -> Var {
    Var::from_tensor(&Tensor::from_vec(data.to_vec(), shape, &Device::Cpu).unwrap()).unwrap()
}

fn dot(t: &Tensor, weights: &[f64]) -> Tensor {
    let w = Tensor::from_vec(weights.to_vec(), t.dims(), &Device::Cpu).unwrap();
    (t * w).unwrap().sum_all().unwrap()
}

/// Coordinates whose pixel position is at least `margin` from every integer
/// and from the border, so finite differences never straddle a kink.
fn smooth_coords(r: &mut impl Rng, count: usize, n_pixels: usize, margin: f64) -> Vec<f64> {
    (0..count)
        .map(|_| loop {
            let u: f64 = r.random_range(-1.0..1.0);
            let p = (u + 1.0) / 2.0 * (n_pixels - 1) as f64;
            let frac = p - p.floor();
            if frac > margin && frac < 1.0 - margin {
                break u;
            }
        })
        .collect()
}

/// Analytic gradients against central finite differences on 3×3 instances.
pub fn gradient_checks(instances: usize, seed: u64) -> Check {
    const H: f64 = 1e-4;
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let (h, w, c) = (3, 3, 4);
    let n = h * w;
    for _ in 0..instances {
        // weighted_grid with respect to the similarity values.
        let tau = 5.0;
        let s0: Vec<f64> = (0..n * n).map(|_| r.random_range(-1.0..1.0)).collect();
        let proj: Vec<f64> = (0..n * 2).map(|_| r.random_range(-1.0..1.0)).collect();
        let valid = Tensor::ones((n, n), DType::U8, &Device::Cpu).unwrap();
        let base = regular_grid(h, w, DType::F64, &Device::Cpu).map_err(e2s)?;
        let cfg = GridConfig::new(tau).map_err(e2s)?;
        let objective = |s: &Tensor| -> Tensor {
            let m = SimilarityMatrix {
                values: s.clone(),
                valid: valid.clone(),
                computed_entries: n * n,
            };
            dot(weighted_grid(&m, &base, &cfg).unwrap().coords(), &proj)
        };
        let v = var_f64(&s0, &[n, n]);
        let grads = objective(v.as_tensor()).backward().map_err(e2s)?;
        let analytic = tensor_to_vec(grads.get(v.as_tensor()).ok_or("no gradient for S")?);
        let numeric = numeric_gradient(&s0, H, |x| {
            scalar(&objective(
                &Tensor::from_vec(x.to_vec(), (n, n), &Device::Cpu).unwrap(),
            ))
            .unwrap()
        });
        worst = worst.max(relative_error(&analytic, &numeric));

        // warp_features with respect to the features and the grid.
        let feats: Vec<f64> = (0..c * n).map(|_| r.random_range(-1.0..1.0)).collect();
        let coords = smooth_coords(&mut r, n * 2, 3, 0.05);
        let proj: Vec<f64> = (0..c * n).map(|_| r.random_range(-1.0..1.0)).collect();
        let objective = |f: &Tensor, g: &Tensor| -> Tensor {
            dot(
                &warp_features(f, &SamplingGrid::new(g.clone()).unwrap()).unwrap(),
                &proj,
            )
        };
        let fv = var_f64(&feats, &[1, c, h, w]);
        let gv = var_f64(&coords, &[1, h, w, 2]);
        let grads = objective(fv.as_tensor(), gv.as_tensor())
            .backward()
            .map_err(e2s)?;
        let df = tensor_to_vec(grads.get(fv.as_tensor()).ok_or("no feature gradient")?);
        let dg = tensor_to_vec(grads.get(gv.as_tensor()).ok_or("no grid gradient")?);
        let grid_t = gv.as_tensor().detach();
        let feat_t = fv.as_tensor().detach();
        let nf = numeric_gradient(&feats, H, |x| {
            scalar(&objective(
                &Tensor::from_vec(x.to_vec(), (1, c, h, w), &Device::Cpu).unwrap(),
                &grid_t,
            ))
            .unwrap()
        });
        let ng = numeric_gradient(&coords, H, |x| {
            scalar(&objective(
                &feat_t,
                &Tensor::from_vec(x.to_vec(), (1, h, w, 2), &Device::Cpu).unwrap(),
            ))
            .unwrap()
        });
        worst = worst
            .max(relative_error(&df, &nf))
            .max(relative_error(&dg, &ng));
    }
    ensure(worst <= 1e-3, || {
        format!("worst relative error {worst:.3e} > 1e-3")
    })?;
    Ok(format!(
        "{instances} instances, worst relative error {worst:.2e}"
    ))
}

fn outputs(features: Vec<Tensor>) -> DiscriminatorOutput {
    DiscriminatorOutput {
        scores: features[0].clone(),
        features,
    }
}

/// Zero losses on identical inputs, the weighted total, LSGAN closed forms.
pub fn loss_identities(seed: u64) -> Check {
    let dev = Device::Cpu;
    let x = Tensor::rand(0f32, 1., (2, 3, 32, 32), &dev).map_err(e2s)?;
    let ext = RandomConvExtractor::new(seed, &[8, 8, 8], DType::F32, &dev).map_err(e2s)?;
    let feats = |t: &Tensor| outputs(vec![t.clone(), t.sqr().unwrap()]);
    let zeros = [
        (
            "perceptual",
            scalar(&perceptual_loss(&ext, &x, &x.copy().unwrap()).map_err(e2s)?).map_err(e2s)?,
        ),
        (
            "feature matching",
            scalar(&feature_matching_from(&feats(&x), &feats(&x)).map_err(e2s)?).map_err(e2s)?,
        ),
        (
            "transformation",
            scalar(&transformation_loss(&[x.clone(), x.clone()], &x).map_err(e2s)?).map_err(e2s)?,
        ),
        (
            "gradient difference",
            scalar(&gradient_difference_loss(&x, &x).map_err(e2s)?).map_err(e2s)?,
        ),
    ];
    for (name, v) in zeros {
        ensure(v == 0.0, || {
            format!("{name} loss on identical inputs is {v}")
        })?;
    }
    let unit = LossParts {
        gan: 1.0,
        vgg: 1.0,
        fm: 1.0,
        tra: 1.0,
        gdl: 0.0,
    };
    let weights = LossWeights {
        gdl_weight: 0.0,
        ..LossWeights::default()
    };
    let total = total_generator_loss(&unit, &weights, false).map_err(e2s)?;
    ensure(total == 31.0, || {
        format!("weighted total {total}, expected 31")
    })?;

    let s = |v: f64| Tensor::full(v, (2, 1, 6, 6), &dev).unwrap();
    let cases = [
        (
            "D perfect",
            scalar(&lsgan_discriminator_loss(&s(1.0), &s(0.0)).map_err(e2s)?).map_err(e2s)?,
            0.0,
        ),
        (
            "G fooling",
            scalar(&lsgan_generator_loss(&s(1.0)).map_err(e2s)?).map_err(e2s)?,
            0.0,
        ),
        (
            "D at 0.5",
            scalar(&lsgan_discriminator_loss(&s(0.5), &s(0.5)).map_err(e2s)?).map_err(e2s)?,
            0.25,
        ),
        (
            "G at 0",
            scalar(&lsgan_generator_loss(&s(0.0)).map_err(e2s)?).map_err(e2s)?,
            0.5,
        ),
        (
            "D inverted",
            scalar(&lsgan_discriminator_loss(&s(0.0), &s(1.0)).map_err(e2s)?).map_err(e2s)?,
            1.0,
        ),
    ];
    for (name, got, want) in cases {
        ensure((got - want).abs() <= 1e-8, || {
            format!("LSGAN {name}: {got} vs {want}")
        })?;
    }
    Ok("zero terms, total 31, LSGAN closed forms hold".into())
}

fn small_generator(size: usize, k: usize, dtype: DType) -> Generator {
    let cfg = GeneratorConfig {
        k,
        base_channels: 4,
        image_size: (size, size),
        image_res_blocks: 1,
        decoder_res_blocks: 1,
        ..GeneratorConfig::default()
    };
    Generator::new(cfg, 7, dtype, &Device::Cpu).unwrap()
}

/// Encoder resolution, low-temperature centroid, identity warp, subject-frame
/// permutation invariance.
pub fn shape_and_limit_invariants(seed: u64) -> Check {
    let dev = Device::Cpu;
    for size in [64, 128, 256] {
        let g = small_generator(size, 1, DType::F32);
        let x = Tensor::rand(0f32, 1., (1, 3, size, size), &dev).map_err(e2s)?;
        let m = Tensor::zeros((1, 1, size, size), DType::F32, &dev).map_err(e2s)?;
        let e = g.encode_image(&x, &m).map_err(e2s)?;
        let f = g.encode_mask(&m).map_err(e2s)?;
        let want = (1, 16, size / 8, size / 8);
        ensure(
            e.dims4().unwrap() == want && f.dims4().unwrap() == want,
            || format!("{size}px input encoded to {:?} / {:?}", e.dims(), f.dims()),
        )?;
    }

    let mut r = rng(seed);
    let mut worst_centroid = 0.0f64;
    for _ in 0..20 {
        let (h, w, c) = (
            r.random_range(2..=6),
            r.random_range(2..=6),
            r.random_range(1..=8),
        );
        let e = Map::random(&mut r, c, h, w).tensor();
        let f = Map::random(&mut r, c, h, w).tensor();
        let (bs, bd) = (random_cells(&mut r, h, w), random_cells(&mut r, h, w));
        let s = mask_aware_similarity(&e, &f, &bs, &bd).map_err(e2s)?;
        let base = regular_grid(h, w, DType::F64, &dev).map_err(e2s)?;
        let got = grid_points(
            &weighted_grid(&s, &base, &GridConfig::new(1e-9).map_err(e2s)?).map_err(e2s)?,
        );
        let pts = regular_grid_oracle(h, w);
        for (row, g) in valid_of(&s).iter().zip(&got) {
            let chosen: Vec<&[f64; 2]> = pts
                .iter()
                .zip(row)
                .filter(|(_, &v)| v)
                .map(|(p, _)| p)
                .collect();
            let cnt = chosen.len() as f64;
            let cx = chosen.iter().map(|p| p[0]).sum::<f64>() / cnt;
            let cy = chosen.iter().map(|p| p[1]).sum::<f64>() / cnt;
            worst_centroid = worst_centroid.max((g[0] - cx).abs()).max((g[1] - cy).abs());
        }
    }
    ensure(worst_centroid <= 1e-5, || {
        format!("low-temperature grid is {worst_centroid:.3e} from the centroid")
    })?;

    for dtype in [DType::F32, DType::F64] {
        for (h, w) in [(1, 1), (3, 5), (6, 6), (32, 32)] {
            let x = Tensor::randn(0f32, 1., (2, 5, h, w), &dev)
                .unwrap()
                .to_dtype(dtype)
                .unwrap();
            let base = regular_grid(h, w, dtype, &dev).map_err(e2s)?;
            let g = SamplingGrid::cat(&[base.clone(), base]).map_err(e2s)?;
            let y = warp_features(&x, &g).map_err(e2s)?;
            ensure(tensor_to_vec(&x) == tensor_to_vec(&y), || {
                format!("identity warp changed a {h}x{w} {dtype:?} map")
            })?;
        }
    }

    let data = generate(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })
    .map_err(e2s)?;
    let samples = sample_training_batch(&data, 3, 2, seed).map_err(e2s)?;
    let g = small_generator(64, 3, DType::F64);
    let input = GeneratorInput::from_samples(&samples, DType::F64, &dev).map_err(e2s)?;
    let base = tensor_to_vec(&g.generate(&input).map_err(e2s)?.frame);
    let mut worst_perm = 0.0f64;
    for perm in [[1, 0, 2], [2, 1, 0], [1, 2, 0]] {
        let out = g
            .generate(&input.permute_subjects(&perm).map_err(e2s)?)
            .map_err(e2s)?;
        worst_perm = worst_perm.max(max_abs_diff(&base, &tensor_to_vec(&out.frame)));
    }
    ensure(worst_perm <= 1e-6, || {
        format!("subject permutation changed the output by {worst_perm:.3e}")
    })?;
    Ok(format!(
        "1/8 encoder at 64/128/256, centroid error {worst_centroid:.1e}, exact identity warp, permutation diff {worst_perm:.1e}"
    ))
}
