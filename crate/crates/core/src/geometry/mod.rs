//! Grids, affinities and warps.
//!
//! Feature maps are `(C, H, W)` for the per-pair similarity functions and
//! `(B, C, H, W)` for the warps. All operations are built from differentiable
//! tensor ops, so gradients reach features, affinities and grids.

pub mod grid;
pub mod similarity;
pub mod warp;

pub use grid::{axis_coord, regular_grid, GridConfig, SamplingGrid};
pub use similarity::{
    cosine_similarity, mask_aware_similarity, weighted_grid, SimilarityMatrix, COSINE_EPS,
};
pub use warp::{bilinear_sample, warp_features, warp_image_patchwise, PATCH};
