//! Dataset ingestion: keypoint sidecars, skeleton rasterization, driving-mask
//! alignment, sample drawing and augmentation.

pub mod augment;
pub mod dataset;
pub mod image;
pub mod keypoints;
pub mod normalize;
pub mod raster;
pub mod sampling;
pub mod synthetic;

pub use augment::{augment, augment_sample, AugmentConfig, AugmentParams};
pub use dataset::{Dataset, KeypointFile, Manifest, ManifestEntry, VideoClip};
pub use image::Image;
pub use keypoints::{BoundingBox, CellBox, KeypointSet, Schema};
pub use normalize::{
    normalize_driving_clip, normalize_driving_mask, BoxStats, SimilarityTransform,
};
pub use raster::{rasterize_mask, MaskFrame, RasterStyle};
pub use sampling::{sample_cross_identity_batch, sample_training_batch, TrainingSample};
