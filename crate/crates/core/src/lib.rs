//! Keypoint-driven video motion retargeting with a two-branch generator: a
//! transformation branch that warps subject features along a
//! similarity-weighted sampling grid, and a synthesis branch that fuses
//! subject and driving features directly.

pub mod dataio;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod networks;
pub mod retarget;
pub mod trainer;

pub use error::{Error, Result};
