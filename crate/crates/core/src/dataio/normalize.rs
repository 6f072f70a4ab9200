//! Aligning driving keypoints to a subject's framing with a global
//! scale-and-translate transform.

use super::keypoints::KeypointSet;
use crate::error::{Error, Result};

/// Box center and height, the statistics that normalization matches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub center: [f64; 2],
    pub height: f64,
}

impl BoxStats {
    pub fn of(kps: &KeypointSet) -> Result<Self> {
        let b = kps
            .bbox()
            .ok_or_else(|| Error::Normalization("no visible keypoints".into()))?;
        let (cx, cy) = b.center();
        Ok(Self {
            center: [cx, cy],
            height: b.height(),
        })
    }

    /// Componentwise median over a clip.
    pub fn median_of(frames: &[KeypointSet]) -> Result<Self> {
        let stats = frames
            .iter()
            .filter(|k| k.visible_count() > 0)
            .map(Self::of)
            .collect::<Result<Vec<_>>>()?;
        if stats.is_empty() {
            return Err(Error::Normalization("clip has no usable frames".into()));
        }
        Ok(Self {
            center: [
                median(stats.iter().map(|s| s.center[0])),
                median(stats.iter().map(|s| s.center[1])),
            ],
            height: median(stats.iter().map(|s| s.height)),
        })
    }
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `p ↦ scale·p + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub offset: [f64; 2],
}

impl SimilarityTransform {
    /// The transform taking `from`'s box center and height onto `to`'s.
    pub fn between(from: &BoxStats, to: &BoxStats) -> Result<Self> {
        if to.height <= 0.0 {
            return Err(Error::Normalization("subject box has zero height".into()));
        }
        if from.height <= 0.0 {
            return Err(Error::Normalization("driving box has zero height".into()));
        }
        let scale = to.height / from.height;
        Ok(Self {
            scale,
            offset: [
                to.center[0] - scale * from.center[0],
                to.center[1] - scale * from.center[1],
            ],
        })
    }

    pub fn apply(&self, kps: &KeypointSet) -> KeypointSet {
        kps.transformed(self.scale, self.offset)
    }
}

/// Align one driving frame to a subject reference frame.
pub fn normalize_driving_mask(
    driving: &KeypointSet,
    subject_ref: &KeypointSet,
) -> Result<KeypointSet> {
    if driving.schema != subject_ref.schema {
        return Err(Error::Normalization(format!(
            "schema mismatch: driving {} vs subject {}",
            driving.schema, subject_ref.schema
        )));
    }
    let t = SimilarityTransform::between(&BoxStats::of(driving)?, &BoxStats::of(subject_ref)?)?;
    Ok(t.apply(driving))
}

/// Align a whole driving clip with one transform computed from clip medians,
/// so motion within the driving clip (including global motion) is kept.
pub fn normalize_driving_clip(
    driving: &[KeypointSet],
    subject: &[KeypointSet],
) -> Result<Vec<KeypointSet>> {
    let (Some(d0), Some(s0)) = (driving.first(), subject.first()) else {
        return Err(Error::Normalization("empty clip".into()));
    };
    if d0.schema != s0.schema {
        return Err(Error::Normalization("schema mismatch between clips".into()));
    }
    let t = SimilarityTransform::between(
        &BoxStats::median_of(driving)?,
        &BoxStats::median_of(subject)?,
    )?;
    Ok(driving.iter().map(|k| t.apply(k)).collect())
}
