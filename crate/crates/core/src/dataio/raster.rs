//! Keypoint skeletons drawn into anti-aliased mask images.

use serde::{Deserialize, Serialize};

use super::image::Image;
use super::keypoints::{BoundingBox, KeypointSet};
use crate::error::{Error, Result};

/// Stroke geometry. Values are given at `reference_size` and scale with the
/// smaller frame dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterStyle {
    /// Distance at which intensity reaches zero.
    pub radius: f64,
    /// Frame size at which `radius` applies.
    pub reference_size: f64,
}

impl Default for RasterStyle {
    fn default() -> Self {
        Self {
            radius: 3.0,
            reference_size: 256.0,
        }
    }
}

impl RasterStyle {
    /// Radius in pixels for a frame of the given size; never below one pixel.
    pub fn radius_for(&self, height: usize, width: usize) -> f64 {
        let s = height.min(width) as f64 / self.reference_size;
        (self.radius * s).max(1.0)
    }
}

/// A rasterized keypoint mask plus the geometry it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskFrame {
    pub raster: Image,
    pub keypoints: KeypointSet,
    pub bbox: BoundingBox,
}

/// Distance from `p` to the segment `a`–`b`.
pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

/// Full intensity within half the radius, linear falloff to zero at the radius.
fn intensity(d: f64, radius: f64) -> f64 {
    let core = 0.5 * radius;
    if d <= core {
        1.0
    } else if d < radius {
        (radius - d) / (radius - core)
    } else {
        0.0
    }
}

fn draw_segment(raster: &mut Image, ch: usize, a: [f64; 2], b: [f64; 2], radius: f64) {
    let (h, w) = (raster.height(), raster.width());
    let x_lo = (a[0].min(b[0]) - radius).floor().max(0.0) as usize;
    let y_lo = (a[1].min(b[1]) - radius).floor().max(0.0) as usize;
    let x_hi = ((a[0].max(b[0]) + radius).ceil() as usize).min(w - 1);
    let y_hi = ((a[1].max(b[1]) + radius).ceil() as usize).min(h - 1);
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let v = intensity(point_segment_distance([x as f64, y as f64], a, b), radius) as f32;
            if v > raster.get(ch, y, x) {
                raster.set(ch, y, x, v);
            }
        }
    }
}

/// Draw the schema skeleton for `kps` on a black `height`×`width` canvas.
///
/// Segments are drawn when both endpoints are visible; every visible point is
/// also drawn as a dot so isolated points survive. Visible points are clamped
/// into the frame first, and the box is taken over the clamped points.
pub fn rasterize_mask(
    kps: &KeypointSet,
    size: (usize, usize),
    style: &RasterStyle,
) -> Result<MaskFrame> {
    kps.validate()?;
    let (height, width) = size;
    if kps.visible_count() == 0 {
        return Err(Error::EmptyMask);
    }
    let kps = kps.clamped(height, width);
    let radius = style.radius_for(height, width);
    let mut raster = Image::zeros(kps.schema.mask_channels(), height, width);

    for (ch, a, b) in kps.schema.segments() {
        if kps.visibility[a] && kps.visibility[b] {
            draw_segment(&mut raster, ch, kps.points[a], kps.points[b], radius);
        }
    }
    for (i, p) in kps.visible_points() {
        draw_segment(&mut raster, kps.schema.point_channel(i), p, p, radius);
    }
    let bbox = kps.bbox().expect("at least one visible point");
    Ok(MaskFrame {
        raster,
        keypoints: kps,
        bbox,
    })
}
