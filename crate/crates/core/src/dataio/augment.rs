//! Color jitter and horizontal flips. Geometry changes apply to frames and
//! keypoints together; color changes touch frames only.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::raster::{rasterize_mask, MaskFrame, RasterStyle};
use super::sampling::TrainingSample;
use crate::error::Result;

/// One draw of augmentation parameters. Jitter strengths are relative
/// changes; zero leaves the frame untouched.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip: bool,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
}

/// Ranges augmentation parameters are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_probability: f64,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_probability: 0.5,
            brightness: 0.1,
            contrast: 0.1,
            saturation: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            flip_probability: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
        }
    }

    pub fn draw(&self, rng: &mut impl Rng) -> AugmentParams {
        let mut sym = |r: f32| {
            if r > 0.0 {
                rng.random_range(-r..=r)
            } else {
                0.0
            }
        };
        let (brightness, contrast, saturation) = (
            sym(self.brightness),
            sym(self.contrast),
            sym(self.saturation),
        );
        AugmentParams {
            flip: self.flip_probability > 0.0 && rng.random_bool(self.flip_probability),
            brightness,
            contrast,
            saturation,
        }
    }
}

fn luma(frame: &Image, y: usize, x: usize) -> f32 {
    0.299 * frame.get(0, y, x) + 0.587 * frame.get(1, y, x) + 0.114 * frame.get(2, y, x)
}

/// Brightness, contrast and saturation jitter on an RGB frame.
pub fn color_jitter(frame: &Image, params: &AugmentParams) -> Image {
    let mut out = frame.clone();
    let (h, w) = (frame.height(), frame.width());
    if params.brightness != 0.0 {
        let f = 1.0 + params.brightness;
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = (*v * f).clamp(0.0, 1.0));
    }
    if params.contrast != 0.0 {
        let f = 1.0 + params.contrast;
        let mean = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .map(|(y, x)| luma(&out, y, x))
            .sum::<f32>()
            / (h * w) as f32;
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = ((*v - mean) * f + mean).clamp(0.0, 1.0));
    }
    if params.saturation != 0.0 && out.channels() == 3 {
        let f = 1.0 + params.saturation;
        for y in 0..h {
            for x in 0..w {
                let g = luma(&out, y, x);
                for c in 0..3 {
                    let v = out.get(c, y, x);
                    out.set(c, y, x, ((v - g) * f + g).clamp(0.0, 1.0));
                }
            }
        }
    }
    out
}

/// Apply `params` to a frame and its mask. The mask is redrawn from the
/// (possibly mirrored) keypoints so its channels follow the swapped
/// left/right labels.
pub fn augment(
    frame: &Image,
    mask: &MaskFrame,
    params: &AugmentParams,
    style: &RasterStyle,
) -> Result<(Image, MaskFrame)> {
    let mut frame = color_jitter(frame, params);
    let mask = if params.flip {
        frame = frame.flip_horizontal();
        let kps = mask.keypoints.flip_horizontal(frame.width());
        rasterize_mask(&kps, (frame.height(), frame.width()), style)?
    } else {
        mask.clone()
    };
    Ok((frame, mask))
}

/// Apply one parameter draw to every frame and mask of a sample.
pub fn augment_sample(
    sample: &TrainingSample,
    params: &AugmentParams,
    style: &RasterStyle,
) -> Result<TrainingSample> {
    let mut out = sample.clone();
    for (f, m) in out
        .subject_frames
        .iter_mut()
        .zip(out.subject_masks.iter_mut())
    {
        let (f2, m2) = augment(f, m, params, style)?;
        *f = f2;
        *m = m2;
    }
    let (target, driving) = augment(&sample.target_frame, &sample.driving_mask, params, style)?;
    out.target_frame = target;
    out.driving_mask = driving;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::keypoints::{KeypointSet, Schema};

    #[test]
    fn zero_strength_jitter_is_identity() {
        let data: Vec<f32> = (0..3 * 5 * 4).map(|i| (i as f32 * 0.37).fract()).collect();
        let frame = Image::from_vec(3, 5, 4, data).unwrap();
        assert_eq!(color_jitter(&frame, &AugmentParams::default()), frame);
    }

    #[test]
    fn jitter_stays_in_range() {
        let data: Vec<f32> = (0..3 * 6 * 6).map(|i| (i as f32 * 0.61).fract()).collect();
        let frame = Image::from_vec(3, 6, 6, data).unwrap();
        let p = AugmentParams {
            flip: false,
            brightness: 0.5,
            contrast: 0.8,
            saturation: 0.9,
        };
        assert!(color_jitter(&frame, &p)
            .data()
            .iter()
            .all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn flip_maps_jaw_endpoints_through_the_mirror_table() {
        let w = 64usize;
        let pts: Vec<[f64; 2]> = (0..68)
            .map(|i| [3.0 + i as f64 * 0.75, 10.0 + i as f64 * 0.5])
            .collect();
        let kps = KeypointSet::all_visible(Schema::Face68, pts.clone()).unwrap();
        let flipped = kps.flip_horizontal(w);
        // explicit table: position of landmark 0 after flipping is landmark 16
        assert_eq!(flipped.points[16], [(w - 1) as f64 - pts[0][0], pts[0][1]]);
        assert_eq!(flipped.points[0], [(w - 1) as f64 - pts[16][0], pts[16][1]]);
        assert_eq!(
            flipped.points[30],
            [(w - 1) as f64 - pts[30][0], pts[30][1]]
        );
    }
}
