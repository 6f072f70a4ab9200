//! Keypoint schemas, skeleton topology and left/right mirror tables.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Keypoint layout produced by an upstream detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    /// 68-point facial landmarks.
    Face68,
    /// 25 body joints, 70 face points, 21 left-hand and 21 right-hand points,
    /// in that order.
    Body,
}

const BODY_JOINTS: usize = 25;
const BODY_FACE: usize = 70;
const HAND: usize = 21;
const FACE_OFFSET: usize = BODY_JOINTS;
const LEFT_HAND_OFFSET: usize = BODY_JOINTS + BODY_FACE;
const RIGHT_HAND_OFFSET: usize = LEFT_HAND_OFFSET + HAND;

impl Schema {
    pub fn num_points(self) -> usize {
        match self {
            Schema::Face68 => 68,
            Schema::Body => BODY_JOINTS + BODY_FACE + 2 * HAND,
        }
    }

    /// Raster channels: one for faces; torso, four limbs, face and two hands
    /// for bodies.
    pub fn mask_channels(self) -> usize {
        match self {
            Schema::Face68 => 1,
            Schema::Body => 8,
        }
    }

    /// Indices of the facial points within the set, used to crop faces.
    pub fn face_range(self) -> std::ops::Range<usize> {
        match self {
            Schema::Face68 => 0..68,
            Schema::Body => FACE_OFFSET..FACE_OFFSET + BODY_FACE,
        }
    }

    /// Skeleton segments as `(channel, a, b)`.
    pub fn segments(self) -> Vec<(usize, usize, usize)> {
        match self {
            Schema::Face68 => face68_segments(0)
                .into_iter()
                .map(|(a, b)| (0, a, b))
                .collect(),
            Schema::Body => body_segments(),
        }
    }

    /// Channel a lone point is drawn into when no segment touches it.
    pub fn point_channel(self, index: usize) -> usize {
        match self {
            Schema::Face68 => 0,
            Schema::Body => match index {
                i if i < BODY_JOINTS => match i {
                    2..=4 => 1,
                    5..=7 => 2,
                    9..=11 | 22..=24 => 3,
                    12..=14 | 19..=21 => 4,
                    _ => 0,
                },
                i if i < LEFT_HAND_OFFSET => 5,
                i if i < RIGHT_HAND_OFFSET => 6,
                _ => 7,
            },
        }
    }

    /// `mirror[i]` is the index that point `i` becomes after a horizontal flip.
    pub fn mirror_table(self) -> Vec<usize> {
        match self {
            Schema::Face68 => FACE68_MIRROR.to_vec(),
            Schema::Body => {
                let mut t: Vec<usize> = BODY25_MIRROR.to_vec();
                t.extend(FACE68_MIRROR.iter().map(|i| i + FACE_OFFSET));
                // pupils
                t.push(FACE_OFFSET + 69);
                t.push(FACE_OFFSET + 68);
                t.extend((0..HAND).map(|i| RIGHT_HAND_OFFSET + i));
                t.extend((0..HAND).map(|i| LEFT_HAND_OFFSET + i));
                t
            }
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schema::Face68 => "face68",
            Schema::Body => "body",
        })
    }
}

impl FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "face68" => Ok(Schema::Face68),
            "body" => Ok(Schema::Body),
            other => Err(Error::Config(format!("unknown schema `{other}`"))),
        }
    }
}

#[rustfmt::skip]
const FACE68_MIRROR: [usize; 68] = [
    // jaw
    16, 15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0,
    // brows
    26, 25, 24, 23, 22, 21, 20, 19, 18, 17,
    // nose bridge, nostrils
    27, 28, 29, 30, 35, 34, 33, 32, 31,
    // eyes
    45, 44, 43, 42, 47, 46, 39, 38, 37, 36, 41, 40,
    // outer lip
    54, 53, 52, 51, 50, 49, 48, 59, 58, 57, 56, 55,
    // inner lip
    64, 63, 62, 61, 60, 67, 66, 65,
];

#[rustfmt::skip]
const BODY25_MIRROR: [usize; 25] = [
    0, 1, 5, 6, 7, 2, 3, 4, 8, 12, 13, 14, 9, 10, 11, 16, 15, 18, 17, 22, 23, 24, 19, 20, 21,
];

fn chain(range: std::ops::RangeInclusive<usize>, closed: bool) -> Vec<(usize, usize)> {
    let (start, end) = (*range.start(), *range.end());
    let mut segs: Vec<(usize, usize)> = (start..end).map(|i| (i, i + 1)).collect();
    if closed {
        segs.push((end, start));
    }
    segs
}

fn face68_segments(offset: usize) -> Vec<(usize, usize)> {
    let mut segs = Vec::new();
    segs.extend(chain(0..=16, false));
    segs.extend(chain(17..=21, false));
    segs.extend(chain(22..=26, false));
    segs.extend(chain(27..=30, false));
    segs.extend(chain(31..=35, false));
    segs.extend(chain(36..=41, true));
    segs.extend(chain(42..=47, true));
    segs.extend(chain(48..=59, true));
    segs.extend(chain(60..=67, true));
    segs.into_iter()
        .map(|(a, b)| (a + offset, b + offset))
        .collect()
}

fn hand_segments(offset: usize) -> Vec<(usize, usize)> {
    let mut segs = Vec::new();
    for finger in 0..5 {
        let base = 1 + finger * 4;
        segs.push((0, base));
        segs.extend(chain(base..=base + 3, false));
    }
    segs.into_iter()
        .map(|(a, b)| (a + offset, b + offset))
        .collect()
}

fn body_segments() -> Vec<(usize, usize, usize)> {
    const TORSO: [(usize, usize); 10] = [
        (1, 8),
        (1, 2),
        (1, 5),
        (1, 0),
        (0, 15),
        (15, 17),
        (0, 16),
        (16, 18),
        (8, 9),
        (8, 12),
    ];
    const RIGHT_ARM: [(usize, usize); 2] = [(2, 3), (3, 4)];
    const LEFT_ARM: [(usize, usize); 2] = [(5, 6), (6, 7)];
    const RIGHT_LEG: [(usize, usize); 5] = [(9, 10), (10, 11), (11, 22), (22, 23), (11, 24)];
    const LEFT_LEG: [(usize, usize); 5] = [(12, 13), (13, 14), (14, 19), (19, 20), (14, 21)];

    let mut segs = Vec::new();
    let groups: [&[(usize, usize)]; 5] = [&TORSO, &RIGHT_ARM, &LEFT_ARM, &RIGHT_LEG, &LEFT_LEG];
    for (ch, group) in groups.iter().enumerate() {
        segs.extend(group.iter().map(|&(a, b)| (ch, a, b)));
    }
    segs.extend(
        face68_segments(FACE_OFFSET)
            .into_iter()
            .map(|(a, b)| (5, a, b)),
    );
    segs.extend(
        hand_segments(LEFT_HAND_OFFSET)
            .into_iter()
            .map(|(a, b)| (6, a, b)),
    );
    segs.extend(
        hand_segments(RIGHT_HAND_OFFSET)
            .into_iter()
            .map(|(a, b)| (7, a, b)),
    );
    segs
}

/// Axis-aligned box in pixel units, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

/// A box on a coarse grid of cells, inclusive cell indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CellBox {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: width - 1,
            y1: height - 1,
        }
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..=self.y1).contains(&y) && (self.x0..=self.x1).contains(&x)
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        debug_assert!(x_min <= x_max && y_min <= y_max);
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Downsample to a grid of `stride`-pixel cells, rounding outward so the
    /// result always covers the pixel box. Clamped to the grid.
    pub fn to_cells(&self, stride: usize, grid_h: usize, grid_w: usize) -> CellBox {
        let s = stride as f64;
        let cell = |v: f64, n: usize| ((v / s).floor().max(0.0) as usize).min(n - 1);
        CellBox {
            x0: cell(self.x_min, grid_w),
            y0: cell(self.y_min, grid_h),
            x1: cell(self.x_max, grid_w),
            y1: cell(self.y_max, grid_h),
        }
    }
}

/// A detector's output for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub schema: Schema,
    pub points: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
}

impl KeypointSet {
    pub fn new(schema: Schema, points: Vec<[f64; 2]>, visibility: Vec<bool>) -> Result<Self> {
        let set = Self {
            schema,
            points,
            visibility,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn all_visible(schema: Schema, points: Vec<[f64; 2]>) -> Result<Self> {
        let n = points.len();
        Self::new(schema, points, vec![true; n])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.schema.num_points();
        if self.points.len() != n || self.visibility.len() != n {
            return Err(Error::InvalidKeypoints(format!(
                "{} expects {n} points, got {} points and {} visibility flags",
                self.schema,
                self.points.len(),
                self.visibility.len()
            )));
        }
        if self
            .points
            .iter()
            .zip(&self.visibility)
            .any(|(p, v)| *v && !(p[0].is_finite() && p[1].is_finite()))
        {
            return Err(Error::InvalidKeypoints("non-finite visible point".into()));
        }
        Ok(())
    }

    pub fn visible_points(&self) -> impl Iterator<Item = (usize, [f64; 2])> + '_ {
        self.points
            .iter()
            .zip(&self.visibility)
            .enumerate()
            .filter(|(_, (_, v))| **v)
            .map(|(i, (p, _))| (i, *p))
    }

    pub fn visible_count(&self) -> usize {
        self.visibility.iter().filter(|v| **v).count()
    }

    /// Clamp visible points into a `width`×`height` frame.
    pub fn clamped(&self, height: usize, width: usize) -> Self {
        let mut out = self.clone();
        let (xm, ym) = (width as f64 - 1.0, height as f64 - 1.0);
        for (p, v) in out.points.iter_mut().zip(&out.visibility) {
            if *v {
                p[0] = p[0].clamp(0.0, xm);
                p[1] = p[1].clamp(0.0, ym);
            }
        }
        out
    }

    /// Bounding box of the visible points in `range` (all points when `None`).
    pub fn bbox_of(&self, range: Option<std::ops::Range<usize>>) -> Option<BoundingBox> {
        let range = range.unwrap_or(0..self.points.len());
        let mut it = self.visible_points().filter(|(i, _)| range.contains(i));
        let (_, first) = it.next()?;
        let mut b = BoundingBox::new(first[0], first[1], first[0], first[1]);
        for (_, p) in it {
            b.x_min = b.x_min.min(p[0]);
            b.y_min = b.y_min.min(p[1]);
            b.x_max = b.x_max.max(p[0]);
            b.y_max = b.y_max.max(p[1]);
        }
        Some(b)
    }

    pub fn bbox(&self) -> Option<BoundingBox> {
        self.bbox_of(None)
    }

    /// Mirror about the vertical axis of a `width`-pixel frame, swapping
    /// left/right indices so that e.g. the left eye stays labelled left.
    pub fn flip_horizontal(&self, width: usize) -> Self {
        let table = self.schema.mirror_table();
        let w = width as f64 - 1.0;
        let mut points = vec![[0.0; 2]; self.points.len()];
        let mut visibility = vec![false; self.points.len()];
        for (src, &dst) in table.iter().enumerate() {
            let p = self.points[src];
            points[dst] = [w - p[0], p[1]];
            visibility[dst] = self.visibility[src];
        }
        Self {
            schema: self.schema,
            points,
            visibility,
        }
    }

    /// Map every point through `p ↦ scale·p + offset`.
    pub fn transformed(&self, scale: f64, offset: [f64; 2]) -> Self {
        let mut out = self.clone();
        for p in &mut out.points {
            p[0] = scale * p[0] + offset[0];
            p[1] = scale * p[1] + offset[1];
        }
        out
    }

    pub fn scaled_xy(&self, sx: f64, sy: f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.points {
            p[0] *= sx;
            p[1] *= sy;
        }
        out
    }
}
