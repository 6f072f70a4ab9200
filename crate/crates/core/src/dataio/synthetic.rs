//! Procedural toy clips: cartoon faces (or stick figures) whose keypoints
//! move smoothly over time. Each subject has its own colors and proportions,
//! so appearance and motion are separable.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, VideoClip};
use super::image::Image;
use super::keypoints::{KeypointSet, Schema};
use super::raster::RasterStyle;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub schema: Schema,
    pub subjects: usize,
    pub clips_per_subject: usize,
    pub frames_per_clip: usize,
    pub height: usize,
    pub width: usize,
    /// Scales the amount of head/limb motion; 0 gives static clips.
    pub motion: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            schema: Schema::Face68,
            subjects: 2,
            clips_per_subject: 1,
            frames_per_clip: 8,
            height: 64,
            width: 64,
            motion: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Appearance {
    background: [f32; 3],
    skin: [f32; 3],
    hair: [f32; 3],
    shirt: [f32; 3],
    /// Horizontal face stretch.
    aspect: f64,
}

impl Appearance {
    fn draw(rng: &mut impl Rng) -> Self {
        let mut color = |lo: f32, hi: f32| {
            [
                rng.random_range(lo..hi),
                rng.random_range(lo..hi),
                rng.random_range(lo..hi),
            ]
        };
        let background = color(0.05, 0.45);
        let skin = color(0.55, 0.95);
        let hair = color(0.0, 0.35);
        let shirt = color(0.2, 0.9);
        Self {
            background,
            skin,
            hair,
            shirt,
            aspect: rng.random_range(0.85..1.15),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Motion {
    phase: [f64; 4],
    speed: [f64; 4],
}

impl Motion {
    fn draw(rng: &mut impl Rng) -> Self {
        let mut v = || rng.random_range(0.0..2.0 * PI);
        let phase = [v(), v(), v(), v()];
        let speed = [
            rng.random_range(0.3..0.8),
            rng.random_range(0.3..0.8),
            rng.random_range(0.4..1.0),
            rng.random_range(0.2..0.6),
        ];
        Self { phase, speed }
    }

    fn wave(&self, i: usize, t: f64) -> f64 {
        (self.phase[i] + self.speed[i] * t).sin()
    }
}

/// Face landmarks in face units: origin at the nose bridge, x to the
/// image right, y down, half face width 1.
fn face_template(mouth_open: f64, yaw: f64) -> Vec<[f64; 2]> {
    let mut p = Vec::with_capacity(68);
    for i in 0..=16 {
        let a = PI * i as f64 / 16.0;
        p.push([-a.cos(), 0.1 + 1.2 * a.sin()]);
    }
    let inner = |x: f64| x + 0.2 * yaw;
    for i in 0..5 {
        let t = i as f64 / 4.0;
        p.push([inner(-0.75 + 0.6 * t), -0.55 - 0.1 * (PI * t).sin()]);
    }
    for i in 0..5 {
        let t = i as f64 / 4.0;
        p.push([inner(0.15 + 0.6 * t), -0.55 - 0.1 * (PI * t).sin()]);
    }
    for i in 0..4 {
        p.push([inner(0.0), -0.35 + 0.5 * i as f64 / 3.0]);
    }
    for i in 0..5 {
        let t = i as f64 / 4.0;
        p.push([inner(-0.25 + 0.5 * t), 0.3 + 0.05 * (PI * t).sin()]);
    }
    for cx in [-0.42, 0.42] {
        for deg in [180.0f64, 120.0, 60.0, 0.0, 300.0, 240.0] {
            let a = deg.to_radians();
            p.push([inner(cx + 0.2 * a.cos()), -0.3 - 0.08 * a.sin()]);
        }
    }
    let (cy, rx) = (0.62, 0.4);
    let (top, bottom) = (0.1, 0.1 + 0.3 * mouth_open);
    for k in 0..12 {
        let a = (180.0 - 30.0 * k as f64).to_radians();
        let ry = if a.sin() >= 0.0 { top } else { bottom };
        p.push([inner(rx * a.cos()), cy - ry * a.sin()]);
    }
    for k in 0..8 {
        let a = (180.0 - 45.0 * k as f64).to_radians();
        let ry = if a.sin() >= 0.0 {
            0.03
        } else {
            0.03 + 0.25 * mouth_open
        };
        p.push([inner(0.3 * a.cos()), cy - ry * a.sin()]);
    }
    p
}

fn smooth_edge(signed: f64) -> f32 {
    // signed < 0 inside; one-pixel soft edge
    (0.5 - signed).clamp(0.0, 1.0) as f32
}

fn blend(img: &mut Image, y: usize, x: usize, color: [f32; 3], alpha: f32) {
    if alpha <= 0.0 {
        return;
    }
    for (c, col) in color.iter().enumerate() {
        let v = img.get(c, y, x);
        img.set(c, y, x, v + (col - v) * alpha);
    }
}

/// Signed distance (in pixels, approximate) to an axis-aligned ellipse.
fn ellipse_sd(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    let d = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
    (d - 1.0) * rx.min(ry)
}

fn render_face(
    h: usize,
    w: usize,
    app: &Appearance,
    center: [f64; 2],
    scale: f64,
    kps: &[[f64; 2]],
    mouth_open: f64,
) -> Image {
    let mut img = Image::zeros(3, h, w);
    let sx = scale * app.aspect;
    let (eye_l, eye_r) = (mean(&kps[36..42]), mean(&kps[42..48]));
    let mouth = mean(&kps[48..60]);
    let nose = kps[30];
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            // vertical background gradient
            let g = 0.8 + 0.2 * (yf / h as f64) as f32;
            blend(&mut img, y, x, app.background.map(|c| c * g), 1.0);
            let hair = ellipse_sd(
                xf,
                yf,
                center[0],
                center[1] - 0.25 * scale,
                1.2 * sx,
                1.25 * scale,
            );
            blend(&mut img, y, x, app.hair, smooth_edge(hair));
            let face = ellipse_sd(
                xf,
                yf,
                center[0],
                center[1] + 0.15 * scale,
                1.02 * sx,
                1.3 * scale,
            );
            blend(&mut img, y, x, app.skin, smooth_edge(face));
            for e in [eye_l, eye_r] {
                let white = ellipse_sd(xf, yf, e[0], e[1], 0.2 * sx, 0.09 * scale);
                blend(&mut img, y, x, [0.95, 0.95, 0.95], smooth_edge(white));
                let pupil = ellipse_sd(xf, yf, e[0], e[1], 0.07 * scale + 0.6, 0.07 * scale + 0.6);
                blend(&mut img, y, x, [0.05, 0.05, 0.1], smooth_edge(pupil));
            }
            let nose_sd = ellipse_sd(xf, yf, nose[0], nose[1], 0.1 * sx + 0.5, 0.08 * scale + 0.5);
            blend(
                &mut img,
                y,
                x,
                app.skin.map(|c| c * 0.7),
                smooth_edge(nose_sd),
            );
            let lips = ellipse_sd(
                xf,
                yf,
                mouth[0],
                mouth[1],
                0.42 * sx,
                (0.12 + 0.15 * mouth_open) * scale + 0.5,
            );
            blend(&mut img, y, x, [0.75, 0.15, 0.2], smooth_edge(lips));
            let inner = ellipse_sd(
                xf,
                yf,
                mouth[0],
                mouth[1],
                0.3 * sx,
                (0.02 + 0.14 * mouth_open) * scale + 0.3,
            );
            blend(&mut img, y, x, [0.2, 0.02, 0.05], smooth_edge(inner));
        }
    }
    img
}

fn mean(pts: &[[f64; 2]]) -> [f64; 2] {
    let n = pts.len() as f64;
    let (sx, sy) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    [sx / n, sy / n]
}

fn face_frame(
    h: usize,
    w: usize,
    app: &Appearance,
    motion: &Motion,
    amount: f64,
    t: f64,
) -> (Image, KeypointSet) {
    let (hf, wf) = (h as f64, w as f64);
    let center = [
        wf * (0.5 + 0.08 * amount * motion.wave(0, t)),
        hf * (0.45 + 0.05 * amount * motion.wave(1, t)),
    ];
    let scale = wf.min(hf) * 0.24 * (1.0 + 0.06 * amount * motion.wave(3, t));
    let mouth_open = 0.5 + 0.5 * motion.wave(2, t) * amount.min(1.0);
    let yaw = 0.5 * amount * motion.wave(3, t + 1.7);
    let pts: Vec<[f64; 2]> = face_template(mouth_open, yaw)
        .into_iter()
        .map(|p| {
            [
                center[0] + p[0] * scale * app.aspect,
                center[1] + p[1] * scale,
            ]
        })
        .collect();
    let img = render_face(h, w, app, center, scale, &pts, mouth_open);
    let kps = KeypointSet::all_visible(Schema::Face68, pts).expect("template has 68 points");
    (img, kps)
}

fn draw_capsule(img: &mut Image, a: [f64; 2], b: [f64; 2], radius: f64, color: [f32; 3]) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            let d = super::raster::point_segment_distance([x as f64, y as f64], a, b);
            blend(img, y, x, color, smooth_edge(d - radius));
        }
    }
}

fn body_frame(
    h: usize,
    w: usize,
    app: &Appearance,
    motion: &Motion,
    amount: f64,
    t: f64,
) -> (Image, KeypointSet) {
    let (hf, wf) = (h as f64, w as f64);
    let u = hf.min(wf) / 10.0;
    let hip = [wf * (0.5 + 0.05 * amount * motion.wave(0, t)), hf * 0.58];
    let neck = [hip[0], hip[1] - 2.6 * u];
    let head = [neck[0], neck[1] - 0.9 * u];
    let limb = |from: [f64; 2], angle: f64, len: f64| {
        [from[0] + len * angle.sin(), from[1] + len * angle.cos()]
    };
    let swing = |i: usize, k: f64| 0.6 * amount * motion.wave(i, t + k);
    let mut p = vec![[0.0, 0.0]; Schema::Body.num_points()];
    p[0] = head;
    p[1] = neck;
    p[2] = [neck[0] - 0.9 * u, neck[1]];
    p[5] = [neck[0] + 0.9 * u, neck[1]];
    p[3] = limb(p[2], -0.4 + swing(1, 0.0), 1.4 * u);
    p[4] = limb(p[3], -0.2 + swing(2, 0.0), 1.3 * u);
    p[6] = limb(p[5], 0.4 - swing(1, 0.5), 1.4 * u);
    p[7] = limb(p[6], 0.2 - swing(2, 0.5), 1.3 * u);
    p[8] = hip;
    p[9] = [hip[0] - 0.5 * u, hip[1]];
    p[12] = [hip[0] + 0.5 * u, hip[1]];
    p[10] = limb(p[9], -0.1 + 0.5 * swing(3, 0.0), 1.6 * u);
    p[11] = limb(p[10], 0.0, 1.5 * u);
    p[13] = limb(p[12], 0.1 - 0.5 * swing(3, 0.0), 1.6 * u);
    p[14] = limb(p[13], 0.0, 1.5 * u);
    p[15] = [head[0] - 0.15 * u, head[1] - 0.1 * u];
    p[16] = [head[0] + 0.15 * u, head[1] - 0.1 * u];
    p[17] = [head[0] - 0.35 * u, head[1]];
    p[18] = [head[0] + 0.35 * u, head[1]];
    for (heel, toe_a, toe_b, small) in [(11, 22, 23, 24), (14, 19, 20, 21)] {
        let a = p[heel];
        let dir = if heel == 11 { -1.0 } else { 1.0 };
        p[toe_a] = [a[0] + dir * 0.4 * u, a[1] + 0.1 * u];
        p[toe_b] = [a[0] + dir * 0.5 * u, a[1] + 0.15 * u];
        p[small] = [a[0] - dir * 0.15 * u, a[1] + 0.1 * u];
    }
    let face_scale = 0.3 * u;
    for (i, q) in face_template(0.3, 0.0).into_iter().enumerate() {
        p[25 + i] = [head[0] + q[0] * face_scale, head[1] + q[1] * face_scale];
    }
    p[25 + 68] = p[25 + 36];
    p[25 + 69] = p[25 + 45];
    for (offset, wrist) in [(95usize, 4usize), (116, 7)] {
        let c = p[wrist];
        p[offset] = c;
        for finger in 0..5 {
            let ang = -0.8 + 0.4 * finger as f64;
            for j in 0..4 {
                let r = 0.12 * u * (j + 1) as f64;
                p[offset + 1 + finger * 4 + j] = [c[0] + r * ang.sin(), c[1] + r * ang.cos()];
            }
        }
    }

    let mut img = Image::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            blend(&mut img, y, x, app.background, 1.0);
        }
    }
    let r = 0.35 * u;
    for (a, b) in [(1, 8), (2, 5), (9, 12)] {
        draw_capsule(&mut img, p[a], p[b], 1.3 * r, app.shirt);
    }
    for (a, b) in [(2, 3), (3, 4), (5, 6), (6, 7)] {
        draw_capsule(&mut img, p[a], p[b], r, app.skin);
    }
    for (a, b) in [(9, 10), (10, 11), (12, 13), (13, 14)] {
        draw_capsule(&mut img, p[a], p[b], r, app.hair);
    }
    draw_capsule(&mut img, head, head, 0.7 * u, app.skin);
    let kps = KeypointSet::all_visible(Schema::Body, p).expect("body layout is complete");
    (img, kps)
}

/// Render a dataset of `subjects × clips_per_subject` clips.
pub fn generate(cfg: &SyntheticConfig) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let style = RasterStyle::default();
    let mut clips = Vec::new();
    for s in 0..cfg.subjects {
        let app = Appearance::draw(&mut rng);
        for c in 0..cfg.clips_per_subject {
            let motion = Motion::draw(&mut rng);
            let (frames, kps): (Vec<_>, Vec<_>) = (0..cfg.frames_per_clip)
                .map(|t| match cfg.schema {
                    Schema::Face68 => {
                        face_frame(cfg.height, cfg.width, &app, &motion, cfg.motion, t as f64)
                    }
                    Schema::Body => {
                        body_frame(cfg.height, cfg.width, &app, &motion, cfg.motion, t as f64)
                    }
                })
                .unzip();
            clips.push(VideoClip::new(
                format!("s{s:02}c{c:02}"),
                format!("subject{s:02}"),
                frames,
                kps,
                &style,
            )?);
        }
    }
    Dataset::new(cfg.schema, (cfg.height, cfg.width), style, clips)
}
