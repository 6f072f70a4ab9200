use std::fs::File;
use std::path::Path;

use image::codecs::gif::{GifEncoder, Repeat};
use image::{DynamicImage, Frame};
use serde::{Deserialize, Serialize};

use crate::dataio::Image;
use crate::error::{Error, IoContext, Result};
use crate::losses::FeatureExtractor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    SelfReconstruction,
    CrossIdentity,
    Retarget,
}

/// Metrics for one generated video. Empty metric lists mean no ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    pub video_id: String,
    pub subject_clip: String,
    pub driving_clip: String,
    pub subject_frames: Vec<usize>,
    pub driving_frames: Vec<usize>,
    pub l2: Vec<f64>,
    pub perceptual: Vec<f64>,
    pub mean_l2: Option<f64>,
    pub mean_perceptual: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl VideoReport {
    pub fn new(video: &VideoResult, l2: Vec<f64>, perceptual: Vec<f64>) -> Self {
        Self {
            video_id: video.video_id.clone(),
            subject_clip: video.subject_clip_id.clone(),
            driving_clip: video.driving_clip_id.clone(),
            subject_frames: video.subject_indices.clone(),
            driving_frames: video.driving_indices.clone(),
            mean_l2: mean(&l2),
            mean_perceptual: mean(&perceptual),
            l2,
            perceptual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    /// Over all evaluated frames.
    pub mean_l2: Option<f64>,
    pub mean_perceptual: Option<f64>,
    pub frames: usize,
    pub perceptual_extractor: String,
    /// True when the perceptual distance uses uncalibrated stand-in weights.
    pub perceptual_is_proxy: bool,
    pub config: serde_json::Value,
    pub videos: Vec<VideoReport>,
}

impl EvalReport {
    pub fn new(
        mode: EvalMode,
        extractor: &dyn FeatureExtractor,
        config: serde_json::Value,
        videos: Vec<VideoReport>,
    ) -> Self {
        let l2: Vec<f64> = videos.iter().flat_map(|v| v.l2.iter().copied()).collect();
        let perceptual: Vec<f64> = videos
            .iter()
            .flat_map(|v| v.perceptual.iter().copied())
            .collect();
        Self {
            mode,
            mean_l2: mean(&l2),
            mean_perceptual: mean(&perceptual),
            frames: videos.iter().map(|v| v.driving_frames.len()).sum(),
            perceptual_extractor: extractor.describe(),
            perceptual_is_proxy: extractor.is_proxy(),
            config,
            videos,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["video_id", "driving_frame", "l2", "perceptual"])?;
        for v in &self.videos {
            for (i, &f) in v.driving_frames.iter().enumerate() {
                let cell = |x: Option<&f64>| x.map(|x| x.to_string()).unwrap_or_default();
                w.write_record([
                    v.video_id.clone(),
                    f.to_string(),
                    cell(v.l2.get(i)),
                    cell(v.perceptual.get(i)),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Dataset(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Frames behind one [`VideoReport`].
#[derive(Debug, Clone)]
pub struct VideoResult {
    pub video_id: String,
    pub subject_clip_id: String,
    pub driving_clip_id: String,
    pub subject_indices: Vec<usize>,
    pub driving_indices: Vec<usize>,
    /// First selected subject frame, shown in strips.
    pub subject_frame: Image,
    pub driving_masks: Vec<Image>,
    pub generated: Vec<Image>,
    pub ground_truth: Option<Vec<Image>>,
}

impl VideoResult {
    /// `subject | driving mask | generated` for output frame `i`.
    pub fn strip(&self, i: usize) -> Result<Image> {
        Image::hconcat(&[
            &self.subject_frame,
            &self.driving_masks[i],
            &self.generated[i],
        ])
    }
}

fn write_gif(path: &Path, frames: &[Image]) -> Result<()> {
    let file = File::create(path).at(path)?;
    let mut enc = GifEncoder::new_with_speed(file, 10);
    enc.set_repeat(Repeat::Infinite)?;
    let frames = frames
        .iter()
        .map(|f| Frame::new(DynamicImage::ImageRgb8(f.to_rgb8()).into_rgba8()));
    enc.encode_frames(frames)?;
    Ok(())
}

/// Write `report.json`, `per_frame.csv`, generated frames, strips and
/// optionally one GIF per video into `out_dir`.
///
/// With a single video, frames and strips go to `frames/%06d.png` and
/// `strips/%06d.png`; with several, each video gets its own subdirectory.
pub fn emit_report(
    report: &EvalReport,
    videos: &[VideoResult],
    out_dir: &Path,
    gif: bool,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).at(out_dir)?;
    let json = out_dir.join("report.json");
    std::fs::write(&json, report.to_json()?).at(&json)?;
    let csv = out_dir.join("per_frame.csv");
    std::fs::write(&csv, report.to_csv()?).at(&csv)?;
    let flat = videos.len() == 1;
    for v in videos {
        let sub = |kind: &str| {
            if flat {
                out_dir.join(kind)
            } else {
                out_dir.join(kind).join(&v.video_id)
            }
        };
        let (frames_dir, strips_dir) = (sub("frames"), sub("strips"));
        std::fs::create_dir_all(&frames_dir).at(&frames_dir)?;
        std::fs::create_dir_all(&strips_dir).at(&strips_dir)?;
        for (i, f) in v.generated.iter().enumerate() {
            f.save_png(&frames_dir.join(format!("{i:06}.png")))?;
            v.strip(i)?
                .save_png(&strips_dir.join(format!("{i:06}.png")))?;
        }
        if gif && !v.generated.is_empty() {
            write_gif(&out_dir.join(format!("{}.gif", v.video_id)), &v.generated)?;
        }
    }
    Ok(())
}
