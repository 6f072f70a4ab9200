//! Inference over whole clips, self-reconstruction and cross-identity
//! evaluation, and report emission.

pub mod report;

use candle_core::{DType, Device, Tensor};
use log::warn;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use report::{emit_report, EvalMode, EvalReport, VideoReport, VideoResult};

use crate::dataio::{
    normalize_driving_clip, rasterize_mask, Dataset, Image, KeypointSet, MaskFrame, RasterStyle,
    VideoClip,
};
use crate::error::{Error, Result};
use crate::losses::{perceptual_loss, scalar, FeatureExtractor};
use crate::networks::{Generator, GeneratorInput};

/// One subject clip animated by the masks of one driving clip.
#[derive(Debug, Clone)]
pub struct RetargetJob<'a> {
    pub subject: &'a VideoClip,
    /// Only keypoints and masks are read.
    pub driving: &'a VideoClip,
    pub k: usize,
    pub seed: u64,
    /// Align driving keypoints to the subject's framing.
    pub normalize: bool,
    pub style: RasterStyle,
}

#[derive(Debug, Clone)]
pub struct RetargetOutput {
    pub subject_indices: Vec<usize>,
    /// Driving frames that produced an output, in order.
    pub driving_indices: Vec<usize>,
    pub driving_masks: Vec<MaskFrame>,
    pub frames: Vec<Image>,
}

/// Anything that can turn a job into frames.
pub trait Retargeter {
    fn retarget(&self, job: &RetargetJob<'_>) -> Result<RetargetOutput>;
}

/// The subject frames used for every output of `job`.
pub fn select_subject_frames(job: &RetargetJob<'_>) -> Result<Vec<usize>> {
    let usable = job.subject.usable_indices();
    if usable.len() < job.k {
        return Err(Error::Dataset(format!(
            "subject clip {} has {} usable frames, {} needed",
            job.subject.clip_id,
            usable.len(),
            job.k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let mut picked: Vec<usize> = usable.choose_multiple(&mut rng, job.k).copied().collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Driving masks for every usable driving frame, normalized to the subject
/// when the job asks for it. Frames without keypoints are skipped.
pub fn prepare_driving(job: &RetargetJob<'_>) -> Result<(Vec<usize>, Vec<MaskFrame>)> {
    let (h, w) = job.subject.size();
    let mut indices = Vec::new();
    for (i, m) in job.driving.masks.iter().enumerate() {
        if m.is_some() {
            indices.push(i);
        } else {
            warn!(
                "driving clip {}: frame {i} has no keypoints, skipped",
                job.driving.clip_id
            );
        }
    }
    let kps: Vec<KeypointSet> = indices
        .iter()
        .map(|&i| job.driving.keypoints[i].clone())
        .collect();
    let kps = if job.normalize && !kps.is_empty() {
        let subject: Vec<KeypointSet> = job
            .subject
            .usable_indices()
            .into_iter()
            .map(|i| job.subject.keypoints[i].clone())
            .collect();
        normalize_driving_clip(&kps, &subject)?
    } else {
        kps
    };
    let masks = kps
        .iter()
        .map(|k| rasterize_mask(k, (h, w), &job.style))
        .collect::<Result<Vec<_>>>()?;
    Ok((indices, masks))
}

/// Frames generated per forward pass.
const CHUNK: usize = 4;

impl Retargeter for Generator {
    fn retarget(&self, job: &RetargetJob<'_>) -> Result<RetargetOutput> {
        if job.subject.keypoints.first().map(|k| k.schema)
            != job.driving.keypoints.first().map(|k| k.schema)
        {
            return Err(Error::Config(
                "subject and driving clips use different keypoint schemas".into(),
            ));
        }
        if job.k != self.config().k {
            warn!(
                "job uses K={} with a generator trained for K={}",
                job.k,
                self.config().k
            );
        }
        let subject_indices = select_subject_frames(job)?;
        let (driving_indices, driving_masks) = prepare_driving(job)?;
        let frames: Vec<&Image> = subject_indices
            .iter()
            .map(|&i| &job.subject.frames[i])
            .collect();
        let masks: Vec<&MaskFrame> = subject_indices
            .iter()
            .map(|&i| {
                job.subject.masks[i]
                    .as_ref()
                    .expect("usable frame has a mask")
            })
            .collect();
        let dtype = self.params().dtype();
        let device = self.params().device().clone();
        let mut out = Vec::with_capacity(driving_masks.len());
        for chunk in driving_masks.chunks(CHUNK) {
            let drv: Vec<&MaskFrame> = chunk.iter().collect();
            let input = GeneratorInput::new(&frames, &masks, &drv, dtype, &device)?;
            let generated = self.generate(&input)?.frame.detach().to_dtype(DType::F32)?;
            for b in 0..drv.len() {
                out.push(Image::from_tensor(&generated.get(b)?)?);
            }
        }
        Ok(RetargetOutput {
            subject_indices,
            driving_indices,
            driving_masks,
            frames: out,
        })
    }
}

fn check_pair(generated: &[Image], truth: &[Image]) -> Result<()> {
    if generated.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} generated frames for {} ground-truth frames",
            generated.len(),
            truth.len()
        )));
    }
    for (g, t) in generated.iter().zip(truth) {
        if g.dims() != t.dims() {
            return Err(Error::ShapeMismatch(format!(
                "frame {:?} vs {:?}",
                g.dims(),
                t.dims()
            )));
        }
    }
    Ok(())
}

/// Mean squared error of each frame pair.
pub fn l2_per_frame(generated: &[Image], truth: &[Image]) -> Result<Vec<f64>> {
    check_pair(generated, truth)?;
    Ok(generated
        .iter()
        .zip(truth)
        .map(|(g, t)| {
            let sum: f64 = g
                .data()
                .iter()
                .zip(t.data())
                .map(|(a, b)| {
                    let d = *a as f64 - *b as f64;
                    d * d
                })
                .sum();
            sum / g.data().len() as f64
        })
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Per-frame mean squared error averaged over frames.
pub fn l2_metric(generated: &[Image], truth: &[Image]) -> Result<f64> {
    Ok(mean(&l2_per_frame(generated, truth)?))
}

/// Perceptual distance of each frame pair under `extractor`.
pub fn perceptual_per_frame(
    extractor: &dyn FeatureExtractor,
    generated: &[Image],
    truth: &[Image],
    device: &Device,
) -> Result<Vec<f64>> {
    check_pair(generated, truth)?;
    generated
        .iter()
        .zip(truth)
        .map(|(g, t)| {
            let a = g.to_tensor(device)?.unsqueeze(0)?;
            let b = t.to_tensor(device)?.unsqueeze(0)?;
            let d = scalar(&perceptual_loss(extractor, &a, &b)?)?;
            Ok(d.max(0.0))
        })
        .collect()
}

pub fn perceptual_metric(
    extractor: &dyn FeatureExtractor,
    generated: &[Image],
    truth: &[Image],
    device: &Device,
) -> Result<f64> {
    Ok(mean(&perceptual_per_frame(
        extractor, generated, truth, device,
    )?))
}

/// Settings shared by the evaluation drivers.
#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub k: usize,
    pub seed: u64,
    pub config: serde_json::Value,
}

fn video_result(job: &RetargetJob<'_>, out: RetargetOutput, video_id: String) -> VideoResult {
    VideoResult {
        video_id,
        subject_clip_id: job.subject.clip_id.clone(),
        driving_clip_id: job.driving.clip_id.clone(),
        subject_indices: out.subject_indices.clone(),
        driving_indices: out.driving_indices,
        subject_frame: job.subject.frames[out.subject_indices[0]].clone(),
        driving_masks: out.driving_masks.into_iter().map(|m| m.raster).collect(),
        generated: out.frames,
        ground_truth: None,
    }
}

/// Split every clip into halves; the first half supplies subject frames, the
/// second half supplies driving masks and ground truth.
pub fn self_reconstruction_eval(
    dataset: &Dataset,
    model: &dyn Retargeter,
    extractor: &dyn FeatureExtractor,
    settings: &EvalSettings,
) -> Result<(EvalReport, Vec<VideoResult>)> {
    let device = Device::Cpu;
    let mut videos = Vec::new();
    let mut reports = Vec::new();
    for clip in &dataset.clips {
        let n = clip.len();
        let (first, second) = (clip.slice(0..n / 2), clip.slice(n / 2..n));
        if first.usable_indices().len() < settings.k || second.usable_indices().is_empty() {
            warn!(
                "clip {} is too short to split for evaluation, skipped",
                clip.clip_id
            );
            continue;
        }
        let job = RetargetJob {
            subject: &first,
            driving: &second,
            k: settings.k,
            seed: settings.seed,
            normalize: false,
            style: dataset.style,
        };
        let out = model.retarget(&job)?;
        let truth: Vec<Image> = out
            .driving_indices
            .iter()
            .map(|&i| second.frames[i].clone())
            .collect();
        let l2 = l2_per_frame(&out.frames, &truth)?;
        let perceptual = perceptual_per_frame(extractor, &out.frames, &truth, &device)?;
        let mut v = video_result(&job, out, clip.clip_id.clone());
        reports.push(VideoReport::new(&v, l2, perceptual));
        v.ground_truth = Some(truth);
        videos.push(v);
    }
    Ok((
        EvalReport::new(
            EvalMode::SelfReconstruction,
            extractor,
            settings.config.clone(),
            reports,
        ),
        videos,
    ))
}

/// Animate each clip with the masks of a clip from another subject (another
/// clip when there is only one subject). No ground truth exists, so the
/// report carries no metrics.
pub fn cross_identity_eval(
    dataset: &Dataset,
    model: &dyn Retargeter,
    extractor: &dyn FeatureExtractor,
    settings: &EvalSettings,
) -> Result<(EvalReport, Vec<VideoResult>)> {
    let mut videos = Vec::new();
    let mut reports = Vec::new();
    let n = dataset.clips.len();
    for (i, subject) in dataset.clips.iter().enumerate() {
        let driver = (1..n)
            .map(|o| &dataset.clips[(i + o) % n])
            .find(|c| c.subject_id != subject.subject_id)
            .or_else(|| (n > 1).then(|| &dataset.clips[(i + 1) % n]));
        let Some(driving) = driver else {
            warn!("no driving clip available for {}", subject.clip_id);
            continue;
        };
        if subject.usable_indices().len() < settings.k {
            warn!(
                "clip {} has too few usable frames, skipped",
                subject.clip_id
            );
            continue;
        }
        let job = RetargetJob {
            subject,
            driving,
            k: settings.k,
            seed: settings.seed,
            normalize: true,
            style: dataset.style,
        };
        let out = model.retarget(&job)?;
        let v = video_result(
            &job,
            out,
            format!("{}_by_{}", subject.clip_id, driving.clip_id),
        );
        reports.push(VideoReport::new(&v, Vec::new(), Vec::new()));
        videos.push(v);
    }
    Ok((
        EvalReport::new(
            EvalMode::CrossIdentity,
            extractor,
            settings.config.clone(),
            reports,
        ),
        videos,
    ))
}

/// Stack frames into `(N, 3, H, W)`.
pub fn frames_tensor(frames: &[Image], device: &Device) -> Result<Tensor> {
    let refs: Vec<&Image> = frames.iter().collect();
    Image::stack(&refs, device)
}
