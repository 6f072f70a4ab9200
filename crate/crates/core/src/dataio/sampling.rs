use log::warn;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, VideoClip};
use super::image::Image;
use super::normalize::normalize_driving_clip;
use super::raster::{rasterize_mask, MaskFrame};
use crate::error::{Error, Result};

/// One generator input/target pair.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub clip_id: String,
    pub subject_id: String,
    pub subject_indices: Vec<usize>,
    pub subject_frames: Vec<Image>,
    pub subject_masks: Vec<MaskFrame>,
    /// Clip the driving mask came from (differs from `clip_id` only for
    /// cross-identity samples).
    pub driving_clip_id: String,
    pub driving_index: usize,
    pub driving_mask: MaskFrame,
    /// Real frame under `driving_mask`.
    pub target_frame: Image,
}

/// Pick `k` subject frames and one disjoint driving frame, uniformly.
pub fn pick_indices(usable: &[usize], k: usize, rng: &mut impl Rng) -> Option<(Vec<usize>, usize)> {
    if usable.len() < k + 1 {
        return None;
    }
    let chosen: Vec<usize> = usable.choose_multiple(rng, k + 1).copied().collect();
    let mut subject = chosen[..k].to_vec();
    subject.sort_unstable();
    Some((subject, chosen[k]))
}

fn eligible_clips(dataset: &Dataset, k: usize) -> Result<Vec<&VideoClip>> {
    if dataset.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let eligible: Vec<&VideoClip> = dataset
        .clips
        .iter()
        .filter(|c| {
            let ok = c.usable_indices().len() > k;
            if !ok {
                warn!(
                    "skipping clip {}: fewer than {} usable frames",
                    c.clip_id,
                    k + 1
                );
            }
            ok
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::Dataset(format!(
            "no clip has at least {} usable frames",
            k + 1
        )));
    }
    Ok(eligible)
}

fn subject_part(clip: &VideoClip, subject: &[usize]) -> (Vec<Image>, Vec<MaskFrame>) {
    let frames = subject.iter().map(|&i| clip.frames[i].clone()).collect();
    let masks = subject
        .iter()
        .map(|&i| clip.masks[i].clone().expect("usable frame has a mask"))
        .collect();
    (frames, masks)
}

/// Self-supervised batch: subject and driving frames come from disjoint
/// frames of the same clip. Deterministic in `seed`.
pub fn sample_training_batch(
    dataset: &Dataset,
    k: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    let eligible = eligible_clips(dataset, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch_size)
        .map(|_| {
            let clip = eligible[rng.random_range(0..eligible.len())];
            let (subject, driving) = pick_indices(&clip.usable_indices(), k, &mut rng)
                .expect("eligible clip is long enough");
            let (subject_frames, subject_masks) = subject_part(clip, &subject);
            Ok(TrainingSample {
                clip_id: clip.clip_id.clone(),
                subject_id: clip.subject_id.clone(),
                subject_indices: subject,
                subject_frames,
                subject_masks,
                driving_clip_id: clip.clip_id.clone(),
                driving_index: driving,
                driving_mask: clip.masks[driving]
                    .clone()
                    .expect("usable frame has a mask"),
                target_frame: clip.frames[driving].clone(),
            })
        })
        .collect()
}

/// Cross-identity batch: subject frames from one clip, driving mask from a
/// clip of another subject (another clip when only one subject exists),
/// aligned to the subject clip's framing. `target_frame` is the driving
/// clip's real frame, usable only as a real example for the discriminator.
pub fn sample_cross_identity_batch(
    dataset: &Dataset,
    k: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    let eligible = eligible_clips(dataset, k)?;
    if dataset.clips.len() < 2 {
        return Err(Error::Dataset(
            "cross-identity sampling needs at least two clips".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch_size)
        .map(|_| {
            let clip = eligible[rng.random_range(0..eligible.len())];
            let mut others: Vec<&VideoClip> = dataset
                .clips
                .iter()
                .filter(|c| c.subject_id != clip.subject_id && !c.usable_indices().is_empty())
                .collect();
            if others.is_empty() {
                others = dataset
                    .clips
                    .iter()
                    .filter(|c| c.clip_id != clip.clip_id && !c.usable_indices().is_empty())
                    .collect();
            }
            let driver = others[rng.random_range(0..others.len())];
            let usable = clip.usable_indices();
            let subject: Vec<usize> = {
                let mut s: Vec<usize> = usable.choose_multiple(&mut rng, k).copied().collect();
                s.sort_unstable();
                s
            };
            let driver_usable = driver.usable_indices();
            let driving = driver_usable[rng.random_range(0..driver_usable.len())];

            let subject_kps: Vec<_> = usable.iter().map(|&i| clip.keypoints[i].clone()).collect();
            let driver_kps: Vec<_> = driver_usable
                .iter()
                .map(|&i| driver.keypoints[i].clone())
                .collect();
            let aligned = normalize_driving_clip(&driver_kps, &subject_kps)?;
            let pos = driver_usable.iter().position(|&i| i == driving).unwrap();
            let driving_mask = rasterize_mask(&aligned[pos], dataset.image_size, &dataset.style)?;

            let (subject_frames, subject_masks) = subject_part(clip, &subject);
            Ok(TrainingSample {
                clip_id: clip.clip_id.clone(),
                subject_id: clip.subject_id.clone(),
                subject_indices: subject,
                subject_frames,
                subject_masks,
                driving_clip_id: driver.clip_id.clone(),
                driving_index: driving,
                driving_mask,
                target_frame: driver.frames[driving].clone(),
            })
        })
        .collect()
}
