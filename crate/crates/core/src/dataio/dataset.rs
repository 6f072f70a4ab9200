//! On-disk dataset layout and in-memory clips.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<clip_id>/frames/000000.png
//! <root>/<clip_id>/keypoints/000000.json
//! ```

use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::keypoints::{KeypointSet, Schema};
use super::raster::{rasterize_mask, MaskFrame, RasterStyle};
use crate::error::{Error, IoContext, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub subject_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: Schema,
    pub clips: Vec<ManifestEntry>,
}

/// Per-frame keypoint sidecar. `width`/`height` give the pixel frame the
/// coordinates refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointFile {
    pub schema: Schema,
    pub width: usize,
    pub height: usize,
    pub points: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
}

impl KeypointFile {
    pub fn from_set(kps: &KeypointSet, height: usize, width: usize) -> Self {
        Self {
            schema: kps.schema,
            width,
            height,
            points: kps.points.clone(),
            visibility: kps.visibility.clone(),
        }
    }

    /// Keypoints rescaled to a `height`×`width` frame.
    pub fn to_set(&self, height: usize, width: usize) -> Result<KeypointSet> {
        let set = KeypointSet::new(self.schema, self.points.clone(), self.visibility.clone())?;
        Ok(set.scaled_xy(
            width as f64 / self.width as f64,
            height as f64 / self.height as f64,
        ))
    }
}

/// Frames of one video plus their keypoint masks. Frames whose keypoints
/// have no visible point carry `None`.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub clip_id: String,
    pub subject_id: String,
    pub frames: Vec<Image>,
    pub keypoints: Vec<KeypointSet>,
    pub masks: Vec<Option<MaskFrame>>,
}

impl VideoClip {
    pub fn new(
        clip_id: impl Into<String>,
        subject_id: impl Into<String>,
        frames: Vec<Image>,
        keypoints: Vec<KeypointSet>,
        style: &RasterStyle,
    ) -> Result<Self> {
        let clip_id = clip_id.into();
        if frames.len() != keypoints.len() {
            return Err(Error::Dataset(format!(
                "clip {clip_id}: {} frames but {} keypoint sets",
                frames.len(),
                keypoints.len()
            )));
        }
        if let Some(f0) = frames.first() {
            if frames.iter().any(|f| f.dims() != f0.dims()) {
                return Err(Error::Dataset(format!(
                    "clip {clip_id}: frame sizes differ"
                )));
            }
        }
        let masks = keypoints
            .iter()
            .map(|k| {
                let (h, w) = (frames[0].height(), frames[0].width());
                match rasterize_mask(k, (h, w), style) {
                    Ok(m) => Ok(Some(m)),
                    Err(Error::EmptyMask) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            clip_id,
            subject_id: subject_id.into(),
            frames,
            keypoints,
            masks,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn size(&self) -> (usize, usize) {
        self.frames
            .first()
            .map(|f| (f.height(), f.width()))
            .unwrap_or((0, 0))
    }

    /// Indices of frames that have a mask.
    pub fn usable_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.masks[i].is_some())
            .collect()
    }

    /// Sub-clip over `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> VideoClip {
        VideoClip {
            clip_id: self.clip_id.clone(),
            subject_id: self.subject_id.clone(),
            frames: self.frames[range.clone()].to_vec(),
            keypoints: self.keypoints[range.clone()].to_vec(),
            masks: self.masks[range].to_vec(),
        }
    }
}

/// An immutable collection of clips sharing one schema and frame size.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: Schema,
    pub image_size: (usize, usize),
    pub style: RasterStyle,
    pub clips: Vec<VideoClip>,
}

impl Dataset {
    pub fn new(
        schema: Schema,
        image_size: (usize, usize),
        style: RasterStyle,
        clips: Vec<VideoClip>,
    ) -> Result<Self> {
        for c in &clips {
            if c.size() != image_size {
                return Err(Error::Dataset(format!(
                    "clip {} has size {:?}, expected {image_size:?}",
                    c.clip_id,
                    c.size()
                )));
            }
            if c.keypoints.iter().any(|k| k.schema != schema) {
                return Err(Error::Dataset(format!("clip {} mixes schemas", c.clip_id)));
            }
        }
        Ok(Self {
            schema,
            image_size,
            style,
            clips,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    /// Drop clips with fewer than `min_frames` usable frames.
    pub fn retain_min_frames(&mut self, min_frames: usize) {
        self.clips.retain(|c| {
            let ok = c.usable_indices().len() >= min_frames;
            if !ok {
                warn!(
                    "excluding clip {}: {} usable frames, need {min_frames}",
                    c.clip_id,
                    c.usable_indices().len()
                );
            }
            ok
        });
    }

    pub fn clip(&self, clip_id: &str) -> Option<&VideoClip> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }

    /// Load every clip listed in `<root>/manifest.json`, resizing frames and
    /// keypoints to `image_size` (height, width).
    pub fn load(
        root: &Path,
        schema: Schema,
        image_size: (usize, usize),
        style: RasterStyle,
    ) -> Result<Self> {
        let manifest = read_manifest(root)?;
        if manifest.schema != schema {
            return Err(Error::Dataset(format!(
                "manifest schema is {}, requested {schema}",
                manifest.schema
            )));
        }
        let clips = manifest
            .clips
            .iter()
            .map(|e| load_clip(&root.join(&e.clip_id), e, image_size, &style))
            .collect::<Result<Vec<_>>>()?;
        Self::new(schema, image_size, style, clips)
    }

    /// Write the dataset in the on-disk layout.
    pub fn save(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).at(root)?;
        let manifest = Manifest {
            schema: self.schema,
            clips: self
                .clips
                .iter()
                .map(|c| ManifestEntry {
                    clip_id: c.clip_id.clone(),
                    subject_id: c.subject_id.clone(),
                })
                .collect(),
        };
        let path = root.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).at(&path)?;
        let (h, w) = self.image_size;
        for clip in &self.clips {
            let frames_dir = root.join(&clip.clip_id).join("frames");
            let kps_dir = root.join(&clip.clip_id).join("keypoints");
            fs::create_dir_all(&frames_dir).at(&frames_dir)?;
            fs::create_dir_all(&kps_dir).at(&kps_dir)?;
            for (i, (frame, kps)) in clip.frames.iter().zip(&clip.keypoints).enumerate() {
                frame.save_png(&frames_dir.join(format!("{i:06}.png")))?;
                let p = kps_dir.join(format!("{i:06}.json"));
                let file = KeypointFile::from_set(kps, h, w);
                fs::write(&p, serde_json::to_string(&file)?).at(&p)?;
            }
        }
        Ok(())
    }
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    Ok(serde_json::from_str(&text)?)
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    Ok(files)
}

/// Load a clip directory outside any manifest. The clip id is the directory
/// name and, failing a parent manifest entry, also the subject id.
pub fn load_clip_dir(
    dir: &Path,
    schema: Schema,
    image_size: (usize, usize),
    style: &RasterStyle,
) -> Result<VideoClip> {
    let clip_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Dataset(format!("{} is not a clip directory", dir.display())))?;
    let subject_id = dir
        .parent()
        .and_then(|root| read_manifest(root).ok())
        .and_then(|m| m.clips.into_iter().find(|e| e.clip_id == clip_id))
        .map(|e| e.subject_id)
        .unwrap_or_else(|| clip_id.clone());
    let clip = load_clip(
        dir,
        &ManifestEntry {
            clip_id,
            subject_id,
        },
        image_size,
        style,
    )?;
    if let Some(k) = clip.keypoints.iter().find(|k| k.schema != schema) {
        return Err(Error::Dataset(format!(
            "clip {} has {} keypoints, expected {schema}",
            clip.clip_id, k.schema
        )));
    }
    Ok(clip)
}

/// Load one clip directory.
pub fn load_clip(
    dir: &Path,
    entry: &ManifestEntry,
    image_size: (usize, usize),
    style: &RasterStyle,
) -> Result<VideoClip> {
    let (h, w) = image_size;
    let frame_files = sorted_files(&dir.join("frames"), "png")?;
    let kp_files = sorted_files(&dir.join("keypoints"), "json")?;
    if frame_files.len() != kp_files.len() {
        return Err(Error::Dataset(format!(
            "clip {}: {} frames but {} keypoint files",
            entry.clip_id,
            frame_files.len(),
            kp_files.len()
        )));
    }
    let mut frames = Vec::with_capacity(frame_files.len());
    let mut keypoints = Vec::with_capacity(frame_files.len());
    for (fp, kp) in frame_files.iter().zip(&kp_files) {
        frames.push(Image::load_rgb(fp)?.resize(h, w));
        let text = fs::read_to_string(kp).at(kp)?;
        let file: KeypointFile = serde_json::from_str(&text)?;
        keypoints.push(file.to_set(h, w)?);
    }
    VideoClip::new(&entry.clip_id, &entry.subject_id, frames, keypoints, style)
}
