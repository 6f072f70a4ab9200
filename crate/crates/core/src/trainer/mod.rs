//! Alternating discriminator/generator training, learning-rate schedule,
//! checkpoints and the per-step metrics log.

pub mod adam;
pub mod checkpoint;
pub mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use checkpoint::FORMAT_VERSION;
pub use config::{lr_schedule, TrainConfig};

use crate::dataio::{
    augment_sample, sample_cross_identity_batch, sample_training_batch, BoundingBox, Dataset,
    Image, TrainingSample,
};
use crate::error::{Error, IoContext, Result};
use crate::losses::{
    feature_matching_from, gradient_difference_loss, lsgan_discriminator_loss,
    lsgan_generator_loss, perceptual_loss, scalar, total_generator_loss, transformation_loss,
    FeatureExtractor, LossTerms, RandomConvExtractor,
};
use crate::networks::{crop_around, Discriminator, Generator, GeneratorInput};

/// Everything logged for one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: u32,
    pub lr: f64,
    pub d_loss: f64,
    pub gan: f64,
    pub vgg: f64,
    pub fm: f64,
    pub tra: f64,
    pub gdl: f64,
    pub total: f64,
}

/// Seed for the randomness of step `step` (batch draw and augmentation).
pub fn step_seed(seed: u64, step: u64) -> u64 {
    // splitmix64 over the pair
    let mut z = seed ^ step.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Clips that can yield a training sample.
pub fn steps_per_epoch(dataset: &Dataset, cfg: &TrainConfig) -> usize {
    let eligible = dataset
        .clips
        .iter()
        .filter(|c| c.usable_indices().len() > cfg.k)
        .count()
        .max(1);
    eligible.div_ceil(cfg.batch_size)
}

/// Generator, discriminators and optimizer state.
pub struct Trainer {
    cfg: TrainConfig,
    device: Device,
    generator: Generator,
    discriminator: Discriminator,
    face_discriminator: Option<Discriminator>,
    extractor: RandomConvExtractor,
    opt_g: Adam,
    opt_d: Adam,
    opt_df: Adam,
    step: u64,
    history: Vec<StepMetrics>,
    last_checkpoint: Option<PathBuf>,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("step", &self.step)
            .field("cfg", &self.cfg)
            .finish_non_exhaustive()
    }
}

impl Trainer {
    pub fn new(cfg: TrainConfig, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let dtype = cfg.dtype();
        let generator = Generator::new(cfg.generator_config(), cfg.seed, dtype, device)?;
        let discriminator = Discriminator::new(
            cfg.discriminator_config(),
            cfg.seed.wrapping_add(1),
            dtype,
            device,
        )?;
        let face_discriminator = if cfg.face_discriminator {
            Some(Discriminator::new(
                cfg.discriminator_config(),
                cfg.seed.wrapping_add(2),
                dtype,
                device,
            )?)
        } else {
            None
        };
        let adam = || Adam::new(cfg.adam_beta1, cfg.adam_beta2);
        Ok(Self {
            extractor: RandomConvExtractor::standard(dtype, device)?,
            opt_g: adam(),
            opt_d: adam(),
            opt_df: adam(),
            cfg,
            device: device.clone(),
            generator,
            discriminator,
            face_discriminator,
            step: 0,
            history: Vec::new(),
            last_checkpoint: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn history(&self) -> &[StepMetrics] {
        &self.history
    }

    pub fn extractor(&self) -> &RandomConvExtractor {
        &self.extractor
    }

    /// The batch used at `step`, augmented.
    pub fn draw_batch(&self, dataset: &Dataset, step: u64) -> Result<Vec<TrainingSample>> {
        let seed = step_seed(self.cfg.seed, step);
        let samples = if self.cfg.cross_identity {
            sample_cross_identity_batch(dataset, self.cfg.k, self.cfg.batch_size, seed)?
        } else {
            sample_training_batch(dataset, self.cfg.k, self.cfg.batch_size, seed)?
        };
        let aug = self.cfg.augment_config();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        samples
            .iter()
            .map(|s| augment_sample(s, &aug.draw(&mut rng), &dataset.style))
            .collect()
    }

    fn face_boxes(&self, samples: &[TrainingSample]) -> Vec<BoundingBox> {
        let range = self.cfg.schema.face_range();
        samples
            .iter()
            .map(|s| {
                let kps = &s.driving_mask.keypoints;
                kps.bbox_of(Some(range.clone()))
                    .unwrap_or(s.driving_mask.bbox)
            })
            .collect()
    }

    fn abort(&self, component: &str) -> Error {
        Error::NonFiniteLoss {
            step: self.step,
            component: component.to_string(),
            last_checkpoint: self.last_checkpoint.clone(),
        }
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, samples: &[TrainingSample], lr: f64) -> Result<StepMetrics> {
        let dtype = self.cfg.dtype();
        let input = GeneratorInput::from_samples(samples, dtype, &self.device)?;
        let targets: Vec<&Image> = samples.iter().map(|s| &s.target_frame).collect();
        let real = Image::stack(&targets, &self.device)?.to_dtype(dtype)?;
        let mask = &input.driving_mask;
        let out = self.generator.generate(&input)?;
        let fake = &out.frame;
        let face = match &self.face_discriminator {
            Some(d) => {
                let boxes = self.face_boxes(samples);
                let crop = |t: &Tensor| crop_around(t, &boxes, self.cfg.face_crop);
                Some((d, crop(&real)?, crop(fake)?, crop(mask)?))
            }
            None => None,
        };

        // Discriminator.
        let d_real = self.discriminator.discriminate(&real, mask)?;
        let mut d_loss = lsgan_discriminator_loss(
            &d_real.scores,
            &self
                .discriminator
                .discriminate(&fake.detach(), mask)?
                .scores,
        )?;
        if let Some((d, r, f, m)) = &face {
            let l = lsgan_discriminator_loss(
                &d.discriminate(r, m)?.scores,
                &d.discriminate(&f.detach(), m)?.scores,
            )?;
            d_loss = (d_loss + l)?;
        }
        let d_value = scalar(&d_loss)?;
        if !d_value.is_finite() {
            return Err(self.abort("discriminator"));
        }

        // Generator terms see the discriminators as they were before this step.
        let weights = self.cfg.loss_weights();
        let full = !self.cfg.cross_identity;
        let d_fake = self.discriminator.discriminate(fake, mask)?;
        let mut terms = LossTerms {
            gan: Some(lsgan_generator_loss(&d_fake.scores)?),
            ..Default::default()
        };
        if full {
            let mut fm = feature_matching_from(&d_fake, &d_real)?;
            if let Some((d, r, f, m)) = &face {
                let df_fake = d.discriminate(f, m)?;
                let df_real = d.discriminate(r, m)?;
                terms.gan =
                    Some((terms.gan.take().unwrap() + lsgan_generator_loss(&df_fake.scores)?)?);
                fm = (fm + feature_matching_from(&df_fake, &df_real)?)?;
            }
            terms.fm = Some(fm);
            terms.vgg = Some(perceptual_loss(&self.extractor, fake, &real)?);
            if !out.warped_frames.is_empty() {
                terms.tra = Some(transformation_loss(&out.warped_frames, &real)?);
            }
            terms.gdl = Some(gradient_difference_loss(fake, &real)?);
        } else if let Some((d, _, f, m)) = &face {
            terms.gan = Some(
                (terms.gan.take().unwrap() + lsgan_generator_loss(&d.discriminate(f, m)?.scores)?)?,
            );
        }
        let parts = terms.parts()?;
        if let Some(name) = parts.first_non_finite() {
            return Err(self.abort(name));
        }
        let total = total_generator_loss(&parts, &weights, self.cfg.cross_identity)?;
        let g_loss = terms.total(&weights, self.cfg.cross_identity)?;

        let d_grads = d_loss.backward()?;
        let g_grads = g_loss.backward()?;
        self.opt_d
            .step(self.discriminator.params().vars(), &d_grads, lr)?;
        if let Some(d) = &self.face_discriminator {
            self.opt_df.step(d.params().vars(), &d_grads, lr)?;
        }
        self.opt_g
            .step(self.generator.params().vars(), &g_grads, lr)?;

        let metrics = StepMetrics {
            step: self.step,
            epoch: 0,
            lr,
            d_loss: d_value,
            gan: parts.gan,
            vgg: parts.vgg,
            fm: parts.fm,
            tra: parts.tra,
            gdl: parts.gdl,
            total,
        };
        self.step += 1;
        Ok(metrics)
    }

    /// Run `n` steps on `dataset`, following the learning-rate schedule.
    /// `on_step` sees every metrics record.
    pub fn run_steps(
        &mut self,
        dataset: &Dataset,
        n: u64,
        mut on_step: impl FnMut(&StepMetrics) -> Result<()>,
    ) -> Result<Vec<StepMetrics>> {
        let spe = steps_per_epoch(dataset, &self.cfg) as u64;
        let mut out = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let epoch = (self.step / spe) as u32;
            let lr = lr_schedule(epoch.min(self.cfg.epochs) as f64, &self.cfg)?;
            let batch = self.draw_batch(dataset, self.step)?;
            let mut m = self.train_step(&batch, lr)?;
            m.epoch = epoch;
            on_step(&m)?;
            self.history.push(m.clone());
            out.push(m);
        }
        Ok(out)
    }

    /// Epochs fully completed on a dataset with `spe` steps per epoch.
    pub fn completed_epochs(&self, spe: usize) -> u32 {
        (self.step / spe.max(1) as u64) as u32
    }

    pub fn save_checkpoint(&mut self, path: &Path) -> Result<()> {
        let mut tensors = BTreeMap::new();
        let mut put = |prefix: &str, map: BTreeMap<String, Tensor>| {
            for (k, v) in map {
                tensors.insert(format!("{prefix}{k}"), v);
            }
        };
        put("g.", self.generator.params().snapshot()?);
        put("d.", self.discriminator.params().snapshot()?);
        if let Some(d) = &self.face_discriminator {
            put("df.", d.params().snapshot()?);
        }
        put("", self.opt_g.state_tensors("opt_g."));
        put("", self.opt_d.state_tensors("opt_d."));
        put("", self.opt_df.state_tensors("opt_df."));

        let mut meta = BTreeMap::new();
        meta.insert(
            "generator_config".into(),
            serde_json::to_string(self.generator.config())?,
        );
        meta.insert("train_config".into(), serde_json::to_string(&self.cfg)?);
        meta.insert("step".into(), self.step.to_string());
        meta.insert("opt_g_t".into(), self.opt_g.t.to_string());
        meta.insert("opt_d_t".into(), self.opt_d.t.to_string());
        meta.insert("opt_df_t".into(), self.opt_df.t.to_string());
        meta.insert("history".into(), serde_json::to_string(&self.history)?);
        meta.insert("perceptual_extractor".into(), self.extractor.describe());
        checkpoint::write_archive(path, &tensors, meta)?;
        self.last_checkpoint = Some(path.to_path_buf());
        Ok(())
    }

    pub fn load_checkpoint(path: &Path, device: &Device) -> Result<Self> {
        let (tensors, meta) = checkpoint::read_archive(path, device)?;
        let cfg: TrainConfig = serde_json::from_str(checkpoint::meta_get(&meta, "train_config")?)?;
        let mut t = Self::new(cfg, device)?;
        t.generator
            .params()
            .load(&checkpoint::with_prefix(&tensors, "g."))?;
        t.discriminator
            .params()
            .load(&checkpoint::with_prefix(&tensors, "d."))?;
        if let Some(d) = &t.face_discriminator {
            d.params().load(&checkpoint::with_prefix(&tensors, "df."))?;
        }
        t.opt_g.load_state(
            "opt_g.",
            &checkpoint::with_prefix(&tensors, ""),
            checkpoint::meta_parse(&meta, "opt_g_t")?,
        )?;
        t.opt_d.load_state(
            "opt_d.",
            &checkpoint::with_prefix(&tensors, ""),
            checkpoint::meta_parse(&meta, "opt_d_t")?,
        )?;
        t.opt_df.load_state(
            "opt_df.",
            &checkpoint::with_prefix(&tensors, ""),
            checkpoint::meta_parse(&meta, "opt_df_t")?,
        )?;
        t.step = checkpoint::meta_parse(&meta, "step")?;
        t.history = serde_json::from_str(checkpoint::meta_get(&meta, "history")?)?;
        t.last_checkpoint = Some(path.to_path_buf());
        Ok(t)
    }
}

/// Load only the generator from a training checkpoint.
pub fn load_generator(path: &Path, device: &Device) -> Result<(Generator, TrainConfig)> {
    let (tensors, meta) = checkpoint::read_archive(path, device)?;
    let cfg: TrainConfig = serde_json::from_str(checkpoint::meta_get(&meta, "train_config")?)?;
    let generator = Generator::new(cfg.generator_config(), cfg.seed, cfg.dtype(), device)?;
    generator
        .params()
        .load(&checkpoint::with_prefix(&tensors, "g."))?;
    Ok((generator, cfg))
}

/// Where [`train`] left its outputs.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub metrics_log: PathBuf,
    pub steps: u64,
}

/// Train for the configured epochs, writing `metrics.jsonl` and checkpoints
/// into `out_dir`. With `resume`, training continues from that checkpoint
/// and its configuration replaces `cfg`.
pub fn train(
    cfg: &TrainConfig,
    dataset: &Dataset,
    out_dir: &Path,
    resume: Option<&Path>,
    device: &Device,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::Dataset("training dataset is empty".into()));
    }
    if dataset.schema != cfg.schema || dataset.image_size != cfg.image_size() {
        return Err(Error::Config(format!(
            "dataset is {} at {:?}, config expects {} at {:?}",
            dataset.schema,
            dataset.image_size,
            cfg.schema,
            cfg.image_size()
        )));
    }
    std::fs::create_dir_all(out_dir).at(out_dir)?;
    let mut trainer = match resume {
        Some(p) => Trainer::load_checkpoint(p, device)?,
        None => Trainer::new(cfg.clone(), device)?,
    };
    let cfg = trainer.config().clone();
    let spe = steps_per_epoch(dataset, &cfg);
    let metrics_log = out_dir.join("metrics.jsonl");
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&metrics_log)
        .at(&metrics_log)?;
    let start = trainer.completed_epochs(spe);
    info!(
        "training epochs {start}..{} with {spe} steps each",
        cfg.epochs
    );
    if resume.is_none() {
        trainer.save_checkpoint(&out_dir.join("init.safetensors"))?;
    }
    for epoch in start..cfg.epochs {
        trainer.run_steps(dataset, spe as u64, |m| {
            writeln!(log, "{}", serde_json::to_string(m)?).at(&metrics_log)
        })?;
        let done = epoch + 1;
        if cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && done < cfg.epochs {
            trainer.save_checkpoint(&out_dir.join(format!("epoch_{done:04}.safetensors")))?;
        }
        if let Some(m) = trainer.history().last() {
            info!("epoch {done}: total {:.4} d {:.4}", m.total, m.d_loss);
        }
    }
    let final_checkpoint = if cfg.epochs == 0 {
        out_dir.join("init.safetensors")
    } else {
        let p = out_dir.join("final.safetensors");
        trainer.save_checkpoint(&p)?;
        p
    };
    log.flush().at(&metrics_log)?;
    Ok(TrainOutcome {
        final_checkpoint,
        metrics_log,
        steps: trainer.step(),
    })
}
