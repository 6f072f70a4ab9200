//! Small-scale training runs shared by the ablation tests and the acceptance
//! harness.

use candle_core::Device;
use tsnet_core::dataio::synthetic::{generate, SyntheticConfig};
use tsnet_core::dataio::{Dataset, Image};
use tsnet_core::networks::Generator;
use tsnet_core::retarget::{l2_metric, RetargetJob, Retargeter};
use tsnet_core::trainer::{StepMetrics, TrainConfig, Trainer};

pub const SMOKE_STEPS: u64 = 300;

/// Two clips of one subject each at 64×64.
pub fn smoke_data() -> Dataset {
    generate(&SyntheticConfig {
        subjects: 2,
        clips_per_subject: 1,
        frames_per_clip: 4,
        height: 64,
        width: 64,
        motion: 0.3,
        seed: 0,
        ..SyntheticConfig::default()
    })
    .expect("synthetic data")
}

pub fn smoke_config() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        k: 2,
        image_height: 64,
        image_width: 64,
        base_channels: 16,
        image_res_blocks: 2,
        decoder_res_blocks: 2,
        disc_base_channels: 8,
        disc_layers: 2,
        epochs: SMOKE_STEPS as u32,
        lr_constant_epochs: SMOKE_STEPS as u32 / 2,
        lr: 5e-4,
        flip_probability: 0.0,
        jitter: 0.0,
        checkpoint_interval: 0,
        ..TrainConfig::default()
    }
}

pub fn train_steps(
    cfg: &TrainConfig,
    data: &Dataset,
    steps: u64,
) -> Result<(Trainer, Vec<StepMetrics>), String> {
    let mut t = Trainer::new(cfg.clone(), &Device::Cpu).map_err(|e| e.to_string())?;
    let m = t
        .run_steps(data, steps, |_| Ok(()))
        .map_err(|e| e.to_string())?;
    Ok((t, m))
}

/// Mean per-frame squared error of every clip reconstructing its own driving
/// frames from `k` of its frames.
pub fn reconstruction_l2(g: &Generator, data: &Dataset, k: usize) -> Result<f64, String> {
    let mut sum = 0.0;
    for clip in &data.clips {
        let job = RetargetJob {
            subject: clip,
            driving: clip,
            k,
            seed: 0,
            normalize: false,
            style: data.style,
        };
        let out = g.retarget(&job).map_err(|e| e.to_string())?;
        let truth: Vec<Image> = out
            .driving_indices
            .iter()
            .map(|&i| clip.frames[i].clone())
            .collect();
        sum += l2_metric(&out.frames, &truth).map_err(|e| e.to_string())?;
    }
    Ok(sum / data.clips.len() as f64)
}
