use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use candle_core::Device;
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use tsnet_core::dataio::{synthetic, Dataset, RasterStyle, Schema};
use tsnet_core::losses::RandomConvExtractor;
use tsnet_core::retarget::{
    cross_identity_eval, emit_report, self_reconstruction_eval, EvalMode, EvalReport, EvalSettings,
    RetargetJob, Retargeter, VideoReport, VideoResult,
};
use tsnet_core::trainer::{load_generator, train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "tsnet",
    version,
    about = "Keypoint-driven video motion retargeting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    #[value(name = "self")]
    SelfReconstruction,
    Cross,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides the schema in the config file.
        #[arg(long)]
        schema: Option<Schema>,
    },
    /// Animate one clip with the keypoints of another.
    Retarget {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Subject clip directory (holding `frames/` and `keypoints/`).
        #[arg(long)]
        subject: PathBuf,
        /// Driving clip directory; only its keypoints are read.
        #[arg(long)]
        driving: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_normalize: bool,
        #[arg(long)]
        gif: bool,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_root: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        gif: bool,
    },
    /// Write a small synthetic dataset of cartoon faces or stick figures.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "face68")]
        schema: Schema,
        #[arg(long, default_value_t = 2)]
        subjects: usize,
        #[arg(long, default_value_t = 1)]
        clips_per_subject: usize,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_dataset(root: &Path, cfg: &TrainConfig) -> Result<Dataset> {
    Dataset::load(root, cfg.schema, cfg.image_size(), RasterStyle::default())
        .with_context(|| format!("loading dataset from {}", root.display()))
}

fn config_json(cfg: &TrainConfig, checkpoint: &Path) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(cfg)?;
    v["checkpoint"] = serde_json::Value::String(checkpoint.display().to_string());
    Ok(v)
}

fn run(cli: Cli) -> Result<()> {
    let device = Device::Cpu;
    match cli.command {
        Command::Train {
            config,
            data_root,
            out,
            resume,
            schema,
        } => {
            let mut cfg = match &config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = schema {
                cfg.schema = s;
                cfg.validate()?;
            }
            let dataset = load_dataset(&data_root, &cfg)?;
            let outcome = train(&cfg, &dataset, &out, resume.as_deref(), &device)?;
            info!("{} steps", outcome.steps);
            println!("{}", outcome.final_checkpoint.display());
        }
        Command::Retarget {
            checkpoint,
            subject,
            driving,
            out,
            k,
            seed,
            no_normalize,
            gif,
        } => {
            let (generator, cfg) = load_generator(&checkpoint, &device)?;
            let style = RasterStyle::default();
            let clip = |dir: &Path| {
                tsnet_core::dataio::dataset::load_clip_dir(
                    dir,
                    cfg.schema,
                    cfg.image_size(),
                    &style,
                )
                .with_context(|| format!("loading clip {}", dir.display()))
            };
            let (subject, driving) = (clip(&subject)?, clip(&driving)?);
            let job = RetargetJob {
                subject: &subject,
                driving: &driving,
                k: k.unwrap_or(cfg.k),
                seed,
                normalize: !no_normalize,
                style,
            };
            let result = generator.retarget(&job)?;
            let video = VideoResult {
                video_id: format!("{}_by_{}", subject.clip_id, driving.clip_id),
                subject_clip_id: subject.clip_id.clone(),
                driving_clip_id: driving.clip_id.clone(),
                subject_frame: subject.frames[result.subject_indices[0]].clone(),
                subject_indices: result.subject_indices,
                driving_indices: result.driving_indices,
                driving_masks: result.driving_masks.into_iter().map(|m| m.raster).collect(),
                generated: result.frames,
                ground_truth: None,
            };
            let extractor = RandomConvExtractor::standard(cfg.dtype(), &device)?;
            let report = EvalReport::new(
                EvalMode::Retarget,
                &extractor,
                config_json(&cfg, &checkpoint)?,
                vec![VideoReport::new(&video, Vec::new(), Vec::new())],
            );
            emit_report(&report, &[video], &out, gif)?;
            println!("{} frames written to {}", report.frames, out.display());
        }
        Command::Eval {
            checkpoint,
            data_root,
            mode,
            out,
            seed,
            gif,
        } => {
            let (generator, cfg) = load_generator(&checkpoint, &device)?;
            let dataset = load_dataset(&data_root, &cfg)?;
            let extractor = RandomConvExtractor::standard(cfg.dtype(), &device)?;
            let settings = EvalSettings {
                k: cfg.k,
                seed,
                config: config_json(&cfg, &checkpoint)?,
            };
            let (report, videos) = match mode {
                Mode::SelfReconstruction => {
                    self_reconstruction_eval(&dataset, &generator, &extractor, &settings)?
                }
                Mode::Cross => cross_identity_eval(&dataset, &generator, &extractor, &settings)?,
            };
            emit_report(&report, &videos, &out, gif)?;
            match (report.mean_l2, report.mean_perceptual) {
                (Some(l2), Some(p)) => {
                    println!("{} frames: L2 {l2:.5}, perceptual {p:.5}", report.frames)
                }
                _ => println!("{} frames generated", report.frames),
            }
        }
        Command::Synth {
            out,
            schema,
            subjects,
            clips_per_subject,
            frames,
            size,
            seed,
        } => {
            if size % 8 != 0 {
                bail!("--size must be a multiple of 8");
            }
            let cfg = synthetic::SyntheticConfig {
                schema,
                subjects,
                clips_per_subject,
                frames_per_clip: frames,
                height: size,
                width: size,
                seed,
                ..Default::default()
            };
            let dataset = synthetic::generate(&cfg)?;
            dataset.save(&out)?;
            println!("{} clips written to {}", dataset.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
