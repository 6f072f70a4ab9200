use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use super::layers::{coordinate_channels, Activation, Conv2d, ConvBlock, ParamStore, ResBlock};
use crate::dataio::{CellBox, Image, MaskFrame, TrainingSample};
use crate::error::{Error, Result};
use crate::geometry::{
    cosine_similarity, mask_aware_similarity, regular_grid, warp_features, warp_image_patchwise,
    weighted_grid, GridConfig, SamplingGrid, PATCH,
};

/// Which branches feed the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchMode {
    Dual,
    TransformOnly,
    SynthOnly,
}

/// How the two branch features are merged in dual mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    Concat,
    Matting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Subject frames per generated frame.
    pub k: usize,
    /// Width of the first encoder stage; later stages use 2× and 4×.
    pub base_channels: usize,
    pub branch_mode: BranchMode,
    pub combine_mode: CombineMode,
    pub use_coord_conv: bool,
    /// `(height, width)`, both divisible by 8.
    pub image_size: (usize, usize),
    pub mask_channels: usize,
    pub image_res_blocks: usize,
    pub decoder_res_blocks: usize,
    pub tau: f64,
    /// Restrict affinities to inside/outside box partitions.
    pub mask_aware: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            k: 3,
            base_channels: 64,
            branch_mode: BranchMode::Dual,
            combine_mode: CombineMode::Concat,
            use_coord_conv: true,
            image_size: (256, 256),
            mask_channels: 1,
            image_res_blocks: 9,
            decoder_res_blocks: 4,
            tau: 100.0,
            mask_aware: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h == 0 || w == 0 || h % PATCH != 0 || w % PATCH != 0 {
            return Err(Error::Config(format!(
                "image size {h}x{w} is not a positive multiple of {PATCH}"
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.base_channels == 0 || self.mask_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        GridConfig::new(self.tau)?;
        Ok(())
    }

    pub fn feature_size(&self) -> (usize, usize) {
        (self.image_size.0 / PATCH, self.image_size.1 / PATCH)
    }

    /// Channels of `e_k`, `f`, and each branch feature.
    pub fn feature_channels(&self) -> usize {
        4 * self.base_channels
    }

    fn coord_channels(&self) -> usize {
        if self.use_coord_conv {
            2
        } else {
            0
        }
    }
}

/// Three stride-2 3×3 convolution stages (widths b, 2b, 4b) followed by
/// `res_blocks` residual blocks.
#[derive(Debug, Clone)]
pub struct Encoder {
    stages: Vec<ConvBlock>,
    blocks: Vec<ResBlock>,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        base: usize,
        res_blocks: usize,
    ) -> Result<Self> {
        let widths = [base, 2 * base, 4 * base];
        let mut stages = Vec::new();
        let mut c = in_ch;
        for (i, &wd) in widths.iter().enumerate() {
            stages.push(ConvBlock::new(
                store,
                &format!("{name}.down{i}"),
                c,
                wd,
                3,
                2,
                1,
                true,
                Activation::Relu,
            )?);
            c = wd;
        }
        let blocks = (0..res_blocks)
            .map(|i| ResBlock::new(store, &format!("{name}.res{i}"), c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stages, blocks })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        for s in &self.stages {
            y = s.forward(&y)?;
        }
        for b in &self.blocks {
            y = b.forward(&y)?;
        }
        Ok(y)
    }
}

/// A residual block over the concatenated inputs and a 1×1 projection.
#[derive(Debug, Clone)]
pub struct FusionNet {
    block: ResBlock,
    project: Conv2d,
}

impl FusionNet {
    pub fn new(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            block: ResBlock::new(store, &format!("{name}.res"), in_ch)?,
            project: Conv2d::new(store, &format!("{name}.proj"), in_ch, out_ch, 1, 1, 0, true)?,
        })
    }

    pub fn forward(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.dims() != b.dims() {
            return Err(Error::ShapeMismatch(format!(
                "fusion inputs {:?} vs {:?}",
                a.dims(),
                b.dims()
            )));
        }
        let x = Tensor::cat(&[a, b], 1)?;
        self.project.forward(&self.block.forward(&x)?)
    }
}

/// Residual blocks, three nearest-neighbour ×2 upsampling stages with 3×3
/// convolutions, and an RGB head squashed to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Decoder {
    blocks: Vec<ResBlock>,
    ups: Vec<ConvBlock>,
    head: Conv2d,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        base: usize,
        res_blocks: usize,
    ) -> Result<Self> {
        let blocks = (0..res_blocks)
            .map(|i| ResBlock::new(store, &format!("{name}.res{i}"), in_ch))
            .collect::<Result<Vec<_>>>()?;
        let mut ups = Vec::new();
        let mut c = in_ch;
        for (i, wd) in [4 * base, 2 * base, base].into_iter().enumerate() {
            ups.push(ConvBlock::new(
                store,
                &format!("{name}.up{i}"),
                c,
                wd,
                3,
                1,
                1,
                true,
                Activation::Relu,
            )?);
            c = wd;
        }
        let head = Conv2d::new(store, &format!("{name}.head"), c, 3, 3, 1, 1, true)?;
        Ok(Self { blocks, ups, head })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        for b in &self.blocks {
            y = b.forward(&y)?;
        }
        for u in &self.ups {
            let (_, _, h, w) = y.dims4()?;
            y = u.forward(&y.upsample_nearest2d(2 * h, 2 * w)?)?;
        }
        Ok(self.head.forward(&y)?.tanh()?.affine(0.5, 0.5)?)
    }
}

/// Batched generator inputs.
#[derive(Debug, Clone)]
pub struct GeneratorInput {
    /// `(B, K, 3, H, W)`
    pub subject_frames: Tensor,
    /// `(B, K, Cm, H, W)`
    pub subject_masks: Tensor,
    /// `(B, Cm, H, W)`
    pub driving_mask: Tensor,
    /// Subject keypoint boxes in feature cells, `B × K`.
    pub subject_cells: Vec<Vec<CellBox>>,
    /// Driving keypoint boxes in feature cells, `B`.
    pub driving_cells: Vec<CellBox>,
}

impl GeneratorInput {
    /// Input for `B` driving masks sharing the same `K` subject frames.
    pub fn new(
        subject_frames: &[&Image],
        subject_masks: &[&MaskFrame],
        driving: &[&MaskFrame],
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let b = driving.len();
        let one = Self::single(subject_frames, subject_masks, driving[0], dtype, device)?;
        let rep = |t: &Tensor| -> Result<Tensor> {
            let mut dims = t.dims().to_vec();
            dims[0] = b;
            Ok(t.broadcast_as(dims)?.contiguous()?)
        };
        let drv: Vec<&Image> = driving.iter().map(|m| &m.raster).collect();
        let (h, w) = (drv[0].height(), drv[0].width());
        let cells = |m: &MaskFrame| m.bbox.to_cells(PATCH, h / PATCH, w / PATCH);
        Ok(Self {
            subject_frames: rep(&one.subject_frames)?,
            subject_masks: rep(&one.subject_masks)?,
            driving_mask: Image::stack(&drv, device)?.to_dtype(dtype)?,
            subject_cells: vec![one.subject_cells[0].clone(); b],
            driving_cells: driving.iter().map(|m| cells(m)).collect(),
        })
    }

    fn single(
        subject_frames: &[&Image],
        subject_masks: &[&MaskFrame],
        driving: &MaskFrame,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        if subject_frames.len() != subject_masks.len() || subject_frames.is_empty() {
            return Err(Error::ShapeMismatch(
                "subject frames and masks differ in count".into(),
            ));
        }
        let (h, w) = (subject_frames[0].height(), subject_frames[0].width());
        let cells = |m: &MaskFrame| m.bbox.to_cells(PATCH, h / PATCH, w / PATCH);
        let masks: Vec<&Image> = subject_masks.iter().map(|m| &m.raster).collect();
        Ok(Self {
            subject_frames: Image::stack(subject_frames, device)?
                .to_dtype(dtype)?
                .unsqueeze(0)?,
            subject_masks: Image::stack(&masks, device)?
                .to_dtype(dtype)?
                .unsqueeze(0)?,
            driving_mask: driving
                .raster
                .to_tensor(device)?
                .to_dtype(dtype)?
                .unsqueeze(0)?,
            subject_cells: vec![subject_masks.iter().map(|m| cells(m)).collect()],
            driving_cells: vec![cells(driving)],
        })
    }

    pub fn from_samples(samples: &[TrainingSample], dtype: DType, device: &Device) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        let parts = samples
            .iter()
            .map(|s| {
                let frames: Vec<&Image> = s.subject_frames.iter().collect();
                let masks: Vec<&MaskFrame> = s.subject_masks.iter().collect();
                Self::single(&frames, &masks, &s.driving_mask, dtype, device)
            })
            .collect::<Result<Vec<_>>>()?;
        let cat = |f: fn(&Self) -> &Tensor| -> Result<Tensor> {
            let ts: Vec<&Tensor> = parts.iter().map(f).collect();
            Ok(Tensor::cat(&ts, 0)?)
        };
        Ok(Self {
            subject_frames: cat(|p| &p.subject_frames)?,
            subject_masks: cat(|p| &p.subject_masks)?,
            driving_mask: cat(|p| &p.driving_mask)?,
            subject_cells: parts.iter().flat_map(|p| p.subject_cells.clone()).collect(),
            driving_cells: parts.iter().flat_map(|p| p.driving_cells.clone()).collect(),
        })
    }

    pub fn batch(&self) -> usize {
        self.driving_mask.dims()[0]
    }

    pub fn k(&self) -> usize {
        self.subject_frames.dims()[1]
    }

    /// Reorder the subject frames of every sample by `perm`.
    pub fn permute_subjects(&self, perm: &[usize]) -> Result<Self> {
        let idx = Tensor::new(
            perm.iter()
                .map(|&i| i as u32)
                .collect::<Vec<_>>()
                .as_slice(),
            self.subject_frames.device(),
        )?;
        Ok(Self {
            subject_frames: self.subject_frames.index_select(&idx, 1)?,
            subject_masks: self.subject_masks.index_select(&idx, 1)?,
            driving_mask: self.driving_mask.clone(),
            subject_cells: self
                .subject_cells
                .iter()
                .map(|c| perm.iter().map(|&i| c[i]).collect())
                .collect(),
            driving_cells: self.driving_cells.clone(),
        })
    }
}

/// Everything one forward pass produces.
#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    /// `(B, 3, H, W)` in `[0, 1]`.
    pub frame: Tensor,
    /// Per subject frame, the image warped by its grid, `(B, 3, H, W)`.
    /// Empty in synthesis-only mode.
    pub warped_frames: Vec<Tensor>,
    /// Per subject frame, `(B, Hf, Wf, 2)`. Empty in synthesis-only mode.
    pub grids: Vec<SamplingGrid>,
    /// Mean warped feature, absent in synthesis-only mode.
    pub warped_features: Option<Tensor>,
    /// Mean fused feature, absent in transform-only mode.
    pub synth_features: Option<Tensor>,
    /// Matting weight on the warped feature, `(B, 1, Hf, Wf)`.
    pub alpha: Option<Tensor>,
    /// Affinities evaluated across the batch.
    pub similarity_entries: usize,
}

/// The two-branch generator.
#[derive(Debug)]
pub struct Generator {
    cfg: GeneratorConfig,
    grid_cfg: GridConfig,
    store: ParamStore,
    image_encoder: Encoder,
    mask_encoder: Encoder,
    fusion: FusionNet,
    matting: Option<FusionNet>,
    decoder: Decoder,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(seed, dtype, device);
        let b = cfg.base_channels;
        let fc = cfg.feature_channels();
        let cc = cfg.coord_channels();
        let image_encoder = Encoder::new(
            &mut store,
            "enc_img",
            3 + cfg.mask_channels + cc,
            b,
            cfg.image_res_blocks,
        )?;
        let mask_encoder = Encoder::new(&mut store, "enc_msk", cfg.mask_channels + cc, b, 0)?;
        let fusion = FusionNet::new(&mut store, "fusion", 2 * fc, fc)?;
        let matting = match cfg.combine_mode {
            CombineMode::Matting => Some(FusionNet::new(&mut store, "matting", 2 * fc, 1)?),
            CombineMode::Concat => None,
        };
        let decoder = Decoder::new(&mut store, "dec", 2 * fc, b, cfg.decoder_res_blocks)?;
        Ok(Self {
            grid_cfg: GridConfig::new(cfg.tau)?,
            cfg,
            store,
            image_encoder,
            mask_encoder,
            fusion,
            matting,
            decoder,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_parameters()
    }

    fn with_coords(&self, x: &Tensor) -> Result<Tensor> {
        if !self.cfg.use_coord_conv {
            return Ok(x.clone());
        }
        let (b, _, h, w) = x.dims4()?;
        let coords = coordinate_channels(b, h, w, x.dtype(), x.device())?;
        Ok(Tensor::cat(&[x, &coords], 1)?)
    }

    /// `e_k` from a frame `(N, 3, H, W)` and its mask `(N, Cm, H, W)`.
    pub fn encode_image(&self, frame: &Tensor, mask: &Tensor) -> Result<Tensor> {
        self.check_size(frame)?;
        self.image_encoder
            .forward(&self.with_coords(&Tensor::cat(&[frame, mask], 1)?)?)
    }

    /// `f` from a driving mask `(N, Cm, H, W)`.
    pub fn encode_mask(&self, mask: &Tensor) -> Result<Tensor> {
        self.check_size(mask)?;
        self.mask_encoder.forward(&self.with_coords(mask)?)
    }

    pub fn fuse(&self, e: &Tensor, f: &Tensor) -> Result<Tensor> {
        self.fusion.forward(e, f)
    }

    /// Merge branch features per `combine` and decode. Returns the frame and
    /// the matting weight when one was used.
    pub fn combine_and_decode(
        &self,
        warped: &Tensor,
        synth: &Tensor,
        combine: CombineMode,
    ) -> Result<(Tensor, Option<Tensor>)> {
        if warped.dims() != synth.dims() {
            return Err(Error::ShapeMismatch(format!(
                "branch features {:?} vs {:?}",
                warped.dims(),
                synth.dims()
            )));
        }
        match combine {
            CombineMode::Concat => Ok((
                self.decoder.forward(&Tensor::cat(&[warped, synth], 1)?)?,
                None,
            )),
            CombineMode::Matting => {
                let net = self.matting.as_ref().ok_or_else(|| {
                    Error::Config("generator was built without a matting network".into())
                })?;
                let alpha = (net.forward(warped, synth)?.neg()?.exp()? + 1.0)?.recip()?;
                let (frame, alpha) = self.decode_blend(warped, synth, &alpha)?;
                Ok((frame, Some(alpha)))
            }
        }
    }

    /// Decode `α·warped + (1-α)·synth`, fed to the decoder duplicated.
    pub fn decode_blend(
        &self,
        warped: &Tensor,
        synth: &Tensor,
        alpha: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let blend =
            (warped.broadcast_mul(alpha)? + synth.broadcast_mul(&alpha.affine(-1.0, 1.0)?)?)?;
        Ok((
            self.decoder.forward(&Tensor::cat(&[&blend, &blend], 1)?)?,
            alpha.clone(),
        ))
    }

    fn check_size(&self, x: &Tensor) -> Result<()> {
        let (_, _, h, w) = x.dims4()?;
        if h % PATCH != 0 || w % PATCH != 0 {
            return Err(Error::ShapeMismatch(format!(
                "input {h}x{w} is not divisible by {PATCH}"
            )));
        }
        Ok(())
    }

    pub fn generate(&self, input: &GeneratorInput) -> Result<GeneratorOutput> {
        let (b, k, c, h, w) = input.subject_frames.dims5()?;
        let cm = input.subject_masks.dims()[2];
        let bk = b * k;
        let frames = input.subject_frames.reshape((bk, c, h, w))?;
        let masks = input.subject_masks.reshape((bk, cm, h, w))?;
        let e = self.encode_image(&frames, &masks)?;
        let f = self.encode_mask(&input.driving_mask)?;
        let (_, fc, hf, wf) = e.dims4()?;
        let f_rep = f
            .unsqueeze(1)?
            .broadcast_as((b, k, fc, hf, wf))?
            .reshape((bk, fc, hf, wf))?;
        let mean_k = |t: &Tensor| -> Result<Tensor> {
            let d = t.dims();
            Ok(t.reshape([vec![b, k], d[1..].to_vec()].concat())?.mean(1)?)
        };

        let mut out = GeneratorOutput {
            frame: Tensor::zeros(1, e.dtype(), e.device())?,
            warped_frames: Vec::new(),
            grids: Vec::new(),
            warped_features: None,
            synth_features: None,
            alpha: None,
            similarity_entries: 0,
        };

        if self.cfg.branch_mode != BranchMode::SynthOnly {
            let base = regular_grid(hf, wf, e.dtype(), e.device())?;
            let mut grids = Vec::with_capacity(bk);
            for bi in 0..b {
                for ki in 0..k {
                    let ek = e.get(bi * k + ki)?;
                    let fb = f.get(bi)?;
                    let s = if self.cfg.mask_aware {
                        mask_aware_similarity(
                            &ek,
                            &fb,
                            &input.subject_cells[bi][ki],
                            &input.driving_cells[bi],
                        )?
                    } else {
                        cosine_similarity(&ek, &fb)?
                    };
                    out.similarity_entries += s.computed_entries;
                    grids.push(weighted_grid(&s, &base, &self.grid_cfg)?);
                }
            }
            let grid = SamplingGrid::cat(&grids)?;
            let warped = warp_features(&e, &grid)?;
            out.warped_features = Some(mean_k(&warped)?);
            let warped_frames = warp_image_patchwise(&frames, &grid)?.reshape((b, k, c, h, w))?;
            let grid5 = grid.coords().reshape((b, k, hf, wf, 2))?;
            for ki in 0..k {
                out.warped_frames
                    .push(warped_frames.narrow(1, ki, 1)?.squeeze(1)?);
                out.grids
                    .push(SamplingGrid::new(grid5.narrow(1, ki, 1)?.squeeze(1)?)?);
            }
        }
        if self.cfg.branch_mode != BranchMode::TransformOnly {
            out.synth_features = Some(mean_k(&self.fuse(&e, &f_rep)?)?);
        }

        let (frame, alpha) = match (&out.warped_features, &out.synth_features) {
            (Some(t), Some(s)) => self.combine_and_decode(t, s, self.cfg.combine_mode)?,
            (Some(only), None) | (None, Some(only)) => {
                (self.decoder.forward(&Tensor::cat(&[only, only], 1)?)?, None)
            }
            (None, None) => unreachable!("at least one branch is active"),
        };
        out.frame = frame;
        out.alpha = alpha;
        debug_assert_eq!(out.frame.dim(D::Minus1)?, w);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(combine: CombineMode) -> Generator {
        let cfg = GeneratorConfig {
            k: 1,
            base_channels: 2,
            combine_mode: combine,
            image_size: (16, 24),
            image_res_blocks: 0,
            decoder_res_blocks: 0,
            ..GeneratorConfig::default()
        };
        Generator::new(cfg, 0, DType::F64, &Device::Cpu).unwrap()
    }

    #[test]
    fn feature_geometry() {
        let g = small(CombineMode::Concat);
        assert_eq!(g.config().feature_size(), (2, 3));
        assert_eq!(g.config().feature_channels(), 8);
        let x = Tensor::zeros((2, 1, 16, 24), DType::F64, &Device::Cpu).unwrap();
        assert_eq!(g.with_coords(&x).unwrap().dims(), &[2, 3, 16, 24]);
        assert_eq!(g.encode_mask(&x).unwrap().dims(), &[2, 8, 2, 3]);
        let odd = Tensor::zeros((1, 1, 12, 24), DType::F64, &Device::Cpu).unwrap();
        assert!(g.encode_mask(&odd).is_err());
    }

    #[test]
    fn saturated_matte_ignores_the_synthesis_features() -> Result<()> {
        let g = small(CombineMode::Matting);
        let dev = Device::Cpu;
        let warped = Tensor::rand(0f64, 1., (1, 8, 2, 3), &dev)?;
        let one = Tensor::ones((1, 1, 2, 3), DType::F64, &dev)?;
        let (a, _) = g.decode_blend(&warped, &Tensor::rand(0f64, 1., (1, 8, 2, 3), &dev)?, &one)?;
        let (b, _) = g.decode_blend(&warped, &Tensor::rand(0f64, 1., (1, 8, 2, 3), &dev)?, &one)?;
        assert_eq!(
            a.flatten_all()?.to_vec1::<f64>()?,
            b.flatten_all()?.to_vec1::<f64>()?
        );
        assert_eq!(a.dims(), &[1, 3, 16, 24]);
        Ok(())
    }

    #[test]
    fn branch_features_must_agree() -> Result<()> {
        let g = small(CombineMode::Concat);
        let a = Tensor::zeros((1, 8, 2, 3), DType::F64, &Device::Cpu)?;
        let b = Tensor::zeros((1, 8, 3, 2), DType::F64, &Device::Cpu)?;
        assert!(g.combine_and_decode(&a, &b, CombineMode::Concat).is_err());
        assert!(g.combine_and_decode(&a, &a, CombineMode::Matting).is_err());
        Ok(())
    }
}
