use std::path::Path;

use candle_core::{Device, Tensor};
use image::{imageops::FilterType, ImageBuffer, Luma, Rgb};

use crate::error::Result;

/// Planar (channel-major) float image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(crate::Error::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Mirror about the vertical axis: column `x` goes to `width - 1 - x`.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, self.width - 1 - x, self.get(c, y, x));
                }
            }
        }
        out
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    /// Per-pixel maximum over channels, as a one-channel image.
    pub fn max_over_channels(&self) -> Image {
        let mut out = Image::zeros(1, self.height, self.width);
        for c in 0..self.channels {
            for (o, v) in out.data.iter_mut().zip(self.plane(c)) {
                *o = o.max(*v);
            }
        }
        out
    }

    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(
            &self.data,
            (self.channels, self.height, self.width),
            device,
        )?)
    }

    /// Accepts a `(C, H, W)` tensor of any float dtype.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.dims3()?;
        let data = t
            .to_dtype(candle_core::DType::F32)?
            .flatten_all()?
            .to_vec1::<f32>()?;
        Self::from_vec(c, h, w, data)
    }

    /// Stack images of equal shape into a `(N, C, H, W)` tensor.
    pub fn stack(images: &[&Image], device: &Device) -> Result<Tensor> {
        let ts = images
            .iter()
            .map(|im| im.to_tensor(device))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&ts, 0)?)
    }

    pub fn load_rgb(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn from_rgb8(img: &ImageBuffer<Rgb<u8>, Vec<u8>>) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::zeros(3, h, w);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, px[c] as f32 / 255.0);
            }
        }
        out
    }

    /// Resample to a new size with a triangle filter.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = Image::zeros(self.channels, height, width);
        for c in 0..self.channels {
            let plane: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_raw(
                self.width as u32,
                self.height as u32,
                self.plane(c).to_vec(),
            )
            .expect("plane size matches image dims");
            let resized =
                image::imageops::resize(&plane, width as u32, height as u32, FilterType::Triangle);
            let n = height * width;
            out.data[c * n..(c + 1) * n].copy_from_slice(resized.as_raw());
        }
        out
    }

    /// 8-bit RGB view. One-channel images are replicated to gray, more than
    /// three channels are collapsed by maximum.
    pub fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let quant = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let src = match self.channels {
            3 => None,
            _ => Some(self.max_over_channels()),
        };
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            match &src {
                None => Rgb([
                    quant(self.get(0, y, x)),
                    quant(self.get(1, y, x)),
                    quant(self.get(2, y, x)),
                ]),
                Some(g) => {
                    let v = quant(g.get(0, y, x));
                    Rgb([v, v, v])
                }
            }
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }

    /// Horizontal concatenation of same-height images, each rendered as RGB.
    pub fn hconcat(parts: &[&Image]) -> Result<Image> {
        let h = parts.first().map(|p| p.height).unwrap_or(0);
        if parts.iter().any(|p| p.height != h) {
            return Err(crate::Error::ShapeMismatch(
                "strip parts have different heights".into(),
            ));
        }
        let total_w: usize = parts.iter().map(|p| p.width).sum();
        let mut out = Image::zeros(3, h, total_w);
        let mut x0 = 0;
        for p in parts {
            let rgb = p.as_rgb();
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..p.width {
                        out.set(c, y, x0 + x, rgb.get(c, y, x));
                    }
                }
            }
            x0 += p.width;
        }
        Ok(out)
    }

    fn as_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let g = self.max_over_channels();
        let mut out = Image::zeros(3, self.height, self.width);
        for c in 0..3 {
            let n = self.height * self.width;
            out.data[c * n..(c + 1) * n].copy_from_slice(&g.data);
        }
        out
    }
}
