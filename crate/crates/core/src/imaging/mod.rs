//! Image I/O, resampling, pyramids, and the conditional-input preprocessors.

mod edges;
mod pyramid;
mod quantize;
mod resample;

use std::path::Path;

use crate::nn::Tensor;
use crate::{Error, Result};

pub use edges::{binarize, extract_edges, is_binary, CannyParams};
pub use pyramid::{build_pyramid, Dims, ImagePyramid, PyramidLadder, PyramidSpec};
pub use quantize::{quantize_colors, Palette};
pub use resample::{cubic_weight, interpolation_matrix, resample, resample_unclamped, resize_plan};

/// RGB raster with values in `[-1, 1]`, stored channel-major (`[3, H, W]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    /// Builds an image from channel-major data, clamping into `[-1, 1]`.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != Self::CHANNELS * height * width {
            return Err(Error::DimMismatch {
                expected: format!("{} values", Self::CHANNELS * height * width),
                actual: format!("{} values", data.len()),
            });
        }
        let data = data.into_iter().map(clamp_unit).collect();
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        assert!(height > 0 && width > 0);
        let mut data = Vec::with_capacity(3 * height * width);
        for v in rgb {
            data.extend(std::iter::repeat_n(clamp_unit(v), height * width));
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Builds an image from a per-pixel function returning RGB.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        assert!(height > 0 && width > 0);
        let hw = height * width;
        let mut data = vec![0.0; 3 * hw];
        for y in 0..height {
            for x in 0..width {
                let px = f(y, x);
                for c in 0..3 {
                    data[c * hw + y * width + x] = clamp_unit(px[c]);
                }
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![3, self.height, self.width], self.data.clone())
    }

    /// Converts a `[3, H, W]` tensor, clamping into range.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.chw();
        if c != 3 {
            return Err(Error::DimMismatch {
                expected: "3 channels".into(),
                actual: format!("{c} channels"),
            });
        }
        Self::new(h, w, t.data().to_vec())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| clamp_unit(f(v))).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.width) {
            row.reverse();
        }
        Self { data, ..self.clone() }
    }

    /// Sub-image `[top, top+h) × [left, left+w)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || top + h > self.height || left + w > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {h}x{w}+{top}+{left} outside {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for y in top..top + h {
                let start = (c * self.height + y) * self.width + left;
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Ok(Self {
            height: h,
            width: w,
            data,
        })
    }

    /// Horizontal concatenation; all images must share a height.
    pub fn hconcat(images: &[Image]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let h = first.height;
        if let Some(bad) = images.iter().find(|i| i.height != h) {
            return Err(Error::DimMismatch {
                expected: format!("height {h}"),
                actual: format!("height {}", bad.height),
            });
        }
        let w: usize = images.iter().map(|i| i.width).sum();
        let mut data = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for y in 0..h {
                for img in images {
                    let start = (c * h + y) * img.width;
                    data.extend_from_slice(&img.data[start..start + img.width]);
                }
            }
        }
        Ok(Self {
            height: h,
            width: w,
            data,
        })
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_valid(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v))
    }
}

fn clamp_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// Decodes an 8-bit RGB raster (PNG or JPEG) into `[-1, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let decoded = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let hw = h * w;
    let mut data = vec![0.0; 3 * hw];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * hw + i] = 2.0 * f64::from(px.0[c]) / 255.0 - 1.0;
        }
    }
    Image::new(h, w, data)
}

/// Encodes as 8-bit RGB; the format follows the file extension.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = (img.height, img.width);
    let hw = h * w;
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (i, px) in buf.pixels_mut().enumerate() {
        for c in 0..3 {
            px.0[c] = ((img.data[c * hw + i] + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
        }
    }
    buf.save(path).map_err(|e| Error::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
