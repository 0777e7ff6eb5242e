use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tps::{control_grid, Point, TpsWarp, DEFAULT_LAMBDA};
use crate::imaging::{resample, Image};
use crate::{Error, Result};

/// Random augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    /// Range of the crop's area as a fraction of the image area.
    pub crop_fraction_range: (f64, f64),
    pub flip_probability: f64,
    /// Control-point displacement bound as a fraction of the grid spacing.
    pub tps_magnitude: f64,
    /// Control points per side.
    pub tps_grid: usize,
    pub tps_lambda: f64,
    /// Mixed into the trainer's per-iteration augmentation streams.
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            crop_fraction_range: (0.85, 1.0),
            flip_probability: 0.5,
            tps_magnitude: 0.1,
            tps_grid: 4,
            tps_lambda: DEFAULT_LAMBDA,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    /// Augmentations switched off entirely.
    pub fn disabled() -> Self {
        Self {
            crop_fraction_range: (1.0, 1.0),
            flip_probability: 0.0,
            tps_magnitude: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_fraction_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "crop fraction range must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidArgument(format!(
                "flip probability must lie in [0, 1], got {}",
                self.flip_probability
            )));
        }
        if !(self.tps_magnitude >= 0.0 && self.tps_magnitude.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tps magnitude must be non-negative, got {}",
                self.tps_magnitude
            )));
        }
        if self.tps_grid < 2 || self.tps_grid > 8 {
            return Err(Error::InvalidArgument(format!(
                "tps grid must have 2..=8 points per side, got {}",
                self.tps_grid
            )));
        }
        if self.tps_lambda.is_nan() || self.tps_lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "tps lambda must be non-negative, got {}",
                self.tps_lambda
            )));
        }
        Ok(())
    }
}

/// Equi-spaced grid with each point displaced uniformly within
/// `±tps_magnitude × spacing`, fitted with the spec's smoothness weight.
pub fn random_tps(spec: &AugmentationSpec, rng: &mut impl Rng) -> Result<TpsWarp> {
    let grid = control_grid(spec.tps_grid);
    let m = spec.tps_magnitude / (spec.tps_grid - 1) as f64;
    if m == 0.0 {
        return Ok(TpsWarp::identity(&grid));
    }
    let targets: Vec<Point> = grid
        .iter()
        .map(|p| [p[0] + rng.random_range(-m..=m), p[1] + rng.random_range(-m..=m)])
        .collect();
    TpsWarp::fit(&grid, &targets, spec.tps_lambda)
}

/// Pixel rectangle `[top, top+height) × [left, left+width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Everything needed to replay an augmentation exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpRecord {
    pub crop: CropBox,
    pub flipped: bool,
    /// Forward map; images are resampled through its inverse.
    pub tps: TpsWarp,
}

impl WarpRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Applies crop (resized back to the input dims), flip, then the warp.
    pub fn replay(&self, img: &Image) -> Result<Image> {
        let backward = backward_map(&self.tps)?;
        self.replay_with(img, backward.as_ref())
    }

    fn replay_with(&self, img: &Image, backward: Option<&TpsWarp>) -> Result<Image> {
        let c = self.crop;
        let mut out = if (c.height, c.width) == (img.height(), img.width()) {
            img.clone()
        } else {
            let cropped = img.crop(c.top, c.left, c.height, c.width)?;
            resample(&cropped, img.height(), img.width())?
        };
        if self.flipped {
            out = out.flip_horizontal();
        }
        Ok(match backward {
            Some(b) => sample_backward(b, &out),
            None => out,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub image: Image,
    pub condition: Option<Image>,
    pub record: WarpRecord,
}

fn is_identity(w: &TpsWarp) -> bool {
    w.affine == [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
        && w.weights.iter().all(|v| v[0] == 0.0 && v[1] == 0.0)
}

fn backward_map(forward: &TpsWarp) -> Result<Option<TpsWarp>> {
    if is_identity(forward) {
        Ok(None)
    } else {
        forward.inverse().map(Some)
    }
}

/// Continuous source coordinate reflected into `[-0.5, n - 0.5]`.
fn reflect_coord(s: f64, n: usize) -> f64 {
    let n = n as f64;
    let mut t = (s + 0.5).rem_euclid(2.0 * n);
    if t > n {
        t = 2.0 * n - t;
    }
    t - 0.5
}

/// Bilinear sample at a continuous pixel coordinate, reflecting out-of-range
/// coordinates back into the image.
pub fn bilinear(img: &Image, c: usize, sy: f64, sx: f64) -> f64 {
    let (h, w) = (img.height(), img.width());
    let sy = reflect_coord(sy, h).clamp(0.0, (h - 1) as f64);
    let sx = reflect_coord(sx, w).clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let top = img.get(c, y0, x0) * (1.0 - fx) + img.get(c, y0, x1) * fx;
    let bottom = img.get(c, y1, x0) * (1.0 - fx) + img.get(c, y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// `out(p) = img(map(p))` with `p` at pixel centers in normalized coordinates.
pub fn sample_backward(map: &TpsWarp, img: &Image) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut coords = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let q = map.eval([(x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64]);
            coords.push((q[1] * h as f64 - 0.5, q[0] * w as f64 - 0.5));
        }
    }
    Image::from_fn(h, w, |y, x| {
        let (sy, sx) = coords[y * w + x];
        [
            bilinear(img, 0, sy, sx),
            bilinear(img, 1, sy, sx),
            bilinear(img, 2, sy, sx),
        ]
    })
}

/// Warps an image so that content at each control point moves to its target.
pub fn apply_warp(warp: &TpsWarp, img: &Image) -> Result<Image> {
    Ok(match backward_map(warp)? {
        Some(b) => sample_backward(&b, img),
        None => img.clone(),
    })
}

/// Random crop, horizontal flip, and TPS warp (in that order), applied
/// identically to the image and the optional conditioning map.
pub fn augment_sample(
    img: &Image,
    condition: Option<&Image>,
    spec: &AugmentationSpec,
    rng: &mut impl Rng,
) -> Result<AugmentedSample> {
    spec.validate()?;
    if let Some(c) = condition {
        if c.dims() != img.dims() {
            return Err(Error::DimMismatch {
                expected: format!("condition {}", img.dims()),
                actual: c.dims().to_string(),
            });
        }
    }
    let (h, w) = (img.height(), img.width());
    let (lo, hi) = spec.crop_fraction_range;
    let side = rng.random_range(lo..=hi).sqrt();
    let ch = ((h as f64 * side).round() as usize).clamp(1, h);
    let cw = ((w as f64 * side).round() as usize).clamp(1, w);
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    let flipped = rng.random::<f64>() < spec.flip_probability;
    let tps = random_tps(spec, rng)?;
    let record = WarpRecord {
        crop: CropBox {
            top,
            left,
            height: ch,
            width: cw,
        },
        flipped,
        tps,
    };
    let backward = backward_map(&record.tps)?;
    let image = record.replay_with(img, backward.as_ref())?;
    let condition = condition
        .map(|c| record.replay_with(c, backward.as_ref()))
        .transpose()?;
    Ok(AugmentedSample {
        image,
        condition,
        record,
    })
}
