use serde::{Deserialize, Serialize};

use super::{resample, Image};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }

    pub fn min(&self) -> usize {
        self.h.min(self.w)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.h, self.w)
    }
}

/// Pyramid hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidSpec {
    /// Requested ratio `r` between consecutive levels (coarse / fine).
    pub scale_factor: f64,
    /// Minimum dimension of the coarsest level.
    pub min_dim: usize,
    /// Inputs whose larger side exceeds this are shrunk first.
    pub max_dim: usize,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        Self {
            scale_factor: 0.75,
            min_dim: 25,
            max_dim: 250,
        }
    }
}

impl PyramidSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_factor > 0.0 && self.scale_factor < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "pyramid scale factor must lie in (0, 1), got {}",
                self.scale_factor
            )));
        }
        if self.min_dim == 0 || self.max_dim < self.min_dim {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= min_dim <= max_dim, got min_dim={} max_dim={}",
                self.min_dim, self.max_dim
            )));
        }
        Ok(())
    }

    /// Dims of the training image after the optional pre-shrink.
    pub fn finest_dims(&self, h: usize, w: usize) -> Dims {
        let big = h.max(w);
        if big <= self.max_dim {
            return Dims::new(h, w);
        }
        let s = self.max_dim as f64 / big as f64;
        Dims::new(
            ((h as f64 * s).round() as usize).max(1),
            ((w as f64 * s).round() as usize).max(1),
        )
    }

    /// Level geometry for an `h × w` training image.
    pub fn ladder(&self, h: usize, w: usize) -> Result<PyramidLadder> {
        self.validate()?;
        let finest = self.finest_dims(h, w);
        let m = finest.min();
        if self.min_dim > m {
            return Err(Error::InvalidArgument(format!(
                "min_dim {} exceeds image min-dimension {m} (image {finest})",
                self.min_dim
            )));
        }
        let n_blocks = if m == self.min_dim {
            0
        } else {
            let exact = (self.min_dim as f64 / m as f64).ln() / self.scale_factor.ln();
            (exact - 1e-9).ceil() as usize
        };
        let ratio = if n_blocks == 0 {
            self.scale_factor
        } else {
            (self.min_dim as f64 / m as f64).powf(1.0 / n_blocks as f64)
        };
        let dims = ladder_dims(finest, ratio, n_blocks + 1);
        for pair in dims.windows(2) {
            if pair[0].h >= pair[1].h || pair[0].w >= pair[1].w {
                return Err(Error::InvalidArgument(format!(
                    "pyramid levels {} and {} are not strictly increasing; use a smaller scale factor",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(PyramidLadder { dims, ratio })
    }
}

fn ladder_dims(finest: Dims, ratio: f64, levels: usize) -> Vec<Dims> {
    let n = levels - 1;
    let mut dims: Vec<Dims> = (0..levels)
        .map(|lvl| {
            let s = ratio.powi((n - lvl) as i32);
            Dims::new(
                ((finest.h as f64 * s).round() as usize).max(1),
                ((finest.w as f64 * s).round() as usize).max(1),
            )
        })
        .collect();
    dims[n] = finest;
    dims
}

/// Per-level dims (index 0 coarsest) plus the effective ratio between levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidLadder {
    pub dims: Vec<Dims>,
    pub ratio: f64,
}

impl PyramidLadder {
    pub fn num_levels(&self) -> usize {
        self.dims.len()
    }

    /// Number of upscaling steps `N`.
    pub fn num_blocks(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn coarsest(&self) -> Dims {
        self.dims[0]
    }

    pub fn finest(&self) -> Dims {
        self.dims[self.dims.len() - 1]
    }

    /// Same level ratios applied to a different finest size (fully
    /// convolutional inference on other canvases).
    pub fn scaled_to(&self, finest: Dims) -> PyramidLadder {
        if finest == self.finest() {
            return self.clone();
        }
        PyramidLadder {
            dims: ladder_dims(finest, self.ratio, self.dims.len()),
            ratio: self.ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePyramid {
    levels: Vec<Image>,
    ladder: PyramidLadder,
}

impl ImagePyramid {
    /// Resamples `img` onto each level of an existing ladder; the finest
    /// level must match the image dims and is kept verbatim.
    pub fn from_ladder(img: &Image, ladder: &PyramidLadder) -> Result<Self> {
        if img.dims() != ladder.finest() {
            return Err(Error::DimMismatch {
                expected: ladder.finest().to_string(),
                actual: img.dims().to_string(),
            });
        }
        let n = ladder.num_blocks();
        let mut levels = Vec::with_capacity(n + 1);
        for d in &ladder.dims[..n] {
            levels.push(resample(img, d.h, d.w)?);
        }
        levels.push(img.clone());
        Ok(Self {
            levels,
            ladder: ladder.clone(),
        })
    }

    pub fn levels(&self) -> &[Image] {
        &self.levels
    }

    pub fn level(&self, n: usize) -> &Image {
        &self.levels[n]
    }

    pub fn ladder(&self) -> &PyramidLadder {
        &self.ladder
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn coarsest(&self) -> &Image {
        &self.levels[0]
    }

    pub fn finest(&self) -> &Image {
        &self.levels[self.levels.len() - 1]
    }
}

/// Builds the training pyramid, pre-shrinking inputs larger than `max_dim`.
pub fn build_pyramid(img: &Image, spec: &PyramidSpec) -> Result<ImagePyramid> {
    let ladder = spec.ladder(img.height(), img.width())?;
    let finest = ladder.finest();
    let base = if finest == img.dims() {
        img.clone()
    } else {
        resample(img, finest.h, finest.w)?
    };
    ImagePyramid::from_ladder(&base, &ladder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(r: f64, min_dim: usize, max_dim: usize) -> PyramidSpec {
        PyramidSpec {
            scale_factor: r,
            min_dim,
            max_dim,
        }
    }

    #[test]
    fn level_count_formula() {
        // ceil(ln(25/188)/ln(0.75)) + 1 = ceil(7.013) + 1
        let l = spec(0.75, 25, 250).ladder(188, 250).unwrap();
        assert_eq!(l.num_levels(), 9);
        assert_eq!(l.coarsest().min(), 25);
        assert_eq!(l.finest(), Dims::new(188, 250));
    }

    #[test]
    fn halving_ladder() {
        let l = spec(0.5, 25, 400).ladder(100, 120).unwrap();
        let mins: Vec<usize> = l.dims.iter().map(Dims::min).collect();
        assert_eq!(mins, vec![25, 50, 100]);
    }

    #[test]
    fn degenerate_single_level() {
        let img = Image::from_fn(25, 31, |y, x| [(y + x) as f64 / 60.0, 0.0, 0.0]);
        let p = build_pyramid(&img, &spec(0.6, 25, 250)).unwrap();
        assert_eq!(p.num_levels(), 1);
        assert_eq!(p.finest(), &img);
    }

    #[test]
    fn pre_shrink_and_errors() {
        let img = Image::filled(100, 500, [0.1; 3]);
        let p = build_pyramid(&img, &spec(0.75, 25, 250)).unwrap();
        assert_eq!(p.finest().dims(), Dims::new(50, 250));
        assert!(build_pyramid(&img, &spec(1.0, 25, 250)).is_err());
        assert!(build_pyramid(&img, &spec(0.0, 25, 250)).is_err());
        assert!(build_pyramid(&Image::filled(20, 40, [0.0; 3]), &spec(0.75, 25, 250)).is_err());
    }

    /// Smooth random field: a few low-frequency cosines.
    fn smooth_random(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
        let terms: Vec<[f64; 5]> = (0..4)
            .map(|_| {
                [
                    rng.random_range(-0.2..0.2),
                    rng.random_range(0.0..2.5),
                    rng.random_range(0.0..2.5),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.0..1.0),
                ]
            })
            .collect();
        Image::from_fn(h, w, |y, x| {
            let (u, v) = (y as f64 / h as f64, x as f64 / w as f64);
            let mut px = [0.0; 3];
            for (c, p) in px.iter_mut().enumerate() {
                *p = terms
                    .iter()
                    .map(|t| t[0] * (t[1] * 3.0 * u + t[2] * 3.0 * v + t[3] + c as f64 * t[4]).cos())
                    .sum();
            }
            px
        })
    }

    #[test]
    fn adjacent_levels_agree_after_upsampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let img = smooth_random(64, 80, &mut rng);
            let p = build_pyramid(&img, &PyramidSpec::default()).unwrap();
            for n in 0..p.num_levels() - 1 {
                let next = p.level(n + 1);
                let up = resample(p.level(n), next.height(), next.width()).unwrap();
                let d = up.max_abs_diff(next);
                assert!(d <= 0.02, "level {n}: {d}");
            }
        }
    }

    #[test]
    fn dims_strictly_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let h = rng.random_range(25..300);
            let w = rng.random_range(25..300);
            let r = rng.random_range(0.5..0.85);
            if let Ok(l) = spec(r, 25, 250).ladder(h, w) {
                for pair in l.dims.windows(2) {
                    assert!(pair[0].h < pair[1].h && pair[0].w < pair[1].w);
                }
                assert_eq!(l.coarsest().min(), 25);
            }
        }
    }
}
