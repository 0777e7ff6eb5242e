use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Image;
use crate::{Error, Result};

const RESTARTS: usize = 10;
const MAX_LLOYD_ITERS: usize = 100;
const SEED: u64 = 0x5eed_c0105;

/// RGB color palette in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub colors: Vec<[f64; 3]>,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn pixels(img: &Image) -> Vec<[f64; 3]> {
    (0..img.height())
        .flat_map(|y| (0..img.width()).map(move |x| (y, x)))
        .map(|(y, x)| img.pixel(y, x))
        .collect()
}

fn distinct(px: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut seen = HashSet::new();
    px.iter()
        .filter(|p| seen.insert(p.map(f64::to_bits)))
        .copied()
        .collect()
}

impl Palette {
    /// k-means palette (k-means++ seeding, fixed seed, best of 10 restarts).
    /// Images with at most `k` distinct colors get those colors verbatim.
    pub fn fit(img: &Image, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument(format!(
                "palette size must be at least 2, got {k}"
            )));
        }
        let px = pixels(img);
        let uniq = distinct(&px);
        if uniq.len() <= k {
            return Ok(Self { colors: uniq });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let mut best: Option<(f64, Vec<[f64; 3]>)> = None;
        for _ in 0..RESTARTS {
            let centers = lloyd(&px, seed_plus_plus(&px, k, &mut rng));
            let sse = assignment_error(&px, &centers);
            if best.as_ref().is_none_or(|(b, _)| sse < *b) {
                best = Some((sse, centers));
            }
        }
        Ok(Self {
            colors: best.expect("at least one restart").1,
        })
    }

    pub fn nearest(&self, p: &[f64; 3]) -> [f64; 3] {
        *self
            .colors
            .iter()
            .min_by(|a, b| dist2(a, p).total_cmp(&dist2(b, p)))
            .expect("palette is non-empty")
    }

    pub fn apply(&self, img: &Image) -> Image {
        Image::from_fn(img.height(), img.width(), |y, x| self.nearest(&img.pixel(y, x)))
    }

    /// Summed squared distance from every pixel to its nearest palette color.
    pub fn error(&self, img: &Image) -> f64 {
        assignment_error(&pixels(img), &self.colors)
    }
}

fn assignment_error(px: &[[f64; 3]], centers: &[[f64; 3]]) -> f64 {
    px.iter()
        .map(|p| {
            centers
                .iter()
                .map(|c| dist2(c, p))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

fn seed_plus_plus(px: &[[f64; 3]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let mut centers = vec![px[rng.random_range(0..px.len())]];
    let mut d: Vec<f64> = px.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d.iter().sum();
        let next = if total <= 0.0 {
            px[rng.random_range(0..px.len())]
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut pick = px.len() - 1;
            for (i, di) in d.iter().enumerate() {
                if target < *di {
                    pick = i;
                    break;
                }
                target -= di;
            }
            px[pick]
        };
        for (di, p) in d.iter_mut().zip(px) {
            *di = di.min(dist2(p, &next));
        }
        centers.push(next);
    }
    centers
}

fn lloyd(px: &[[f64; 3]], mut centers: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
    let k = centers.len();
    let mut labels = vec![usize::MAX; px.len()];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(px) {
            let nearest = (0..k)
                .min_by(|&a, &b| dist2(&centers[a], p).total_cmp(&dist2(&centers[b], p)))
                .expect("k >= 1");
            if *l != nearest {
                *l = nearest;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; 3]; k];
        let mut counts = vec![0usize; k];
        for (l, p) in labels.iter().zip(px) {
            counts[*l] += 1;
            for c in 0..3 {
                sums[*l][c] += p[c];
            }
        }
        for j in 0..k {
            // empty clusters keep their previous center
            if counts[j] > 0 {
                centers[j] = sums[j].map(|s| s / counts[j] as f64);
            }
        }
    }
    centers
}

/// Maps every pixel to the nearest of `k` k-means colors.
pub fn quantize_colors(img: &Image, k: usize) -> Result<Image> {
    Ok(Palette::fit(img, k)?.apply(img))
}
