//! Canny edge extraction producing a binary `{-1, +1}` image.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::Image;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CannyParams {
    pub sigma: f64,
    /// Hysteresis thresholds on the gradient magnitude normalized by its image maximum.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            low: 0.1,
            high: 0.2,
        }
    }
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

fn at(plane: &[f64], h: usize, w: usize, y: isize, x: isize) -> f64 {
    let y = y.clamp(0, h as isize - 1) as usize;
    let x = x.clamp(0, w as isize - 1) as usize;
    plane[y * w + x]
}

fn smooth(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * at(plane, h, w, y as isize, x as isize + i as isize - r))
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * at(&tmp, h, w, y as isize + i as isize - r, x as isize))
                .sum();
        }
    }
    out
}

/// Full Canny pipeline: luma, Gaussian smoothing, Sobel gradients,
/// non-maximum suppression, hysteresis. Edge pixels are `+1`, the rest `-1`.
pub fn extract_edges(img: &Image, params: CannyParams) -> Result<Image> {
    if !(params.low >= 0.0 && params.low < params.high) {
        return Err(Error::InvalidArgument(format!(
            "edge thresholds must satisfy 0 <= low < high, got low={} high={}",
            params.low, params.high
        )));
    }
    let (h, w) = (img.height(), img.width());
    let gray: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let [r, g, b] = img.pixel(y, x).map(|v| (v + 1.0) / 2.0);
            0.299 * r + 0.587 * g + 0.114 * b
        })
        .collect();
    let s = smooth(&gray, h, w, params.sigma);

    let mut mag = vec![0.0; h * w];
    let mut dir = vec![0u8; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dy: isize, dx: isize| at(&s, h, w, y + dy, x + dx);
            let gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let i = y as usize * w + x as usize;
            mag[i] = gx.hypot(gy);
            // 0: horizontal gradient, 1: 45°, 2: vertical, 3: 135° (image coords, y down)
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            dir[i] = match angle {
                a if !(22.5..157.5).contains(&a) => 0,
                a if a < 67.5 => 1,
                a if a < 112.5 => 2,
                _ => 3,
            };
        }
    }
    let peak = mag.iter().copied().fold(0.0, f64::max);
    if peak <= 1e-12 {
        return Ok(Image::filled(h, w, [-1.0; 3]));
    }
    mag.iter_mut().for_each(|m| *m /= peak);

    // Non-maximum suppression; ties resolve toward the negative-side neighbor
    // so plateaus yield single-pixel lines.
    let mut thin = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let (dy, dx) = match dir[i] {
                0 => (0, 1),
                1 => (1, 1),
                2 => (1, 0),
                _ => (1, -1),
            };
            let m = mag[i];
            let before = at(&mag, h, w, y - dy, x - dx);
            let after = at(&mag, h, w, y + dy, x + dx);
            let inside = |yy: isize, xx: isize| yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize;
            let before = if inside(y - dy, x - dx) { before } else { 0.0 };
            let after = if inside(y + dy, x + dx) { after } else { 0.0 };
            if m > before && m >= after {
                thin[i] = m;
            }
        }
    }

    let mut edge = vec![false; h * w];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= params.high {
            edge[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edge[j] && thin[j] >= params.low {
                    edge[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(Image::from_fn(h, w, |y, x| {
        [if edge[y * w + x] { 1.0 } else { -1.0 }; 3]
    }))
}

/// `true` when every value is exactly `-1` or `+1`.
pub fn is_binary(img: &Image) -> bool {
    img.data().iter().all(|&v| v == 1.0 || v == -1.0)
}

/// Thresholds a (possibly resampled) edge map back to `{-1, +1}`; a pixel is an
/// edge when any channel exceeds `threshold`.
pub fn binarize(img: &Image, threshold: f64) -> Image {
    Image::from_fn(img.height(), img.width(), |y, x| {
        let on = img.pixel(y, x).iter().any(|&v| v > threshold);
        [if on { 1.0 } else { -1.0 }; 3]
    })
}
