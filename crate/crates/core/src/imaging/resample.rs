use std::sync::Arc;

use super::Image;
use crate::nn::{kernels, ResizePlan};
use crate::{Error, Result};

const CUBIC_A: f64 = -0.5;

/// Catmull-Rom cubic convolution kernel.
pub fn cubic_weight(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        ((CUBIC_A + 2.0) * t - (CUBIC_A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((CUBIC_A * t - 5.0 * CUBIC_A) * t + 8.0 * CUBIC_A) * t - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// `out_n × in_n` row-major bicubic interpolation matrix with pixel-center
/// alignment. Sample coordinates are clamped at the borders. When shrinking,
/// the kernel is stretched by the inverse scale so the result is antialiased.
pub fn interpolation_matrix(in_n: usize, out_n: usize) -> Vec<f64> {
    let mut m = vec![0.0; out_n * in_n];
    if in_n == out_n {
        for i in 0..in_n {
            m[i * in_n + i] = 1.0;
        }
        return m;
    }
    let scale = out_n as f64 / in_n as f64;
    let support = if scale < 1.0 { 1.0 / scale } else { 1.0 };
    for i in 0..out_n {
        let center = (i as f64 + 0.5) / scale - 0.5;
        let lo = (center - 2.0 * support).floor() as isize;
        let hi = (center + 2.0 * support).ceil() as isize;
        let row = &mut m[i * in_n..(i + 1) * in_n];
        let mut total = 0.0;
        for j in lo..=hi {
            let w = cubic_weight((center - j as f64) / support);
            if w == 0.0 {
                continue;
            }
            let idx = j.clamp(0, in_n as isize - 1) as usize;
            row[idx] += w;
            total += w;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    m
}

pub fn resize_plan(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Arc<ResizePlan> {
    Arc::new(ResizePlan {
        in_h,
        in_w,
        out_h,
        out_w,
        rows: interpolation_matrix(in_h, out_h),
        cols: interpolation_matrix(in_w, out_w),
    })
}

fn check_target(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resample target must be positive, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Bicubic resample, without clamping; returns raw channel-major values.
pub fn resample_unclamped(img: &Image, target_h: usize, target_w: usize) -> Result<Vec<f64>> {
    check_target(target_h, target_w)?;
    if (target_h, target_w) == (img.height(), img.width()) {
        return Ok(img.data().to_vec());
    }
    let plan = resize_plan(img.height(), img.width(), target_h, target_w);
    Ok(kernels::resize(
        img.data(),
        3,
        img.height(),
        img.width(),
        &plan.rows,
        target_h,
        &plan.cols,
        target_w,
    ))
}

/// Bicubic resample to exact target dims, clamped into `[-1, 1]`.
pub fn resample(img: &Image, target_h: usize, target_w: usize) -> Result<Image> {
    let data = resample_unclamped(img, target_h, target_w)?;
    Image::new(target_h, target_w, data)
}
