//! Shared fixtures for the benchmarks.

use augurone_core::model::ModelConfig;
use augurone_core::objective::LossMode;
use augurone_core::trainer::TrainConfig;
use augurone_core::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth synthetic scene with a few hard edges.
pub fn scene(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |y, x| {
        let (fy, fx) = (y as f64 / h as f64, x as f64 / w as f64);
        let disc = (fx - 0.7).powi(2) + (fy - 0.3).powi(2) < 0.02;
        if disc {
            [0.9, 0.7, -0.6]
        } else {
            [0.6 * (7.0 * fx).sin(), fy - 0.5, 0.4 * (5.0 * fy + 3.0 * fx).cos()]
        }
    })
}

/// Control points displaced uniformly by up to `magnitude`.
pub fn jittered(points: &[[f64; 2]], magnitude: f64, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    points
        .iter()
        .map(|p| [p[0] + rng.random_range(-magnitude..=magnitude), p[1] + rng.random_range(-magnitude..=magnitude)])
        .collect()
}

/// Pixel-loss training config on a 64-px image with `channels` features.
pub fn train_config(channels: usize) -> TrainConfig {
    TrainConfig {
        image_path: "bench.png".into(),
        loss: LossMode::Pixel,
        iterations: 1_000_000,
        model: ModelConfig {
            channels,
            encoder_channels: [channels, 2 * channels, 4 * channels],
            ..Default::default()
        },
        ..Default::default()
    }
}
