//! Downstream applications of a trained bundle: interpolation, animation,
//! novel synthesis, conditional generation, harmonization and super-resolution.
//! Inference never adds noise to the code.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::{binarize, is_binary, resample, save_image, Dims, Image};
use crate::model::{ConditionSource, LatentCode, Mode, ModelBundle};
use crate::nn::Graph;
use crate::warp::{augment_sample, AugmentationSpec};
use crate::{Error, Result};

/// Largest side `super_resolve` will produce unless told otherwise.
pub const DEFAULT_SR_MAX_DIM: usize = 4096;
/// Width of the linear ramp around a harmonization mask, in pixels.
pub const FEATHER_RADIUS: f64 = 5.0;

fn no_noise() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

fn finest(levels: Vec<Image>) -> Result<Image> {
    levels
        .into_iter()
        .last()
        .ok_or_else(|| Error::DegenerateConfiguration("bundle has no upscaling blocks".into()))
}

/// Full pipeline from a code: decode, then upscale to the finest level.
pub fn generate_from_code(bundle: &ModelBundle, z: &LatentCode) -> Result<Image> {
    let x0 = bundle.decode(z, 0.0, &mut no_noise())?;
    finest(bundle.generate(&x0)?)
}

/// Encode, decode and upscale a coarsest-level image.
pub fn reconstruct(bundle: &ModelBundle, x0: &Image) -> Result<Image> {
    generate_from_code(bundle, &bundle.encode(x0)?)
}

/// Image generated from the blended code `alpha · z(x1) + (1 − alpha) · z(x2)`.
pub fn interpolate(bundle: &ModelBundle, x1: &Image, x2: &Image, alpha: f64) -> Result<Image> {
    bundle.require_mode(Mode::Unconditional)?;
    check_alpha(alpha)?;
    let (z1, z2) = (bundle.encode(x1)?, bundle.encode(x2)?);
    generate_from_code(bundle, &LatentCode::blend(&z1, &z2, alpha)?)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// One seeded augmentation of `image`, downscaled to the coarsest level.
pub fn augmented_coarse(bundle: &ModelBundle, image: &Image, aug: &AugmentationSpec, seed: u64) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = augment_sample(image, None, aug, &mut rng)?;
    let d = bundle.ladder.coarsest();
    resample(&s.image, d.h, d.w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopMode {
    /// Frames for `alpha = 0, 1/T, ..., 1`.
    #[default]
    Once,
    /// The once-sequence followed by its reverse without the endpoints.
    PingPong,
}

/// Parameters of an animation between two augmentations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnimationSpec {
    /// Number of intervals `T`; a once-animation has `T + 1` frames.
    pub frame_count: usize,
    pub seeds: (u64, u64),
    pub loop_mode: LoopMode,
    pub augmentation: AugmentationSpec,
    /// Where `write_frames` puts the PNGs, if anywhere.
    pub output_dir: Option<PathBuf>,
}

impl Default for AnimationSpec {
    fn default() -> Self {
        Self {
            frame_count: 8,
            seeds: (1, 2),
            loop_mode: LoopMode::Once,
            augmentation: AugmentationSpec::default(),
            output_dir: None,
        }
    }
}

impl AnimationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frame_count < 2 {
            return Err(Error::InvalidArgument(format!(
                "frame_count must be at least 2, got {}",
                self.frame_count
            )));
        }
        self.augmentation.validate()
    }

    pub fn total_frames(&self) -> usize {
        match self.loop_mode {
            LoopMode::Once => self.frame_count + 1,
            LoopMode::PingPong => 2 * self.frame_count,
        }
    }
}

/// Frames morphing from the first seed's augmentation of `image` (frame 0)
/// to the second's (frame `T`).
pub fn animate(bundle: &ModelBundle, image: &Image, spec: &AnimationSpec) -> Result<Vec<Image>> {
    bundle.require_mode(Mode::Unconditional)?;
    spec.validate()?;
    let a = augmented_coarse(bundle, image, &spec.augmentation, spec.seeds.0)?;
    let b = augmented_coarse(bundle, image, &spec.augmentation, spec.seeds.1)?;
    let (za, zb) = (bundle.encode(&a)?, bundle.encode(&b)?);
    let t = spec.frame_count;
    let mut frames = (0..=t)
        .map(|i| generate_from_code(bundle, &LatentCode::blend(&zb, &za, i as f64 / t as f64)?))
        .collect::<Result<Vec<_>>>()?;
    if spec.loop_mode == LoopMode::PingPong {
        let back: Vec<Image> = frames[1..t].iter().rev().cloned().collect();
        frames.extend(back);
    }
    Ok(frames)
}

/// Writes `frame_0000.png`, `frame_0001.png`, ... into `dir`.
pub fn write_frames(frames: &[Image], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let p = dir.join(format!("frame_{i:04}.png"));
            save_image(f, &p).map(|_| p)
        })
        .collect()
}

/// Encodes the frames in `dir` into a video with `ffmpeg`. Returns `false`,
/// after a warning, when the encoder is unavailable or fails.
pub fn encode_video(dir: impl AsRef<Path>, out: impl AsRef<Path>, fps: u32) -> bool {
    let status = std::process::Command::new("ffmpeg")
        .args(["-y", "-loglevel", "error", "-framerate", &fps.to_string(), "-i"])
        .arg(dir.as_ref().join("frame_%04d.png"))
        .args(["-pix_fmt", "yuv420p"])
        .arg(out.as_ref())
        .status();
    match status {
        Ok(s) if s.success() => true,
        Ok(s) => {
            log::warn!("ffmpeg exited with {s}; frames were kept");
            false
        }
        Err(e) => {
            log::warn!("ffmpeg unavailable ({e}); frames were kept");
            false
        }
    }
}

/// Wide image built from two rows of `count` augmentations each (seeded by
/// `seeds`), blended in code space with weight `alpha` on the first row.
pub fn synthesize_novel(
    bundle: &ModelBundle,
    image: &Image,
    count: usize,
    seeds: (u64, u64),
    alpha: f64,
    aug: &AugmentationSpec,
) -> Result<Image> {
    bundle.require_mode(Mode::Unconditional)?;
    check_alpha(alpha)?;
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    let ladder = bundle.ladder.scaled_to(Dims::new(image.height(), count * image.width()));
    let x0 = ladder.coarsest();
    let row = |seed: u64| -> Result<LatentCode> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts = (0..count)
            .map(|_| augment_sample(image, None, aug, &mut rng).map(|s| s.image))
            .collect::<Result<Vec<_>>>()?;
        let wide = Image::hconcat(&parts)?;
        bundle.encode_any(&resample(&wide, x0.h, x0.w)?)
    };
    let z = LatentCode::blend(&row(seeds.0)?, &row(seeds.1)?, alpha)?;
    let start = bundle.decode_to(&z, 0.0, &mut no_noise(), x0)?;
    let out = bundle.run_blocks(&start, &ladder, 0)?;
    match out.last() {
        Some(o) => Image::from_tensor(&o.output),
        None => Ok(start),
    }
}

fn require_source(bundle: &ModelBundle, source: ConditionSource) -> Result<()> {
    if bundle.condition != source {
        return Err(Error::ModeMismatch {
            required: format!("{} ({source:?})", Mode::Conditional),
            actual: format!("{} ({:?})", bundle.mode(), bundle.condition),
        });
    }
    Ok(())
}

/// Realistic image from a rough painting, via the training palette.
pub fn paint2image(bundle: &ModelBundle, paint: &Image) -> Result<Image> {
    require_source(bundle, ConditionSource::PaintQuantized)?;
    finest(bundle.generate(&bundle.prepare_condition(paint)?)?)
}

/// Realistic image from an edge map. Non-binary maps are thresholded at 0
/// with a warning.
pub fn edges2image(bundle: &ModelBundle, edges: &Image) -> Result<Image> {
    require_source(bundle, ConditionSource::EdgeMap)?;
    let edges = if is_binary(edges) {
        edges.clone()
    } else {
        log::warn!("edge map is not binary; thresholding at 0");
        binarize(edges, 0.0)
    };
    finest(bundle.generate(&bundle.prepare_condition(&edges)?)?)
}

/// A pasted-in foreground to blend into its surroundings.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonizationJob {
    pub composite: Image,
    /// Foreground where any channel is positive.
    pub mask: Image,
    /// Injection level; defaults to `ceil(N / 2)`.
    pub level: Option<usize>,
}

impl HarmonizationJob {
    pub fn validate(&self) -> Result<()> {
        if self.mask.dims() != self.composite.dims() {
            return Err(Error::DimMismatch {
                expected: format!("mask {}", self.composite.dims()),
                actual: format!("mask {}", self.mask.dims()),
            });
        }
        Ok(())
    }
}

pub fn default_harmonization_level(num_blocks: usize) -> usize {
    num_blocks.div_ceil(2).min(num_blocks.saturating_sub(1))
}

/// Per-pixel blend weight: 1 inside the mask, falling linearly to 0 at
/// `FEATHER_RADIUS` pixels away.
pub fn feather_weights(mask: &Image) -> Vec<f64> {
    let (h, w) = (mask.height(), mask.width());
    let on: Vec<bool> = (0..h * w)
        .map(|i| mask.pixel(i / w, i % w).iter().any(|&v| v > 0.0))
        .collect();
    let r = FEATHER_RADIUS.ceil() as isize;
    (0..h * w)
        .map(|i| {
            if on[i] {
                return 1.0;
            }
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            let mut best = f64::INFINITY;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize && on[yy as usize * w + xx as usize] {
                        best = best.min(((dy * dy + dx * dx) as f64).sqrt());
                    }
                }
            }
            (1.0 - best / FEATHER_RADIUS).max(0.0)
        })
        .collect()
}

/// Re-renders the composite from an intermediate level and blends the result
/// back in around the mask; pixels beyond the feather are left untouched.
pub fn harmonize(bundle: &ModelBundle, job: &HarmonizationJob) -> Result<Image> {
    job.validate()?;
    let n_blocks = bundle.generator.num_blocks();
    let level = job.level.unwrap_or_else(|| default_harmonization_level(n_blocks));
    if level >= n_blocks {
        return Err(Error::InvalidArgument(format!(
            "injection level must lie in 0..{n_blocks}, got {level}"
        )));
    }
    let ladder = bundle.ladder.scaled_to(job.composite.dims());
    let d = ladder.dims[level];
    let start = resample(&job.composite, d.h, d.w)?;
    let out = bundle.run_blocks(&start, &ladder, level)?;
    let generated = Image::from_tensor(&out.last().expect("at least one block runs").output)?;
    let weights = feather_weights(&job.mask);
    let (h, w) = (job.composite.height(), job.composite.width());
    let mut data = job.composite.data().to_vec();
    for c in 0..3 {
        for (i, &a) in weights.iter().enumerate() {
            if a > 0.0 {
                let k = c * h * w + i;
                data[k] = a * generated.data()[k] + (1.0 - a) * data[k];
            }
        }
    }
    Image::new(h, w, data)
}

/// Dims after `steps` upscalings by `1 / ratio`.
pub fn super_resolved_dims(input: Dims, ratio: f64, steps: usize) -> Dims {
    let s = (1.0 / ratio).powi(steps as i32);
    let up = |n: usize| ((n as f64 * s) - 1e-9).ceil() as usize;
    Dims::new(up(input.h), up(input.w))
}

/// Applies the finest block `steps` times, each time lifting by `1 / r`.
/// Fails when either side would exceed `max_dim`.
pub fn super_resolve(bundle: &ModelBundle, img: &Image, steps: usize, max_dim: usize) -> Result<Image> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    let last = bundle
        .generator
        .blocks()
        .last()
        .ok_or_else(|| Error::DegenerateConfiguration("bundle has no upscaling blocks".into()))?;
    let target = super_resolved_dims(img.dims(), bundle.ladder.ratio, steps);
    if target.h.max(target.w) > max_dim {
        return Err(Error::InvalidArgument(format!(
            "output {target} would exceed the {max_dim}-pixel limit"
        )));
    }
    let mut cur = img.clone();
    for k in 1..=steps {
        let out = super_resolved_dims(img.dims(), bundle.ladder.ratio, k);
        let mut g = Graph::new(&bundle.params);
        let x = g.input(cur.to_tensor());
        let v = last.forward(&mut g, x, out);
        cur = Image::from_tensor(g.value(v.output))?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests;
