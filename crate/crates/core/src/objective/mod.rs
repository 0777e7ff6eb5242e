//! Training losses: perceptual distance, the multi-scale upscaling loss, the
//! code penalty, and their sum.

mod vgg;

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::imaging::{Image, ImagePyramid};
use crate::model::{LatentCode, Mode, ModelBundle};
use crate::nn::{Graph, Tensor, Var};
use crate::warp::AugmentedSample;
use crate::{Error, Result};

pub use vgg::{Vgg16, VGG16_FILE};

/// Weight of the pixel term added to the feature distance.
pub const PIXEL_WEIGHT: f64 = 0.1;
/// Default weight of the code penalty.
pub const DEFAULT_ALPHA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Mean absolute pixel error; needs no pretrained weights.
    Pixel,
    /// Channel-normalized VGG-16 features plus a small pixel term.
    #[default]
    Perceptual,
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::Pixel => "pixel",
            LossMode::Perceptual => "perceptual",
        })
    }
}

/// The image distance `ℓ` used by every loss term.
#[derive(Debug, Clone)]
pub struct Perceptual {
    vgg: Option<Arc<Vgg16>>,
}

impl Perceptual {
    pub fn pixel() -> Self {
        Self { vgg: None }
    }

    pub fn with_vgg(vgg: Vgg16) -> Self {
        Self {
            vgg: Some(Arc::new(vgg)),
        }
    }

    /// Pixel mode always succeeds; perceptual mode needs the VGG weights file
    /// in `weights_dir` or the weights environment variable's directory.
    pub fn load(mode: LossMode, weights_dir: Option<&std::path::Path>) -> Result<Self> {
        match mode {
            LossMode::Pixel => Ok(Self::pixel()),
            LossMode::Perceptual => Ok(Self::with_vgg(Vgg16::locate(weights_dir)?)),
        }
    }

    pub fn mode(&self) -> LossMode {
        if self.vgg.is_some() {
            LossMode::Perceptual
        } else {
            LossMode::Pixel
        }
    }

    /// Scalar node holding `ℓ(a, b)`.
    pub fn distance_graph<'a>(&'a self, g: &mut Graph<'a>, a: Var, b: Var) -> Var {
        let pixel = g.mean_abs_diff(a, b);
        let Some(vgg) = &self.vgg else {
            return pixel;
        };
        let (ta, tb) = (vgg.taps(g, a), vgg.taps(g, b));
        let mut terms = Vec::with_capacity(ta.len() + 1);
        for (fa, fb) in ta.into_iter().zip(tb) {
            let (na, nb) = (g.channel_normalize(fa), g.channel_normalize(fb));
            terms.push(g.mean_abs_diff(na, nb));
        }
        terms.push(g.scale(pixel, PIXEL_WEIGHT));
        g.sum(&terms)
    }

    pub fn distance(&self, a: &Image, b: &Image) -> Result<f64> {
        check_same(a, b)?;
        let store = crate::nn::ParamStore::new();
        let mut g = Graph::new(&store);
        let (va, vb) = (g.input(a.to_tensor()), g.input(b.to_tensor()));
        let d = self.distance_graph(&mut g, va, vb);
        Ok(g.value(d).item())
    }
}

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch {
            expected: a.dims().to_string(),
            actual: b.dims().to_string(),
        });
    }
    Ok(())
}

pub fn perceptual_distance(perceptual: &Perceptual, a: &Image, b: &Image) -> Result<f64> {
    perceptual.distance(a, b)
}

/// `Σₙ ℓ(predₙ, actualₙ)` over levels `1..=N`; returns the sum and the per-level terms.
pub fn upscaling_loss(
    perceptual: &Perceptual,
    preds: &[Image],
    pyramid: &ImagePyramid,
) -> Result<(f64, Vec<f64>)> {
    let targets = &pyramid.levels()[1..];
    if preds.len() != targets.len() {
        return Err(Error::DimMismatch {
            expected: format!("{} predicted levels", targets.len()),
            actual: format!("{} predicted levels", preds.len()),
        });
    }
    let per_level = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| perceptual.distance(p, t))
        .collect::<Result<Vec<_>>>()?;
    Ok((per_level.iter().sum(), per_level))
}

/// `alpha · ‖z‖²`.
pub fn kl_loss(z: &LatentCode, alpha: f64) -> f64 {
    alpha * z.tensor.sq_norm()
}

/// Loss breakdown for one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub upscaling: f64,
    pub reconstruction_l0: f64,
    pub kl: f64,
    pub total: f64,
    pub per_level: Vec<f64>,
}

/// Loss hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub alpha: f64,
    pub noise_sigma: f64,
    /// Feed the decoded coarse image into the generator (otherwise the real one).
    pub feed_decoded: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            noise_sigma: crate::model::DEFAULT_NOISE_SIGMA,
            feed_decoded: true,
        }
    }
}

/// One augmented sample arranged on the bundle's ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub pyramid: ImagePyramid,
    /// Prepared conditioning input at the coarsest level (conditional mode).
    pub condition: Option<Image>,
}

impl TrainingSample {
    pub fn new(bundle: &ModelBundle, sample: &AugmentedSample) -> Result<Self> {
        let pyramid = ImagePyramid::from_ladder(&sample.image, &bundle.ladder)?;
        let condition = match (bundle.mode(), &sample.condition) {
            (Mode::Unconditional, None) => None,
            (Mode::Conditional, Some(c)) => Some(bundle.prepare_condition(c)?),
            (Mode::Conditional, None) => {
                return Err(Error::InvalidArgument(
                    "conditional bundle needs a conditioning image in every sample".into(),
                ))
            }
            (Mode::Unconditional, Some(_)) => {
                return Err(Error::ModeMismatch {
                    required: Mode::Conditional.to_string(),
                    actual: Mode::Unconditional.to_string(),
                })
            }
        };
        Ok(Self { pyramid, condition })
    }
}

/// Graph handles of the total loss.
#[derive(Debug, Clone)]
pub struct LossVars {
    pub total: Var,
    pub report: LossReport,
    /// Generator outputs, levels `1..=N`.
    pub outputs: Vec<Var>,
}

/// Records the total loss on `g`. Noise for the code is drawn from `rng` only
/// when `noise_sigma > 0`.
pub fn build_total_loss<'a>(
    g: &mut Graph<'a>,
    bundle: &'a ModelBundle,
    perceptual: &'a Perceptual,
    sample: &TrainingSample,
    cfg: &ObjectiveConfig,
    rng: &mut impl Rng,
) -> Result<LossVars> {
    if sample.pyramid.ladder() != &bundle.ladder {
        return Err(Error::DimMismatch {
            expected: format!("{:?}", bundle.ladder.dims),
            actual: format!("{:?}", sample.pyramid.ladder().dims),
        });
    }
    if !(cfg.alpha >= 0.0 && cfg.noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha and noise sigma must be non-negative, got {} and {}",
            cfg.alpha, cfg.noise_sigma
        )));
    }
    let x0 = g.input(sample.pyramid.coarsest().to_tensor());
    let (kl, l0, start) = match (&bundle.vae, &sample.condition) {
        (Some(vae), None) => {
            let z = vae.encoder.forward(g, x0);
            let sq = g.sum_squares(z);
            let kl = g.scale(sq, cfg.alpha);
            let zin = if cfg.noise_sigma > 0.0 {
                let shape = g.value(z).shape().to_vec();
                let n: usize = shape.iter().product();
                let noise = (0..n)
                    .map(|_| cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let e = g.input(Tensor::new(shape, noise));
                g.add(z, e)
            } else {
                z
            };
            let decoded = vae.decoder.forward(g, zin, bundle.ladder.coarsest());
            let l0 = perceptual.distance_graph(g, decoded, x0);
            let start = if cfg.feed_decoded { decoded } else { x0 };
            (Some(kl), Some(l0), start)
        }
        (None, Some(c)) => (None, None, g.input(c.to_tensor())),
        (Some(_), Some(_)) => {
            return Err(Error::ModeMismatch {
                required: Mode::Conditional.to_string(),
                actual: Mode::Unconditional.to_string(),
            })
        }
        (None, None) => {
            return Err(Error::ModeMismatch {
                required: Mode::Unconditional.to_string(),
                actual: Mode::Conditional.to_string(),
            })
        }
    };
    let blocks = bundle.generator.forward(g, start, &bundle.ladder, 0);
    let mut level_terms = Vec::with_capacity(blocks.len());
    for (v, target) in blocks.iter().zip(&sample.pyramid.levels()[1..]) {
        let t = g.input(target.to_tensor());
        level_terms.push(perceptual.distance_graph(g, v.output, t));
    }
    let up = g.sum(&level_terms);
    let zero = g.input(Tensor::scalar(0.0));
    let kl = kl.unwrap_or(zero);
    let l0 = l0.unwrap_or(zero);
    let head = g.add(kl, l0);
    let total = g.add(head, up);

    let report = LossReport {
        upscaling: g.value(up).item(),
        reconstruction_l0: g.value(l0).item(),
        kl: g.value(kl).item(),
        total: g.value(total).item(),
        per_level: level_terms.iter().map(|&v| g.value(v).item()).collect(),
    };
    Ok(LossVars {
        total,
        report,
        outputs: blocks.iter().map(|b| b.output).collect(),
    })
}

/// Evaluates the total loss of one augmented sample.
pub fn total_loss(
    bundle: &ModelBundle,
    perceptual: &Perceptual,
    sample: &AugmentedSample,
    cfg: &ObjectiveConfig,
    rng: &mut impl Rng,
) -> Result<LossReport> {
    let prepared = TrainingSample::new(bundle, sample)?;
    let mut g = Graph::new(&bundle.params);
    Ok(build_total_loss(&mut g, bundle, perceptual, &prepared, cfg, rng)?.report)
}
