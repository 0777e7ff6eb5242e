use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::imaging::{CannyParams, PyramidSpec};
use crate::model::{ConditionSource, Mode, ModelConfig, DEFAULT_NOISE_SIGMA};
use crate::objective::{LossMode, ObjectiveConfig, DEFAULT_ALPHA};
use crate::warp::AugmentationSpec;
use crate::{Error, FieldError, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// `lr · ½(1 + cos(π·i/iterations))`.
    #[default]
    Cosine,
    Constant,
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub image_path: PathBuf,
    pub mode: Mode,
    pub condition_source: ConditionSource,
    pub iterations: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub schedule: Schedule,
    pub alpha: f64,
    pub noise_sigma: f64,
    /// Feed the decoded coarse image to the generator rather than the real one.
    pub feed_decoded: bool,
    pub loss: LossMode,
    /// Directory holding pretrained weights; falls back to the environment.
    pub weights_dir: Option<PathBuf>,
    pub pyramid: PyramidSpec,
    pub augmentation: AugmentationSpec,
    pub model: ModelConfig,
    pub seed: u64,
    /// Save a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
    /// Global gradient-norm limit (0 disables clipping).
    pub grad_clip: f64,
    /// Colors in the paint palette.
    pub palette_size: usize,
    pub canny: CannyParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            image_path: PathBuf::new(),
            mode: Mode::Unconditional,
            condition_source: ConditionSource::None,
            iterations: 20_000,
            lr: 0.0005,
            betas: (0.5, 0.999),
            schedule: Schedule::Cosine,
            alpha: DEFAULT_ALPHA,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            feed_decoded: true,
            loss: LossMode::Perceptual,
            weights_dir: None,
            pyramid: PyramidSpec::default(),
            augmentation: AugmentationSpec::default(),
            model: ModelConfig::default(),
            seed: 0,
            checkpoint_every: 0,
            grad_clip: 10.0,
            palette_size: 8,
            canny: CannyParams::default(),
        }
    }
}

fn arg_field(field: &str, r: Result<()>) -> Option<FieldError> {
    match r {
        Err(Error::InvalidArgument(m)) => Some(FieldError::new(field, m)),
        Err(e) => Some(FieldError::new(field, e.to_string())),
        Ok(()) => None,
    }
}

impl TrainConfig {
    /// Parses JSON; unknown or mistyped fields are reported as config errors.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::InvalidConfig(vec![FieldError::new("<document>", e.to_string())])
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is always serializable")
    }

    /// Every violated rule, named by field.
    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut e = Vec::new();
        let mut push = |f: &str, m: String| e.push(FieldError::new(f, m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            push(
                "schema_version",
                format!("unsupported version {} (expected {CONFIG_SCHEMA_VERSION})", self.schema_version),
            );
        }
        if self.image_path.as_os_str().is_empty() {
            push("image_path", "required".into());
        }
        if self.condition_source.mode() != self.mode {
            push(
                "condition_source",
                format!("{:?} is inconsistent with mode {}", self.condition_source, self.mode),
            );
        }
        if self.iterations == 0 {
            push("iterations", "must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            push("lr", format!("must be positive, got {}", self.lr));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            push("betas", format!("both must lie in [0, 1), got ({b1}, {b2})"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            push("alpha", format!("must be non-negative, got {}", self.alpha));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            push("noise_sigma", format!("must be non-negative, got {}", self.noise_sigma));
        }
        if self.grad_clip.is_nan() || self.grad_clip < 0.0 {
            push("grad_clip", format!("must be non-negative, got {}", self.grad_clip));
        }
        if self.condition_source == ConditionSource::PaintQuantized && self.palette_size < 2 {
            push("palette_size", format!("must be at least 2, got {}", self.palette_size));
        }
        if !(self.canny.low >= 0.0 && self.canny.low < self.canny.high) {
            push("canny", "thresholds must satisfy 0 <= low < high".into());
        }
        e.extend(arg_field("pyramid", self.pyramid.validate()));
        e.extend(arg_field("augmentation", self.augmentation.validate()));
        e.extend(self.model.field_errors("model."));
        e
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.field_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }

    /// Learning rate used at (0-based) iteration `i`.
    pub fn lr_at(&self, i: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => {
                let t = i as f64 / self.iterations as f64;
                self.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            alpha: self.alpha,
            noise_sigma: self.noise_sigma,
            feed_decoded: self.feed_decoded,
        }
    }
}
