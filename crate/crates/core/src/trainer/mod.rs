//! End-to-end training: configuration, the optimization loop, and resumable
//! checkpoints.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::{extract_edges, load_image, resample, Image, Palette};
use crate::model::{load_checkpoint, save_checkpoint, ConditionSource, Mode, ModelBundle};
use crate::nn::{from_le_bytes, to_le_bytes, Adam, Graph};
use crate::objective::{build_total_loss, LossReport, Perceptual, TrainingSample};
use crate::warp::augment_sample;
use crate::{Error, Result};

pub use config::{Schedule, TrainConfig, CONFIG_SCHEMA_VERSION};

const OPTIMIZER_FILE: &str = "optimizer.bin";
const STATE_FILE: &str = "trainer_state.json";

/// Progress stored next to a checkpoint so training can resume exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainerState {
    iteration: usize,
    optimizer_step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    log: Vec<LossReport>,
}

/// Training image plus the full-resolution conditioning map, if any.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub image: Image,
    pub condition: Option<Image>,
    pub palette: Option<Palette>,
}

impl TrainingData {
    /// Shrinks `raw` to the pyramid's finest size and derives the conditioning map.
    pub fn prepare(config: &TrainConfig, raw: &Image) -> Result<Self> {
        let d = config.pyramid.finest_dims(raw.height(), raw.width());
        let image = if d == raw.dims() {
            raw.clone()
        } else {
            resample(raw, d.h, d.w)?
        };
        let (condition, palette) = match config.condition_source {
            ConditionSource::None => (None, None),
            ConditionSource::PaintQuantized => {
                let p = Palette::fit(&image, config.palette_size)?;
                (Some(p.apply(&image)), Some(p))
            }
            ConditionSource::EdgeMap => (Some(extract_edges(&image, config.canny)?), None),
        };
        Ok(Self {
            image,
            condition,
            palette,
        })
    }
}

/// Owns the bundle and optimizer state during training.
pub struct Trainer {
    config: TrainConfig,
    bundle: ModelBundle,
    optimizer: Adam,
    perceptual: Perceptual,
    data: TrainingData,
    iteration: usize,
    log: Vec<LossReport>,
}

impl Trainer {
    /// Validates `config`, loads its image, and initializes a fresh bundle.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let raw = load_image(&config.image_path)?;
        Self::with_image(config, &raw)
    }

    /// Like [`Trainer::new`] with the image supplied directly.
    pub fn with_image(config: TrainConfig, raw: &Image) -> Result<Self> {
        config.validate()?;
        let perceptual = Perceptual::load(config.loss, config.weights_dir.as_deref())?;
        let data = TrainingData::prepare(&config, raw)?;
        let ladder = config.pyramid.ladder(data.image.height(), data.image.width())?;
        let mut bundle = ModelBundle::new(config.model, ladder, config.pyramid, config.condition_source, config.seed)?;
        bundle.palette = data.palette.clone();
        bundle.train_config = Some(config.to_json());
        let optimizer = Adam::new(&bundle.params, config.betas.0, config.betas.1);
        Ok(Self {
            config,
            bundle,
            optimizer,
            perceptual,
            data,
            iteration: 0,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn into_bundle(self) -> ModelBundle {
        self.bundle
    }

    pub fn data(&self) -> &TrainingData {
        &self.data
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn log(&self) -> &[LossReport] {
        &self.log
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    /// Independent random stream for iteration `i`.
    pub fn iteration_rng(&self, i: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ self.config.augmentation.seed.rotate_left(32));
        rng.set_stream(i as u64);
        rng
    }

    /// One augmentation, forward/backward pass, and optimizer update.
    pub fn step(&mut self) -> Result<LossReport> {
        let i = self.iteration;
        let mut rng = self.iteration_rng(i);
        let sample = augment_sample(
            &self.data.image,
            self.data.condition.as_ref(),
            &self.config.augmentation,
            &mut rng,
        )?;
        let prepared = TrainingSample::new(&self.bundle, &sample)?;
        let (report, mut grads) = {
            let mut g = Graph::new(&self.bundle.params);
            let vars = build_total_loss(
                &mut g,
                &self.bundle,
                &self.perceptual,
                &prepared,
                &self.config.objective(),
                &mut rng,
            )?;
            if !vars.report.total.is_finite() {
                let snapshot = serde_json::json!({
                    "report": format!("{:?}", vars.report),
                    "warp": sample.record,
                    "lr": self.config.lr_at(i),
                });
                return Err(Error::NonFiniteLoss {
                    iteration: i,
                    snapshot: snapshot.to_string(),
                });
            }
            (vars.report, g.backward(vars.total))
        };
        if self.config.grad_clip > 0.0 {
            let norm = grads.global_norm();
            if norm > self.config.grad_clip {
                grads.scale(self.config.grad_clip / norm);
            }
        }
        self.optimizer.step(&mut self.bundle.params, &grads, self.config.lr_at(i));
        self.iteration += 1;
        self.log.push(report.clone());
        Ok(report)
    }

    /// Runs to the configured iteration count. With `checkpoint_root`, saves
    /// `iter_NNNNNN` directories every `checkpoint_every` iterations and a
    /// `final` directory at the end.
    pub fn run(
        &mut self,
        checkpoint_root: Option<&Path>,
        mut on_step: impl FnMut(usize, &LossReport),
    ) -> Result<()> {
        while !self.is_done() {
            let report = self.step()?;
            on_step(self.iteration, &report);
            if let Some(root) = checkpoint_root {
                let every = self.config.checkpoint_every;
                if every > 0 && self.iteration.is_multiple_of(every) && !self.is_done() {
                    self.save(root.join(format!("iter_{:06}", self.iteration)))?;
                }
            }
        }
        if let Some(root) = checkpoint_root {
            self.save(root.join("final"))?;
        }
        Ok(())
    }

    /// Writes the bundle plus optimizer and progress state.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        save_checkpoint(&self.bundle, dir)?;
        let (m, v) = self.optimizer.moments();
        let bytes = to_le_bytes(m.iter().chain(v));
        std::fs::write(dir.join(OPTIMIZER_FILE), bytes)?;
        let state = TrainerState {
            iteration: self.iteration,
            optimizer_step: self.optimizer.steps_taken(),
            beta1: self.optimizer.beta1,
            beta2: self.optimizer.beta2,
            eps: self.optimizer.eps,
            log: self.log.clone(),
        };
        std::fs::write(dir.join(STATE_FILE), serde_json::to_string(&state)?)?;
        Ok(())
    }

    /// Continues training from a directory written by [`Trainer::save`],
    /// re-reading the image named in the stored configuration.
    pub fn resume(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let bundle = load_checkpoint(dir)?;
        let config = stored_config(&bundle, dir)?;
        let raw = load_image(&config.image_path)?;
        Self::resume_with_image(dir, &raw)
    }

    /// [`Trainer::resume`] with the image supplied directly.
    pub fn resume_with_image(dir: impl AsRef<Path>, raw: &Image) -> Result<Self> {
        let dir = dir.as_ref();
        let bundle = load_checkpoint(dir)?;
        let config = stored_config(&bundle, dir)?;
        let ckpt_err = |reason: String| Error::Checkpoint {
            path: dir.to_path_buf(),
            reason,
        };
        let state: TrainerState = serde_json::from_str(&std::fs::read_to_string(dir.join(STATE_FILE))?)
            .map_err(|e| ckpt_err(format!("unreadable trainer state: {e}")))?;
        let shapes: Vec<Vec<usize>> = bundle
            .params
            .iter()
            .map(|(_, _, t)| t.shape().to_vec())
            .collect();
        let both: Vec<Vec<usize>> = shapes.iter().chain(&shapes).cloned().collect();
        let bytes = std::fs::read(dir.join(OPTIMIZER_FILE))?;
        let mut moments = from_le_bytes(&bytes, &both)
            .ok_or_else(|| ckpt_err("optimizer state does not match the parameters".into()))?;
        let second = moments.split_off(shapes.len());
        let optimizer = Adam::from_parts(state.beta1, state.beta2, state.eps, state.optimizer_step, moments, second);
        let perceptual = Perceptual::load(config.loss, config.weights_dir.as_deref())?;
        let data = TrainingData::prepare(&config, raw)?;
        if data.image.dims() != bundle.ladder.finest() {
            return Err(Error::DimMismatch {
                expected: bundle.ladder.finest().to_string(),
                actual: data.image.dims().to_string(),
            });
        }
        Ok(Self {
            config,
            bundle,
            optimizer,
            perceptual,
            data,
            iteration: state.iteration,
            log: state.log,
        })
    }

    /// Writes the log as JSON lines, one report per iteration.
    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        write_log(&self.log, path)
    }
}

fn stored_config(bundle: &ModelBundle, dir: &Path) -> Result<TrainConfig> {
    let value = bundle.train_config.clone().ok_or_else(|| Error::Checkpoint {
        path: dir.to_path_buf(),
        reason: "checkpoint carries no training configuration".into(),
    })?;
    Ok(serde_json::from_value(value)?)
}

pub fn write_log(log: &[LossReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?);
    for r in log {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    f.flush()?;
    Ok(())
}

/// Result of a complete training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub log: Vec<LossReport>,
    /// Directory of the final checkpoint, when one was written.
    pub checkpoint: Option<PathBuf>,
}

/// Trains a bundle in whichever mode the config selects.
pub fn train(config: TrainConfig, checkpoint_root: Option<&Path>) -> Result<TrainOutcome> {
    let mut t = Trainer::new(config)?;
    t.run(checkpoint_root, |_, _| {})?;
    Ok(TrainOutcome {
        checkpoint: checkpoint_root.map(|r| r.join("final")),
        log: t.log.clone(),
        bundle: t.into_bundle(),
    })
}

/// Trains only the generator on a preprocessed conditioning map.
pub fn train_conditional(config: TrainConfig, checkpoint_root: Option<&Path>) -> Result<TrainOutcome> {
    if config.mode != Mode::Conditional {
        return Err(Error::ModeMismatch {
            required: Mode::Conditional.to_string(),
            actual: config.mode.to_string(),
        });
    }
    train(config, checkpoint_root)
}

#[cfg(test)]
mod tests;
