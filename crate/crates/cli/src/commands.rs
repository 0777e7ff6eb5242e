use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use augurone_core::imaging::resample;
use augurone_core::metrics::{sifid, Extractor, SifidReport};
use augurone_core::model::load_checkpoint;
use augurone_core::objective::LossMode;
use augurone_core::tasks::{
    animate, edges2image, encode_video, harmonize, paint2image, super_resolve, synthesize_novel, write_frames,
    AnimationSpec, HarmonizationJob, LoopMode, DEFAULT_SR_MAX_DIM,
};
use augurone_core::trainer::{TrainConfig, Trainer};
use augurone_core::{load_image, save_image, ConditionSource, Image, ModelBundle};
use clap::{Args, ValueEnum};
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::manifest::Timer;
use crate::{Command, Global};

/// Parses a kebab-case enum the same way config files spell it.
fn kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training image (overrides the config's `image_path`).
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    /// `pixel` or `perceptual`.
    #[arg(long, value_parser = kebab::<LossMode>)]
    loss: Option<LossMode>,
    /// `none`, `paint-quantized` or `edge-map`; also sets the mode.
    #[arg(long, value_parser = kebab::<ConditionSource>)]
    condition: Option<ConditionSource>,
    #[arg(long)]
    weights_dir: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Debug, Args)]
pub struct AnimateArgs {
    /// Training image (defaults to the one recorded in the checkpoint).
    #[arg(long)]
    image: Option<PathBuf>,
    /// Number of intervals; a one-way animation has one more frame.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    ping_pong: bool,
    /// Also encode `animation.mp4` with ffmpeg, if available.
    #[arg(long)]
    video: bool,
    #[arg(long, default_value_t = 12)]
    fps: u32,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    image: Option<PathBuf>,
    /// Augmented copies placed side by side.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    seeds: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
pub struct ConditionArgs {
    /// Painting or edge map.
    #[arg(long)]
    input: PathBuf,
    /// Image to score the output against (defaults to the training image).
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ExtractorChoice::Auto)]
    extractor: ExtractorChoice,
    #[arg(long)]
    weights_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HarmonizeArgs {
    #[arg(long)]
    composite: PathBuf,
    /// Foreground mask, white on black, same size as the composite.
    #[arg(long)]
    mask: PathBuf,
    /// Injection level (default: half way up the pyramid).
    #[arg(long)]
    level: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SuperresArgs {
    /// Image to upscale (defaults to the training image).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_SR_MAX_DIM)]
    max_dim: usize,
}

#[derive(Debug, Args)]
pub struct SifidArgs {
    image_a: PathBuf,
    image_b: PathBuf,
    #[arg(long, value_enum, default_value_t = ExtractorChoice::Auto)]
    extractor: ExtractorChoice,
    #[arg(long)]
    weights_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtractorChoice {
    /// Pretrained Inception features when weights are available, else raw patches.
    Auto,
    RawPatch,
    Inception,
}

fn extractor(choice: ExtractorChoice, dir: Option<&Path>) -> Result<Extractor> {
    Ok(match choice {
        ExtractorChoice::RawPatch => Extractor::RawPatch,
        ExtractorChoice::Inception => Extractor::locate(dir)?,
        ExtractorChoice::Auto => Extractor::locate(dir).unwrap_or_else(|e| {
            log::warn!("{e}; using the raw-patch extractor");
            Extractor::RawPatch
        }),
    })
}

pub fn run(global: &Global, command: Command) -> Result<serde_json::Value> {
    let timer = Timer::start();
    let name = match &command {
        Command::Train(_) => "train",
        Command::Animate(_) => "animate",
        Command::Sample(_) => "sample",
        Command::Paint2image(_) => "paint2image",
        Command::Edges2image(_) => "edges2image",
        Command::Harmonize(_) => "harmonize",
        Command::Superres(_) => "superres",
        Command::Sifid(_) => "sifid",
    };
    if global.config.is_some() && !matches!(command, Command::Train(_) | Command::Animate(_)) {
        log::warn!("--config is only read by train and animate");
    }
    let out = match (&command, &global.out) {
        (Command::Sifid(_), None) => None,
        (_, Some(o)) => Some(o.clone()),
        (_, None) => Some(PathBuf::from("out")),
    };
    if let Some(o) = &out {
        std::fs::create_dir_all(o).with_context(|| format!("creating {}", o.display()))?;
    }
    let run = match command {
        Command::Train(a) => train(global, out.as_deref().expect("train has a run dir"), a)?,
        Command::Sifid(a) => cmd_sifid(out.as_deref(), a)?,
        other => {
            let out = out.clone().expect("task commands have a run dir");
            let bundle = load_bundle(global)?;
            match other {
                Command::Animate(a) => cmd_animate(global, &out, &bundle, a)?,
                Command::Sample(a) => cmd_sample(global, &out, &bundle, a)?,
                Command::Paint2image(a) => conditional(&out, &bundle, a, ConditionSource::PaintQuantized)?,
                Command::Edges2image(a) => conditional(&out, &bundle, a, ConditionSource::EdgeMap)?,
                Command::Harmonize(a) => cmd_harmonize(&out, &bundle, a)?,
                Command::Superres(a) => cmd_superres(&out, &bundle, a)?,
                Command::Train(_) | Command::Sifid(_) => unreachable!(),
            }
        }
    };
    let mut config = run.config;
    config["global"] = json!({
        "config": global.config,
        "checkpoint": global.checkpoint,
        "device": "cpu",
    });
    let manifest = timer.finish(name, run.seed.or(global.seed), config, run.artifacts, run.summary);
    if let Some(o) = &out {
        manifest.write(o)?;
    }
    Ok(serde_json::to_value(&manifest)?)
}

struct Outcome {
    seed: Option<u64>,
    config: serde_json::Value,
    artifacts: Vec<PathBuf>,
    summary: serde_json::Value,
}

fn load_bundle(global: &Global) -> Result<ModelBundle> {
    let dir = global
        .checkpoint
        .as_ref()
        .context("this command needs --checkpoint <DIR>")?;
    Ok(load_checkpoint(dir)?)
}

/// The image the bundle was trained on, at the bundle's finest size.
fn training_image(bundle: &ModelBundle, path: Option<&Path>) -> Result<(Image, PathBuf)> {
    let path = match path {
        Some(p) => p.to_path_buf(),
        None => bundle
            .train_config
            .as_ref()
            .and_then(|c| c.get("image_path"))
            .and_then(|p| p.as_str())
            .map(PathBuf::from)
            .context("checkpoint records no training image; pass --image")?,
    };
    let img = load_image(&path)?;
    let d = bundle.ladder.finest();
    let img = if img.dims() == d { img } else { resample(&img, d.h, d.w)? };
    Ok((img, path))
}

fn seed_pair(seeds: Option<Vec<u64>>, global: &Global, fallback: (u64, u64)) -> (u64, u64) {
    match (seeds.as_deref(), global.seed) {
        (Some([a, b]), _) => (*a, *b),
        (_, Some(s)) => (s, s.wrapping_add(1)),
        _ => fallback,
    }
}

fn save(img: &Image, path: PathBuf, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    save_image(img, &path)?;
    artifacts.push(path);
    Ok(())
}

fn train(global: &Global, out: &Path, a: TrainArgs) -> Result<Outcome> {
    let ckpt_root = out.join("checkpoints");
    let mut trainer = if let Some(dir) = &global.checkpoint {
        if global.config.is_some() {
            log::warn!("resuming: the checkpoint's stored config replaces --config");
        }
        Trainer::resume(dir)?
    } else {
        let mut c = match &global.config {
            Some(p) => TrainConfig::from_file(p)?,
            None => TrainConfig::default(),
        };
        if let Some(v) = a.image {
            c.image_path = v;
        }
        if let Some(v) = a.iterations {
            c.iterations = v;
        }
        if let Some(v) = a.loss {
            c.loss = v;
        }
        if let Some(v) = a.condition {
            c.condition_source = v;
            c.mode = v.mode();
        }
        if let Some(v) = a.weights_dir {
            c.weights_dir = Some(v);
        }
        if let Some(v) = a.checkpoint_every {
            c.checkpoint_every = v;
        }
        if let Some(v) = global.seed {
            c.seed = v;
        }
        if a.dump_config {
            println!("{}", serde_json::to_string_pretty(&c)?);
            std::process::exit(0);
        }
        c.validate()?;
        Trainer::new(c)?
    };
    let config = trainer.config().clone();
    let config_path = out.join("config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config)?)?;
    let every = (config.iterations / 20).max(1);
    trainer.run(Some(&ckpt_root), |i, r| {
        if i % every == 0 {
            log::info!("iteration {i}/{}: total {:.5} upscaling {:.5}", config.iterations, r.total, r.upscaling);
        }
    })?;
    let log_path = out.join("log.jsonl");
    trainer.write_log(&log_path)?;
    let last = trainer.log().last().cloned();
    Ok(Outcome {
        seed: Some(config.seed),
        config: json!({ "train": config }),
        artifacts: vec![config_path, log_path, ckpt_root.join("final")],
        summary: json!({
            "iterations": trainer.iteration(),
            "final_loss": last,
            "checkpoint": ckpt_root.join("final"),
        }),
    })
}

fn cmd_animate(global: &Global, out: &Path, bundle: &ModelBundle, a: AnimateArgs) -> Result<Outcome> {
    let mut spec = match &global.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .with_context(|| format!("{} is not a valid animation spec", p.display()))?,
        None => AnimationSpec::default(),
    };
    if let Some(t) = a.frames {
        spec.frame_count = t;
    }
    if a.ping_pong {
        spec.loop_mode = LoopMode::PingPong;
    }
    spec.seeds = seed_pair(a.seeds, global, spec.seeds);
    let frames_dir = out.join("frames");
    spec.output_dir = Some(frames_dir.clone());
    bundle.require_mode(augurone_core::Mode::Unconditional)?;
    let (image, image_path) = training_image(bundle, a.image.as_deref())?;
    let frames = animate(bundle, &image, &spec)?;
    let mut artifacts = write_frames(&frames, &frames_dir)?;
    let mut video = None;
    if a.video {
        let path = out.join("animation.mp4");
        if encode_video(&frames_dir, &path, a.fps) {
            artifacts.push(path.clone());
            video = Some(path);
        }
    }
    Ok(Outcome {
        seed: None,
        config: json!({ "animation": spec, "image": image_path }),
        summary: json!({ "frames": frames.len(), "frames_dir": frames_dir, "video": video }),
        artifacts,
    })
}

fn cmd_sample(global: &Global, out: &Path, bundle: &ModelBundle, a: SampleArgs) -> Result<Outcome> {
    let seeds = seed_pair(a.seeds, global, (1, 2));
    let aug = bundle
        .train_config
        .as_ref()
        .and_then(|c| serde_json::from_value::<TrainConfig>(c.clone()).ok())
        .map(|c| c.augmentation)
        .unwrap_or_default();
    let (image, image_path) = training_image(bundle, a.image.as_deref())?;
    let img = synthesize_novel(bundle, &image, a.count, seeds, a.alpha, &aug)?;
    let mut artifacts = Vec::new();
    save(&img, out.join("sample.png"), &mut artifacts)?;
    Ok(Outcome {
        seed: Some(seeds.0),
        config: json!({ "count": a.count, "alpha": a.alpha, "seeds": seeds, "image": image_path }),
        summary: json!({ "height": img.height(), "width": img.width() }),
        artifacts,
    })
}

fn conditional(out: &Path, bundle: &ModelBundle, a: ConditionArgs, source: ConditionSource) -> Result<Outcome> {
    let input = load_image(&a.input)?;
    let img = match source {
        ConditionSource::EdgeMap => edges2image(bundle, &input)?,
        _ => paint2image(bundle, &input)?,
    };
    let mut artifacts = Vec::new();
    save(&img, out.join("output.png"), &mut artifacts)?;
    let (reference, ref_path) = training_image(bundle, a.reference.as_deref())?;
    let ex = extractor(a.extractor, a.weights_dir.as_deref())?;
    let score = sifid(&ex, &img, &reference)?;
    Ok(Outcome {
        seed: None,
        config: json!({ "input": a.input, "reference": ref_path }),
        summary: json!({ "sifid": score, "extractor_id": ex.id(), "reference": ref_path }),
        artifacts,
    })
}

fn cmd_harmonize(out: &Path, bundle: &ModelBundle, a: HarmonizeArgs) -> Result<Outcome> {
    let job = HarmonizationJob {
        composite: load_image(&a.composite)?,
        mask: load_image(&a.mask)?,
        level: a.level,
    };
    job.validate()?;
    let img = harmonize(bundle, &job)?;
    let mut artifacts = Vec::new();
    save(&img, out.join("harmonized.png"), &mut artifacts)?;
    Ok(Outcome {
        seed: None,
        config: json!({ "composite": a.composite, "mask": a.mask, "level": a.level }),
        summary: json!({ "height": img.height(), "width": img.width() }),
        artifacts,
    })
}

fn cmd_superres(out: &Path, bundle: &ModelBundle, a: SuperresArgs) -> Result<Outcome> {
    let (input, path) = match &a.input {
        Some(p) => (load_image(p)?, p.clone()),
        None => training_image(bundle, None)?,
    };
    if a.steps == 0 {
        bail!("--steps must be at least 1");
    }
    let img = super_resolve(bundle, &input, a.steps, a.max_dim)?;
    let mut artifacts = Vec::new();
    save(&img, out.join("superres.png"), &mut artifacts)?;
    Ok(Outcome {
        seed: None,
        config: json!({ "input": path, "steps": a.steps, "max_dim": a.max_dim }),
        summary: json!({ "height": img.height(), "width": img.width() }),
        artifacts,
    })
}

fn cmd_sifid(out: Option<&Path>, a: SifidArgs) -> Result<Outcome> {
    let (x, y) = (load_image(&a.image_a)?, load_image(&a.image_b)?);
    let ex = extractor(a.extractor, a.weights_dir.as_deref())?;
    let report = SifidReport {
        image_a: a.image_a.display().to_string(),
        image_b: a.image_b.display().to_string(),
        sifid: sifid(&ex, &x, &y)?,
        extractor_id: ex.id().into(),
    };
    let mut artifacts = Vec::new();
    if let Some(o) = out {
        let p = o.join("sifid.json");
        std::fs::write(&p, serde_json::to_string_pretty(&report)?)?;
        artifacts.push(p);
    }
    Ok(Outcome {
        seed: None,
        config: json!({ "extractor": format!("{:?}", a.extractor) }),
        summary: serde_json::to_value(&report)?,
        artifacts,
    })
}
