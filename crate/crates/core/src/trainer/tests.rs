use super::*;
use crate::imaging::{is_binary, save_image};
use crate::model::ModelConfig;
use crate::objective::LossMode;
use crate::{Dims, PyramidSpec};
use std::collections::HashSet;

fn tiny(iterations: usize) -> TrainConfig {
    TrainConfig {
        image_path: "unused.png".into(),
        iterations,
        loss: LossMode::Pixel,
        pyramid: PyramidSpec {
            scale_factor: 0.75,
            min_dim: 12,
            max_dim: 24,
        },
        model: ModelConfig {
            channels: 4,
            body_layers: 1,
            encoder_channels: [4, 6, 8],
            init_std: 0.05,
        },
        seed: 3,
        ..Default::default()
    }
}

fn conditional(source: ConditionSource, iterations: usize) -> TrainConfig {
    TrainConfig {
        mode: Mode::Conditional,
        condition_source: source,
        ..tiny(iterations)
    }
}

fn scene() -> Image {
    Image::from_fn(24, 24, |y, x| {
        let (fy, fx) = (y as f64 / 23.0, x as f64 / 23.0);
        let disc = ((fx - 0.6).powi(2) + (fy - 0.4).powi(2)).sqrt() < 0.25;
        if disc {
            [0.8, 0.1, -0.5]
        } else {
            [-0.6 + fy, 0.2 * (6.0 * fx).sin(), 0.3]
        }
    })
}

#[test]
fn cosine_schedule_contract() {
    let c = TrainConfig {
        iterations: 1000,
        ..Default::default()
    };
    for i in [0, 1, 250, 500, 999] {
        let want = 0.0005 * 0.5 * (1.0 + (std::f64::consts::PI * i as f64 / 1000.0).cos());
        assert!((c.lr_at(i) - want).abs() < 1e-9);
    }
    assert_eq!(c.lr_at(0), 0.0005);
    let flat = TrainConfig {
        schedule: Schedule::Constant,
        ..c
    };
    assert_eq!(flat.lr_at(700), 0.0005);
}

#[test]
fn defaults_follow_published_settings() {
    let c = TrainConfig::default();
    assert_eq!((c.lr, c.betas, c.iterations), (0.0005, (0.5, 0.999), 20_000));
    assert_eq!(c.noise_sigma, 0.01);
    assert_eq!(c.model.encoder_channels, [32, 64, 128]);
}

#[test]
fn validation_names_each_bad_field() {
    let c = TrainConfig {
        image_path: PathBuf::new(),
        lr: -1.0,
        iterations: 0,
        condition_source: ConditionSource::EdgeMap,
        ..Default::default()
    };
    let Err(Error::InvalidConfig(errs)) = c.validate() else {
        panic!("expected a config error");
    };
    let fields: HashSet<&str> = errs.iter().map(|e| e.field.as_str()).collect();
    for f in ["image_path", "lr", "iterations", "condition_source"] {
        assert!(fields.contains(f), "{f} not reported in {errs:?}");
    }
    assert!(matches!(
        TrainConfig::from_json(r#"{"image_path": "a.png", "learning_rate": 1}"#),
        Err(Error::InvalidConfig(_))
    ));
    let parsed = TrainConfig::from_json(r#"{"image_path": "a.png", "iterations": 5}"#).unwrap();
    assert_eq!(parsed.iterations, 5);
    assert_eq!(parsed.lr, 0.0005);
}

#[test]
fn single_iteration_updates_parameters() {
    let mut t = Trainer::with_image(tiny(1), &scene()).unwrap();
    let before = t.bundle().params.clone();
    t.run(None, |_, _| {}).unwrap();
    assert_eq!(t.log().len(), 1);
    assert_ne!(t.bundle().params, before);
}

#[test]
fn same_seed_same_log() {
    let run = |seed| {
        let mut t = Trainer::with_image(TrainConfig { seed, ..tiny(4) }, &scene()).unwrap();
        t.run(None, |_, _| {}).unwrap();
        t.log().to_vec()
    };
    let a = run(3);
    assert_eq!(a, run(3));
    assert_ne!(a, run(4));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut full = Trainer::with_image(tiny(6), &scene()).unwrap();
    full.run(None, |_, _| {}).unwrap();

    let mut first = Trainer::with_image(tiny(6), &scene()).unwrap();
    for _ in 0..3 {
        first.step().unwrap();
    }
    first.save(dir.path().join("k3")).unwrap();
    let mut resumed = Trainer::resume_with_image(dir.path().join("k3"), &scene()).unwrap();
    assert_eq!(resumed.iteration(), 3);
    resumed.run(None, |_, _| {}).unwrap();
    for (a, b) in resumed.log().iter().zip(full.log()) {
        assert!((a.total - b.total).abs() < 1e-5);
    }
    assert_eq!(resumed.log(), full.log());
    assert_eq!(resumed.bundle().params, full.bundle().params);
}

#[test]
fn paint_condition_uses_at_most_k_colors() {
    let cfg = TrainConfig {
        palette_size: 4,
        ..conditional(ConditionSource::PaintQuantized, 1)
    };
    let t = Trainer::with_image(cfg, &scene()).unwrap();
    for i in 0..5 {
        let mut rng = t.iteration_rng(i);
        let s = augment_sample(&t.data().image, t.data().condition.as_ref(), &t.config().augmentation, &mut rng).unwrap();
        let c = TrainingSample::new(t.bundle(), &s).unwrap().condition.unwrap();
        let colors: HashSet<[u64; 3]> = (0..c.height())
            .flat_map(|y| (0..c.width()).map(move |x| (y, x)))
            .map(|(y, x)| c.pixel(y, x).map(f64::to_bits))
            .collect();
        assert!(colors.len() <= 4);
        assert_eq!(c.dims(), t.bundle().ladder.coarsest());
    }
}

#[test]
fn edge_condition_is_binary_and_bundle_has_no_front_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::with_image(conditional(ConditionSource::EdgeMap, 2), &scene()).unwrap();
    for i in 0..3 {
        let mut rng = t.iteration_rng(i);
        let s = augment_sample(&t.data().image, t.data().condition.as_ref(), &t.config().augmentation, &mut rng).unwrap();
        assert!(is_binary(&TrainingSample::new(t.bundle(), &s).unwrap().condition.unwrap()));
    }
    t.run(Some(dir.path()), |_, _| {}).unwrap();
    let m = crate::model::read_manifest(dir.path().join("final")).unwrap();
    assert_eq!(m.mode, Mode::Conditional);
    assert!(m.params.iter().all(|p| p.name.starts_with("gen.")));
}

#[test]
fn training_leaves_source_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("src.png");
    save_image(&scene(), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let cfg = TrainConfig {
        image_path: path.clone(),
        ..tiny(2)
    };
    let mut t = Trainer::new(cfg).unwrap();
    let cached = t.data().image.clone();
    t.run(Some(&dir.path().join("run")), |_, _| {}).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(t.data().image, cached);
    // resume re-reads the image path stored in the checkpoint
    let r = Trainer::resume(dir.path().join("run/final")).unwrap();
    assert!(r.is_done());
}

#[test]
fn non_finite_loss_aborts_with_snapshot() {
    let mut t = Trainer::with_image(tiny(3), &scene()).unwrap();
    let id = t.bundle.params.find("gen.1.tail.b").unwrap();
    t.bundle.params.get_mut(id).data_mut()[0] = f64::NAN;
    let err = t.step().unwrap_err();
    let Error::NonFiniteLoss { iteration, snapshot } = err else {
        panic!("expected non-finite loss");
    };
    assert_eq!(iteration, 0);
    assert!(snapshot.contains("warp"));
}

#[test]
fn perceptual_mode_without_weights_is_descriptive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        loss: LossMode::Perceptual,
        weights_dir: Some(dir.path().to_path_buf()),
        ..tiny(1)
    };
    assert!(matches!(Trainer::with_image(cfg, &scene()), Err(Error::MissingWeights(_))));
}

#[test]
fn oversized_images_are_shrunk_first() {
    let big = Image::from_fn(48, 36, |y, x| [y as f64 / 48.0, x as f64 / 36.0, 0.0]);
    let t = Trainer::with_image(tiny(1), &big).unwrap();
    assert_eq!(t.data().image.dims(), Dims::new(24, 18));
    assert_eq!(t.bundle().ladder.finest(), Dims::new(24, 18));
}
