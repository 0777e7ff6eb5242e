use super::*;
use crate::imaging::{extract_edges, CannyParams, Palette, PyramidSpec};
use crate::model::ModelConfig;

const SPEC: PyramidSpec = PyramidSpec {
    scale_factor: 0.75,
    min_dim: 12,
    max_dim: 64,
};

fn config() -> ModelConfig {
    ModelConfig {
        channels: 4,
        body_layers: 1,
        encoder_channels: [4, 6, 8],
        init_std: 0.1,
    }
}

fn scene(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |y, x| {
        let (fy, fx) = (y as f64 / h as f64, x as f64 / w as f64);
        [(5.0 * fx).sin() * 0.7, fy - 0.5, if (fx - 0.5).abs() < 0.2 { 0.6 } else { -0.4 }]
    })
}

fn bundle(source: ConditionSource) -> ModelBundle {
    let ladder = SPEC.ladder(24, 24).unwrap();
    ModelBundle::new(config(), ladder, SPEC, source, 11).unwrap()
}

fn coarse(b: &ModelBundle, seed: u64) -> Image {
    augmented_coarse(b, &scene(24, 24), &AugmentationSpec::default(), seed).unwrap()
}

#[test]
fn interpolation_endpoints_are_exact() {
    let b = bundle(ConditionSource::None);
    let (x1, x2) = (coarse(&b, 1), coarse(&b, 2));
    assert_eq!(interpolate(&b, &x1, &x2, 1.0).unwrap(), reconstruct(&b, &x1).unwrap());
    assert_eq!(interpolate(&b, &x1, &x2, 0.0).unwrap(), reconstruct(&b, &x2).unwrap());
    let mid = interpolate(&b, &x1, &x2, 0.5).unwrap();
    assert_eq!(mid.dims(), b.ladder.finest());
    assert!(mid.is_valid());
    assert!(interpolate(&b, &x1, &x2, 1.5).is_err());
}

#[test]
fn half_blend_is_code_mean() {
    let b = bundle(ConditionSource::None);
    let (z1, z2) = (b.encode(&coarse(&b, 1)).unwrap(), b.encode(&coarse(&b, 2)).unwrap());
    let m = LatentCode::blend(&z1, &z2, 0.5).unwrap();
    for ((m, a), c) in m.tensor.data().iter().zip(z1.tensor.data()).zip(z2.tensor.data()) {
        assert!((m - (a + c) / 2.0).abs() < 1e-15);
    }
}

#[test]
fn conditional_bundles_refuse_code_tasks() {
    let b = bundle(ConditionSource::EdgeMap);
    let x = Image::filled(12, 12, [0.0; 3]);
    let is_mode = |e: Error| matches!(e, Error::ModeMismatch { .. });
    assert!(is_mode(interpolate(&b, &x, &x, 0.5).unwrap_err()));
    assert!(is_mode(animate(&b, &scene(24, 24), &AnimationSpec::default()).unwrap_err()));
    let aug = AugmentationSpec::default();
    assert!(is_mode(synthesize_novel(&b, &scene(24, 24), 2, (1, 2), 0.5, &aug).unwrap_err()));
    let u = bundle(ConditionSource::None);
    assert!(is_mode(paint2image(&u, &x).unwrap_err()));
    assert!(is_mode(edges2image(&u, &x).unwrap_err()));
    assert!(is_mode(paint2image(&b, &x).unwrap_err()));
}

#[test]
fn animation_frame_grid() {
    let b = bundle(ConditionSource::None);
    let img = scene(24, 24);
    let spec = AnimationSpec {
        frame_count: 2,
        seeds: (5, 6),
        ..Default::default()
    };
    let frames = animate(&b, &img, &spec).unwrap();
    assert_eq!(frames.len(), 3);
    assert_eq!(frames[0], reconstruct(&b, &coarse(&b, 5)).unwrap());
    assert_eq!(frames[2], reconstruct(&b, &coarse(&b, 6)).unwrap());

    let pp = AnimationSpec {
        loop_mode: LoopMode::PingPong,
        ..spec.clone()
    };
    let looped = animate(&b, &img, &pp).unwrap();
    assert_eq!(looped.len(), 4);
    assert_eq!(looped[..3], frames[..]);
    assert_eq!(looped[3], looped[1]);

    for t in 2..6 {
        for mode in [LoopMode::Once, LoopMode::PingPong] {
            let s = AnimationSpec {
                frame_count: t,
                loop_mode: mode,
                ..spec.clone()
            };
            assert_eq!(animate(&b, &img, &s).unwrap().len(), s.total_frames());
        }
    }
    let bad = AnimationSpec {
        frame_count: 1,
        ..spec
    };
    assert!(animate(&b, &img, &bad).is_err());
}

#[test]
fn frames_are_written_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let frames: Vec<Image> = (0..3).map(|i| Image::filled(4, 5, [i as f64 / 3.0; 3])).collect();
    let paths = write_frames(&frames, dir.path().join("f")).unwrap();
    let names: Vec<_> = paths.iter().map(|p| p.file_name().unwrap().to_str().unwrap()).collect();
    assert_eq!(names, ["frame_0000.png", "frame_0001.png", "frame_0002.png"]);
    assert!(paths.iter().all(|p| p.exists()));
    // without an encoder this only warns
    let _ = encode_video(dir.path().join("f"), dir.path().join("out.mp4"), 10);
}

#[test]
fn single_copy_synthesis_is_an_endpoint() {
    let b = bundle(ConditionSource::None);
    let aug = AugmentationSpec::default();
    let out = synthesize_novel(&b, &scene(24, 24), 1, (8, 9), 1.0, &aug).unwrap();
    assert_eq!(out, reconstruct(&b, &coarse(&b, 8)).unwrap());
}

#[test]
fn wide_synthesis_shape_and_content() {
    let b = bundle(ConditionSource::None);
    let out = synthesize_novel(&b, &scene(24, 24), 3, (8, 9), 0.5, &AugmentationSpec::default()).unwrap();
    assert_eq!(out.height(), 24);
    assert!((out.width() as f64 - 72.0).abs() <= 0.02 * 72.0);
    assert!(out.is_valid());
    let col_var = |x: usize| {
        let v: Vec<f64> = (0..out.height()).map(|y| out.get(0, y, x)).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    assert!((0..out.width()).map(col_var).fold(0.0, f64::max) > 0.0);
    assert!(synthesize_novel(&b, &scene(24, 24), 0, (8, 9), 0.5, &AugmentationSpec::default()).is_err());
}

#[test]
fn conditional_outputs_have_training_dims() {
    let mut paint = bundle(ConditionSource::PaintQuantized);
    paint.palette = Some(Palette::fit(&scene(24, 24), 4).unwrap());
    let out = paint2image(&paint, &scene(24, 24)).unwrap();
    assert_eq!(out.dims(), Dims::new(24, 24));
    assert!(out.is_valid());

    let b = bundle(ConditionSource::EdgeMap);
    let edges = extract_edges(&scene(24, 24), CannyParams::default()).unwrap();
    assert_eq!(edges2image(&b, &edges).unwrap().dims(), Dims::new(24, 24));
    let empty = Image::filled(24, 24, [-1.0; 3]);
    assert!(edges2image(&b, &empty).unwrap().is_valid());
    let soft = edges.map(|v| 0.8 * v);
    assert_eq!(edges2image(&b, &soft).unwrap(), edges2image(&b, &edges).unwrap());
}

fn square_mask(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |y, x| {
        [if (8..14).contains(&y) && (9..15).contains(&x) { 1.0 } else { -1.0 }; 3]
    })
}

#[test]
fn harmonization_keeps_far_background() {
    let b = bundle(ConditionSource::None);
    let composite = scene(24, 24);
    let mask = square_mask(24, 24);
    let job = HarmonizationJob {
        composite: composite.clone(),
        mask: mask.clone(),
        level: None,
    };
    let out = harmonize(&b, &job).unwrap();
    assert!(out.is_valid());
    let w = feather_weights(&mask);
    let mut changed = false;
    for y in 0..24 {
        for x in 0..24 {
            let near = (8..14).any(|my: isize| {
                (9..15).any(|mx: isize| {
                    let (dy, dx) = (my - y as isize, mx - x as isize);
                    ((dy * dy + dx * dx) as f64).sqrt() < FEATHER_RADIUS
                })
            });
            if !near {
                assert_eq!(out.pixel(y, x), composite.pixel(y, x));
                assert_eq!(w[y * 24 + x], 0.0);
            } else if out.pixel(y, x) != composite.pixel(y, x) {
                changed = true;
            }
        }
    }
    assert!(changed);
}

#[test]
fn harmonization_rejects_bad_jobs() {
    let b = bundle(ConditionSource::None);
    let n = b.generator.num_blocks();
    assert_eq!(default_harmonization_level(4), 2);
    assert_eq!(default_harmonization_level(3), 2);
    assert_eq!(default_harmonization_level(1), 0);
    let job = HarmonizationJob {
        composite: scene(24, 24),
        mask: square_mask(24, 24),
        level: Some(n),
    };
    assert!(matches!(harmonize(&b, &job), Err(Error::InvalidArgument(_))));
    let job = HarmonizationJob {
        mask: square_mask(20, 24),
        level: None,
        ..job
    };
    assert!(matches!(harmonize(&b, &job), Err(Error::DimMismatch { .. })));
}

#[test]
fn super_resolution_without_residual_is_bicubic() {
    let mut b = bundle(ConditionSource::None);
    b.zero_residuals();
    let img = scene(15, 20);
    let r = b.ladder.ratio;
    let out = super_resolve(&b, &img, 2, DEFAULT_SR_MAX_DIM).unwrap();
    let d1 = super_resolved_dims(img.dims(), r, 1);
    let d2 = super_resolved_dims(img.dims(), r, 2);
    let chain = resample(&resample(&img, d1.h, d1.w).unwrap(), d2.h, d2.w).unwrap();
    assert!(out.max_abs_diff(&chain) < 1e-12);
    let s = (1.0 / r).powi(2);
    assert_eq!(d2, Dims::new((15.0 * s).ceil() as usize, (20.0 * s).ceil() as usize));
}

#[test]
fn super_resolution_limits() {
    let b = bundle(ConditionSource::None);
    let img = scene(15, 20);
    assert!(super_resolve(&b, &img, 0, DEFAULT_SR_MAX_DIM).is_err());
    assert!(super_resolve(&b, &img, 3, 30).is_err());
    let out = super_resolve(&b, &img, 1, DEFAULT_SR_MAX_DIM).unwrap();
    assert_eq!(out.dims(), super_resolved_dims(img.dims(), b.ladder.ratio, 1));
    assert!(out.is_valid());
}
