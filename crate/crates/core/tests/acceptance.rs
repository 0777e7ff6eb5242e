//! Acceptance run: one PASS/FAIL/SKIP line per criterion. Exits nonzero if any
//! criterion fails.

use std::path::Path;
use std::time::Instant;

use augurone_core::imaging::{load_image, resample, PyramidSpec};
use augurone_core::metrics::{frechet_distance, sifid, Extractor, FeatureStats};
use augurone_core::model::{load_checkpoint, save_checkpoint, ModelConfig};
use augurone_core::nn::Graph;
use augurone_core::objective::{build_total_loss, LossMode, ObjectiveConfig, Perceptual, TrainingSample};
use augurone_core::tasks::{animate, augmented_coarse, edges2image, interpolate, reconstruct, AnimationSpec, LoopMode};
use augurone_core::trainer::{TrainConfig, Trainer};
use augurone_core::warp::{augment_sample, control_grid, fit_tps, AugmentationSpec, Point};
use augurone_core::{ConditionSource, Image, Mode, ModelBundle};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

mod common;
use common::dense_tps_solve;

const SMOKE_ITERATIONS: usize = 2000;
const SMOKE_CHANNELS: usize = 16;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Verdict::{Fail, Pass, Skip};

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn scene_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/scene64.png")
}

fn jitter(points: &[Point], m: f64, rng: &mut ChaCha8Rng) -> Vec<Point> {
    points
        .iter()
        .map(|p| [p[0] + rng.random_range(-m..m), p[1] + rng.random_range(-m..m)])
        .collect()
}

fn max_diff(a: &[Point], b: &[Point]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p[0] - q[0]).abs().max((p[1] - q[1]).abs()))
        .fold(0.0, f64::max)
}

fn tps_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let (mut coef_err, mut interp_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let src = jitter(&control_grid(4), 0.05, &mut rng);
        let tgt = jitter(&src, 0.1, &mut rng);
        for lambda in [0.0, 0.01, 0.1, 1.0] {
            let w = match fit_tps(&src, &tgt, lambda) {
                Ok(w) => w,
                Err(e) => return Fail(format!("fit failed: {e}")),
            };
            let (weights, affine) = dense_tps_solve(&src, &tgt, lambda);
            coef_err = coef_err.max(max_diff(&w.weights, &weights)).max(max_diff(&w.affine, &affine));
            if lambda == 0.0 {
                interp_err = interp_err.max(max_diff(&w.eval_many(&src), &tgt));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        coef_err <= 1e-8 && interp_err <= 1e-8 && secs < 10.0,
        format!("max coefficient error {coef_err:.2e}, interpolation error {interp_err:.2e}, {secs:.2} s"),
    )
}

fn tps_structure() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let grid = control_grid(4);
    let mut affine_energy = 0.0f64;
    let mut monotone = true;
    let mut superposition = 0.0f64;
    for _ in 0..20 {
        let (a, b, c, d, e, f) = (
            rng.random_range(0.5..1.5),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(0.5..1.5),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
        );
        let affine: Vec<Point> = grid.iter().map(|p| [a * p[0] + b * p[1] + e, c * p[0] + d * p[1] + f]).collect();
        let t = jitter(&grid, 0.1, &mut rng);
        let t2 = jitter(&grid, 0.1, &mut rng);
        let mut prev = f64::INFINITY;
        for lambda in [0.0, 0.001, 0.01, 0.1, 0.3, 1.0, 10.0] {
            affine_energy = affine_energy.max(fit_tps(&grid, &affine, lambda).unwrap().bending_energy().abs());
            let be = fit_tps(&grid, &t, lambda).unwrap().bending_energy();
            monotone &= be <= prev * (1.0 + 1e-12);
            prev = be;
        }
        let sum: Vec<Point> = t.iter().zip(&t2).map(|(p, q)| [p[0] + q[0], p[1] + q[1]]).collect();
        for lambda in [0.0, 0.1] {
            let (f1, f2, f12) = (
                fit_tps(&grid, &t, lambda).unwrap(),
                fit_tps(&grid, &t2, lambda).unwrap(),
                fit_tps(&grid, &sum, lambda).unwrap(),
            );
            for _ in 0..20 {
                let p = [rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2)];
                let (u, v, w) = (f1.eval(p), f2.eval(p), f12.eval(p));
                superposition = superposition.max((w[0] - u[0] - v[0]).abs()).max((w[1] - u[1] - v[1]).abs());
            }
        }
    }
    verdict(
        affine_energy <= 1e-8 && monotone && superposition <= 1e-8,
        format!("affine energy {affine_energy:.2e}, energy non-increasing in lambda: {monotone}, superposition error {superposition:.2e}"),
    )
}

fn paired_alignment() -> Verdict {
    let (h, w) = (48, 64);
    let sx = |x: f64| 0.9 * (2.0 * x / (w - 1) as f64 - 1.0);
    let sy = |y: f64| 0.9 * (2.0 * y / (h - 1) as f64 - 1.0);
    // the two images encode the coordinates differently
    let image = Image::from_fn(h, w, |y, x| [sx(x as f64), sy(y as f64), 0.0]);
    let cond = Image::from_fn(h, w, |y, x| [-sy(y as f64), 0.5 * sx(x as f64), 0.3]);
    let px = |v: f64| (v / 0.9 + 1.0) * (w - 1) as f64 / 2.0;
    let py = |v: f64| (v / 0.9 + 1.0) * (h - 1) as f64 / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let spec = AugmentationSpec::default();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let s = augment_sample(&image, Some(&cond), &spec, &mut rng).unwrap();
        let c = s.condition.unwrap();
        let mut total = 0.0;
        for y in 0..h {
            for x in 0..w {
                let (ix, iy) = (px(s.image.get(0, y, x)), py(s.image.get(1, y, x)));
                let (cx, cy) = (px(2.0 * c.get(1, y, x)), py(-c.get(0, y, x)));
                total += ((ix - cx).powi(2) + (iy - cy).powi(2)).sqrt();
            }
        }
        worst = worst.max(total / (h * w) as f64);
    }
    verdict(worst <= 0.5, format!("worst mean coordinate discrepancy {worst:.2e} px over 50 augmentations"))
}

fn gradient_check() -> Verdict {
    let img = Image::from_fn(32, 32, |y, x| {
        let (fy, fx) = (y as f64 / 32.0, x as f64 / 32.0);
        [0.7 * (6.0 * fx).sin(), 0.5 * (4.0 * fy).cos(), fx - fy]
    });
    let spec = PyramidSpec {
        scale_factor: 0.75,
        min_dim: 18,
        max_dim: 32,
    };
    let ladder = spec.ladder(32, 32).unwrap();
    if ladder.num_levels() != 3 {
        return Fail(format!("expected 3 levels, got {:?}", ladder.dims));
    }
    let config = ModelConfig {
        channels: 6,
        body_layers: 1,
        encoder_channels: [6, 8, 10],
        init_std: 0.1,
    };
    let mut bundle = ModelBundle::new(config, ladder, spec, ConditionSource::None, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let s = augment_sample(&img, None, &AugmentationSpec::default(), &mut rng).unwrap();
    let sample = TrainingSample::new(&bundle, &s).unwrap();
    let cfg = ObjectiveConfig {
        noise_sigma: 0.0,
        ..Default::default()
    };
    let pixel = Perceptual::pixel();
    let eval = |b: &ModelBundle| {
        let mut g = Graph::new(&b.params);
        let v = build_total_loss(&mut g, b, &pixel, &sample, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        (v.report.total, g.backward(v.total))
    };
    let (_, grads) = eval(&bundle);
    let ids: Vec<_> = bundle.params.ids().collect();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let id = ids[rng.random_range(0..ids.len())];
        let j = rng.random_range(0..bundle.params.get(id).len());
        let analytic = grads.param(id).map_or(0.0, |t| t.data()[j]);
        let (h, orig) = (1e-6, bundle.params.get(id).data()[j]);
        bundle.params.get_mut(id).data_mut()[j] = orig + h;
        let up = eval(&bundle).0;
        bundle.params.get_mut(id).data_mut()[j] = orig - h;
        let down = eval(&bundle).0;
        bundle.params.get_mut(id).data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8));
    }
    verdict(worst < 1e-3, format!("worst relative error {worst:.2e} over 10 parameters"))
}

fn smoke_config(condition: ConditionSource) -> TrainConfig {
    TrainConfig {
        image_path: scene_path(),
        mode: condition.mode(),
        condition_source: condition,
        iterations: SMOKE_ITERATIONS,
        loss: LossMode::Pixel,
        model: ModelConfig {
            channels: SMOKE_CHANNELS,
            encoder_channels: [SMOKE_CHANNELS, 2 * SMOKE_CHANNELS, 4 * SMOKE_CHANNELS],
            ..Default::default()
        },
        seed: 2024,
        ..Default::default()
    }
}

fn smoke_training(trainer: &mut Option<Trainer>) -> Verdict {
    let start = Instant::now();
    let mut t = match Trainer::new(smoke_config(ConditionSource::None)) {
        Ok(t) => t,
        Err(e) => return Fail(format!("setup failed: {e}")),
    };
    if let Err(e) = t.run(None, |_, _| {}) {
        return Fail(format!("training failed: {e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    let log = t.log();
    let (first, last) = (log[0].upscaling, log[log.len() - 1].upscaling);
    let tail = log[log.len() - 50..].iter().map(|r| r.upscaling).sum::<f64>() / 50.0;
    let detail = format!(
        "upscaling loss {first:.4} -> {last:.4} (ratio {:.3}, last-50 mean {tail:.4}), {} iterations at {SMOKE_CHANNELS} channels in {secs:.0} s",
        last / first,
        log.len()
    );
    let ok = last < 0.5 * first && secs <= 900.0;
    *trainer = Some(t);
    verdict(ok, detail)
}

fn interpolation_contracts(trainer: Option<&Trainer>) -> Verdict {
    let Some(t) = trainer else {
        return Fail("no smoke-trained bundle".into());
    };
    let (bundle, image) = (t.bundle(), &t.data().image);
    let spec = AnimationSpec {
        frame_count: 8,
        seeds: (31, 32),
        loop_mode: LoopMode::Once,
        augmentation: t.config().augmentation,
        output_dir: None,
    };
    let frames = animate(bundle, image, &spec).unwrap();
    let x1 = augmented_coarse(bundle, image, &spec.augmentation, 31).unwrap();
    let x2 = augmented_coarse(bundle, image, &spec.augmentation, 32).unwrap();
    let (r1, r2) = (reconstruct(bundle, &x1).unwrap(), reconstruct(bundle, &x2).unwrap());
    let endpoints = frames[0] == r1
        && frames[8] == r2
        && interpolate(bundle, &x1, &x2, 1.0).unwrap() == r1
        && interpolate(bundle, &x1, &x2, 0.0).unwrap() == r2;
    let steps: Vec<f64> = frames.windows(2).map(|w| w[0].mean_abs_diff(&w[1])).collect();
    let mean_step = steps.iter().sum::<f64>() / steps.len() as f64;
    let span = frames[0].mean_abs_diff(&frames[8]);
    verdict(
        endpoints && frames.len() == 9 && mean_step < span,
        format!(
            "endpoints bit-identical: {endpoints}, {} frames, mean consecutive difference {mean_step:.4} vs endpoint difference {span:.4}",
            frames.len()
        ),
    )
}

fn conditional_consistency() -> Verdict {
    let start = Instant::now();
    let mut t = match Trainer::new(smoke_config(ConditionSource::EdgeMap)) {
        Ok(t) => t,
        Err(e) => return Fail(format!("setup failed: {e}")),
    };
    if let Err(e) = t.run(None, |_, _| {}) {
        return Fail(format!("training failed: {e}"));
    }
    let final_loss = t.log().last().unwrap().total;
    let edges = t.data().condition.clone().expect("edge map");
    let out = edges2image(t.bundle(), &edges).unwrap();
    let d = out.mean_abs_diff(&t.data().image);
    verdict(
        t.bundle().mode() == Mode::Conditional && d <= 2.0 * final_loss,
        format!(
            "pixel distance {d:.4} vs final training loss {final_loss:.4} (bound {:.4}), {:.0} s",
            2.0 * final_loss,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn sifid_math() -> Verdict {
    let x = load_image(scene_path()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1008);
    let y = x.map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal));
    let ex = Extractor::RawPatch;
    let self_d = sifid(&ex, &x, &x).unwrap();
    let (dxy, dyx) = (sifid(&ex, &x, &y).unwrap(), sifid(&ex, &y, &x).unwrap());
    let mut closed = 0.0f64;
    for _ in 0..20 {
        let n = 16;
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let stats = |v: &[f64]| FeatureStats {
            mean: DVector::from_column_slice(&mu),
            cov: DMatrix::from_diagonal(&DVector::from_column_slice(v)),
        };
        let want: f64 = a.iter().zip(&b).map(|(p, q)| (p.sqrt() - q.sqrt()).powi(2)).sum();
        closed = closed.max((frechet_distance(&stats(&a), &stats(&b)).unwrap() - want).abs());
    }
    verdict(
        self_d <= 1e-6 && (dxy - dyx).abs() <= 1e-6 && closed <= 1e-8,
        format!("sifid(x,x) {self_d:.2e}, asymmetry {:.2e}, diagonal closed-form error {closed:.2e}", (dxy - dyx).abs()),
    )
}

fn tiny_config(iterations: usize) -> TrainConfig {
    TrainConfig {
        image_path: scene_path(),
        iterations,
        loss: LossMode::Pixel,
        model: ModelConfig {
            channels: 8,
            body_layers: 2,
            encoder_channels: [8, 16, 32],
            ..Default::default()
        },
        seed: 77,
        ..Default::default()
    }
}

fn persistence(trainer: Option<&Trainer>) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let run = |iters| {
        let mut t = Trainer::new(tiny_config(iters)).unwrap();
        t.run(None, |_, _| {}).unwrap();
        t
    };
    let (a, b) = (run(12), run(12));
    let same_logs = a.log() == b.log();

    let mut partial = Trainer::new(tiny_config(12)).unwrap();
    for _ in 0..5 {
        partial.step().unwrap();
    }
    partial.save(dir.path().join("k5")).unwrap();
    let mut resumed = Trainer::resume(dir.path().join("k5")).unwrap();
    resumed.run(None, |_, _| {}).unwrap();
    let resume_gap = resumed
        .log()
        .iter()
        .zip(a.log())
        .map(|(p, q)| (p.total - q.total).abs())
        .fold(0.0, f64::max);

    let bundle = trainer.map_or(a.bundle(), Trainer::bundle);
    save_checkpoint(bundle, dir.path().join("rt")).unwrap();
    let loaded = load_checkpoint(dir.path().join("rt")).unwrap();
    let d = bundle.ladder.coarsest();
    let x0 = resample(&load_image(scene_path()).unwrap(), d.h, d.w).unwrap();
    let round_trip = reconstruct(bundle, &x0).unwrap() == reconstruct(&loaded, &x0).unwrap()
        && loaded.params == bundle.params;
    verdict(
        same_logs && round_trip && resume_gap <= 1e-5 && resumed.log().len() == a.log().len(),
        format!("identical logs: {same_logs}, round-trip bit-identical: {round_trip}, resume gap {resume_gap:.2e}"),
    )
}

fn pretrained_sifid(trainer: Option<&Trainer>) -> Verdict {
    let ex = match Extractor::locate(None) {
        Ok(ex) => ex,
        Err(e) => return Skip(format!("{e}")),
    };
    let x = load_image(scene_path()).unwrap();
    let other = match trainer {
        Some(t) => {
            let d = t.bundle().ladder.coarsest();
            reconstruct(t.bundle(), &resample(&x, d.h, d.w).unwrap()).unwrap()
        }
        None => x.flip_horizontal(),
    };
    match sifid(&ex, &x, &other) {
        Ok(v) => verdict(
            v.is_finite() && v > 0.0,
            format!("sifid {v:.4} with {} (published averages 0.34 and 0.68 are reference context only)", ex.id()),
        ),
        Err(e) => Fail(format!("{e}")),
    }
}

fn main() {
    // cargo passes harness flags such as --nocapture; none apply here
    let mut failed = 0;
    let mut print = |n: usize, title: &str, v: Verdict| {
        let (tag, detail) = match v {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("criterion {n:>2} {tag}: {title}: {detail}");
    };
    print(1, "spline oracle equivalence", tps_oracle());
    print(2, "spline structural properties", tps_structure());
    print(3, "paired augmentation alignment", paired_alignment());
    print(4, "gradient correctness", gradient_check());
    let mut smoke = None;
    print(5, "end-to-end smoke training", smoke_training(&mut smoke));
    print(6, "interpolation and animation contracts", interpolation_contracts(smoke.as_ref()));
    print(7, "conditional self-consistency", conditional_consistency());
    print(8, "sifid math", sifid_math());
    print(9, "determinism and persistence", persistence(smoke.as_ref()));
    print(10, "pretrained sifid protocol", pretrained_sifid(smoke.as_ref()));
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
