//! Regularized thin-plate splines in normalized `[0, 1]²` image coordinates.
//!
//! A fitted warp is `f(p) = a₀ + a₁·x + a₂·y + Σᵢ wᵢ·U(‖p − cᵢ‖)` with the
//! kernel `U(d) = d² log d²`, obtained by solving
//!
//! ```text
//! | K + λI  P | | w |   | t |
//! | Pᵀ      0 | | a | = | 0 |
//! ```
//!
//! where `K[i][j] = U(‖cᵢ − cⱼ‖)` and `P` rows are `[1, xᵢ, yᵢ]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Point = [f64; 2];

/// Default smoothness weight in normalized coordinates.
pub const DEFAULT_LAMBDA: f64 = 0.01;

/// `U(d) = d² log d²` written in terms of the squared distance; `U(0) = 0`.
pub fn tps_kernel(d2: f64) -> f64 {
    if d2 <= 0.0 {
        0.0
    } else {
        d2 * d2.ln()
    }
}

fn dist2(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsWarp {
    pub source: Vec<Point>,
    pub targets: Vec<Point>,
    pub lambda: f64,
    /// Rows: constant, x, y; columns: output x, output y.
    pub affine: [[f64; 2]; 3],
    pub weights: Vec<Point>,
}

impl TpsWarp {
    /// Minimizer of the squared control-point error plus `λ` times the bending energy.
    pub fn fit(source: &[Point], targets: &[Point], lambda: f64) -> Result<Self> {
        let n = source.len();
        if n != targets.len() {
            return Err(Error::DimMismatch {
                expected: format!("{n} targets"),
                actual: format!("{} targets", targets.len()),
            });
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "smoothness weight must be finite and non-negative, got {lambda}"
            )));
        }
        if n < 3 || !spans_plane(source) {
            return Err(Error::DegenerateConfiguration(format!(
                "need at least 3 non-collinear control points, got {n}"
            )));
        }

        let mut l = DMatrix::<f64>::zeros(n + 3, n + 3);
        for i in 0..n {
            for j in 0..n {
                l[(i, j)] = tps_kernel(dist2(&source[i], &source[j]));
            }
            l[(i, i)] += lambda;
            let p = [1.0, source[i][0], source[i][1]];
            for (k, v) in p.iter().enumerate() {
                l[(i, n + k)] = *v;
                l[(n + k, i)] = *v;
            }
        }
        let mut rhs = DMatrix::<f64>::zeros(n + 3, 2);
        for (i, t) in targets.iter().enumerate() {
            rhs[(i, 0)] = t[0];
            rhs[(i, 1)] = t[1];
        }
        let sol = l.lu().solve(&rhs).ok_or_else(|| {
            Error::DegenerateConfiguration("thin-plate-spline system is singular".into())
        })?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateConfiguration(
                "thin-plate-spline solve produced non-finite coefficients".into(),
            ));
        }
        let weights = (0..n).map(|i| [sol[(i, 0)], sol[(i, 1)]]).collect();
        let affine = [
            [sol[(n, 0)], sol[(n, 1)]],
            [sol[(n + 1, 0)], sol[(n + 1, 1)]],
            [sol[(n + 2, 0)], sol[(n + 2, 1)]],
        ];
        Ok(Self {
            source: source.to_vec(),
            targets: targets.to_vec(),
            lambda,
            affine,
            weights,
        })
    }

    pub fn identity(source: &[Point]) -> Self {
        Self {
            source: source.to_vec(),
            targets: source.to_vec(),
            lambda: 0.0,
            affine: [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            weights: vec![[0.0, 0.0]; source.len()],
        }
    }

    pub fn eval(&self, p: Point) -> Point {
        let a = &self.affine;
        let mut out = [
            a[0][0] + a[1][0] * p[0] + a[2][0] * p[1],
            a[0][1] + a[1][1] * p[0] + a[2][1] * p[1],
        ];
        for (c, w) in self.source.iter().zip(&self.weights) {
            let u = tps_kernel(dist2(&p, c));
            out[0] += w[0] * u;
            out[1] += w[1] * u;
        }
        out
    }

    pub fn eval_many(&self, points: &[Point]) -> Vec<Point> {
        points.iter().map(|&p| self.eval(p)).collect()
    }

    /// The same spline fitted with source and target roles swapped; used as
    /// the backward map when resampling images.
    pub fn inverse(&self) -> Result<Self> {
        Self::fit(&self.targets, &self.source, self.lambda)
    }

    /// `∫∫ f_xx² + 2 f_xy² + f_yy²` over the plane, summed over both output
    /// coordinates, via the closed form `16π · Σ_c w_cᵀ K w_c`.
    pub fn bending_energy(&self) -> f64 {
        let n = self.source.len();
        let mut e = 0.0;
        for i in 0..n {
            for j in 0..n {
                let k = tps_kernel(dist2(&self.source[i], &self.source[j]));
                e += k * (self.weights[i][0] * self.weights[j][0]
                    + self.weights[i][1] * self.weights[j][1]);
            }
        }
        // conditionally positive definite: tiny negative values are round-off
        (16.0 * std::f64::consts::PI * e).max(0.0)
    }

    /// Largest `‖f(cᵢ) − tᵢ‖` over the control points.
    pub fn max_residual(&self) -> f64 {
        self.source
            .iter()
            .zip(&self.targets)
            .map(|(c, t)| dist2(&self.eval(*c), t).sqrt())
            .fold(0.0, f64::max)
    }
}

fn spans_plane(points: &[Point]) -> bool {
    let p0 = points[0];
    let scale = points
        .iter()
        .map(|p| dist2(p, &p0))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    points.iter().enumerate().any(|(i, a)| {
        points[i + 1..].iter().any(|b| {
            let cross = (a[0] - p0[0]) * (b[1] - p0[1]) - (a[1] - p0[1]) * (b[0] - p0[0]);
            cross.abs() > 1e-12 * scale
        })
    })
}

/// `g × g` equi-spaced control grid covering `[0, 1]²`, row-major.
pub fn control_grid(g: usize) -> Vec<Point> {
    assert!(g >= 2, "control grid needs at least 2 points per side");
    let step = 1.0 / (g - 1) as f64;
    (0..g)
        .flat_map(|r| (0..g).map(move |c| [c as f64 * step, r as f64 * step]))
        .collect()
}

pub fn fit_tps(source: &[Point], targets: &[Point], lambda: f64) -> Result<TpsWarp> {
    TpsWarp::fit(source, targets, lambda)
}

pub fn evaluate_warp(warp: &TpsWarp, points: &[Point]) -> Vec<Point> {
    warp.eval_many(points)
}

pub fn bending_energy(warp: &TpsWarp) -> f64 {
    warp.bending_energy()
}
