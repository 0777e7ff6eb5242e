//! Shared helpers for the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use augurone_core::warp::Point;

/// Solves the bordered spline system with plain Gaussian elimination and
/// partial pivoting. Returns `(weights, affine rows [const, x, y])`.
pub fn dense_tps_solve(src: &[Point], tgt: &[Point], lambda: f64) -> (Vec<Point>, Vec<Point>) {
    let n = src.len();
    let m = n + 3;
    let u = |a: &Point, b: &Point| {
        let r2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
        if r2 == 0.0 { 0.0 } else { r2 * r2.ln() }
    };
    let mut a = vec![vec![0.0; m + 2]; m];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = u(&src[i], &src[j]);
        }
        a[i][i] += lambda;
        let p = [1.0, src[i][0], src[i][1]];
        for k in 0..3 {
            a[i][n + k] = p[k];
            a[n + k][i] = p[k];
        }
        a[i][m] = tgt[i][0];
        a[i][m + 1] = tgt[i][1];
    }
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for row in 0..m {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..m + 2 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let sol: Vec<Point> = (0..m)
        .map(|i| [a[i][m] / a[i][i], a[i][m + 1] / a[i][i]])
        .collect();
    (sol[..n].to_vec(), sol[n..].to_vec())
}
