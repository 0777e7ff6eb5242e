//! Raw numeric kernels shared by the autodiff graph and the forward-only
//! feature extractors. Everything operates on single `[C, H, W]` samples.

/// Row-major matrix view with an optional transpose.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = a · b + beta · out`, `out` row-major `m × n`.
pub fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f64, out: &mut [f64]) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the strides describe in-bounds views of the slices checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Reflect an index into `[0, n)` the way `ReflectionPad2d` does (edge not repeated).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

pub fn reflect_pad(x: &[f64], c: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; c * hp * wp];
    let row_idx: Vec<usize> = (0..hp)
        .map(|y| reflect_index(y as isize - pad as isize, h))
        .collect();
    let col_idx: Vec<usize> = (0..wp)
        .map(|x| reflect_index(x as isize - pad as isize, w))
        .collect();
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * hp * wp..(ch + 1) * hp * wp];
        for (y, &sy) in row_idx.iter().enumerate() {
            for (xx, &sx) in col_idx.iter().enumerate() {
                dst[y * wp + xx] = src[sy * w + sx];
            }
        }
    }
    out
}

pub fn reflect_pad_backward(dy: &[f64], c: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut dx = vec![0.0; c * h * w];
    let row_idx: Vec<usize> = (0..hp)
        .map(|y| reflect_index(y as isize - pad as isize, h))
        .collect();
    let col_idx: Vec<usize> = (0..wp)
        .map(|x| reflect_index(x as isize - pad as isize, w))
        .collect();
    for ch in 0..c {
        let src = &dy[ch * hp * wp..(ch + 1) * hp * wp];
        let dst = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (y, &sy) in row_idx.iter().enumerate() {
            for (xx, &sx) in col_idx.iter().enumerate() {
                dst[sy * w + sx] += src[y * wp + xx];
            }
        }
    }
    dx
}

pub fn zero_pad(x: &[f64], c: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; c * hp * wp];
    for ch in 0..c {
        for y in 0..h {
            let src = &x[(ch * h + y) * w..(ch * h + y + 1) * w];
            let start = (ch * hp + y + pad) * wp + pad;
            out[start..start + w].copy_from_slice(src);
        }
    }
    out
}

pub fn zero_pad_backward(dy: &[f64], c: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut dx = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let start = (ch * hp + y + pad) * wp + pad;
            dx.extend_from_slice(&dy[start..start + w]);
        }
    }
    dx
}

/// Output size of a valid (unpadded) convolution.
pub fn conv_out(size: usize, k: usize, stride: usize) -> usize {
    if size < k {
        0
    } else {
        (size - k) / stride + 1
    }
}

/// Unfold `[C, H, W]` into `[C·k·k, Ho·Wo]` patch columns.
pub fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize) -> Vec<f64> {
    let (ho, wo) = (conv_out(h, k, stride), conv_out(w, k, stride));
    let p = ho * wo;
    let mut cols = vec![0.0; c * k * k * p];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let src_row = &plane[(oy * stride + ki) * w..];
                    let d = &mut dst[oy * wo..(oy + 1) * wo];
                    if stride == 1 {
                        d.copy_from_slice(&src_row[kj..kj + wo]);
                    } else {
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = src_row[ox * stride + kj];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into a `[C, H, W]` buffer.
pub fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    out: &mut [f64],
) {
    let (ho, wo) = (conv_out(h, k, stride), conv_out(w, k, stride));
    let p = ho * wo;
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let base = (oy * stride + ki) * w + kj;
                    let s = &src[oy * wo..(oy + 1) * wo];
                    for (ox, v) in s.iter().enumerate() {
                        plane[base + ox * stride] += v;
                    }
                }
            }
        }
    }
}

/// Geometry of a convolution on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            conv_out(self.h, self.k, self.stride),
            conv_out(self.w, self.k, self.stride),
        )
    }
}

/// Valid convolution. Returns `(output, cols)`; `cols` is kept for the backward pass.
pub fn conv2d(
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    g: ConvGeom,
) -> (Vec<f64>, Vec<f64>) {
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    let kk = g.c_in * g.k * g.k;
    let cols = im2col(x, g.c_in, g.h, g.w, g.k, g.stride);
    let mut out = vec![0.0; g.c_out * p];
    if let Some(b) = bias {
        for (o, bv) in b.iter().enumerate() {
            out[o * p..(o + 1) * p].iter_mut().for_each(|v| *v = *bv);
        }
    }
    gemm(
        MatRef::new(weight, g.c_out, kk),
        MatRef::new(&cols, kk, p),
        if bias.is_some() { 1.0 } else { 0.0 },
        &mut out,
    );
    (out, cols)
}

/// Gradients of [`conv2d`]; each output is produced only when requested.
pub fn conv2d_backward(
    dy: &[f64],
    cols: &[f64],
    weight: &[f64],
    g: ConvGeom,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>) {
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    let kk = g.c_in * g.k * g.k;
    let dw = want_dw.then(|| {
        let mut dw = vec![0.0; g.c_out * kk];
        gemm(
            MatRef::new(dy, g.c_out, p),
            MatRef::new(cols, kk, p).t(),
            0.0,
            &mut dw,
        );
        dw
    });
    let dx = want_dx.then(|| {
        let mut dcols = vec![0.0; kk * p];
        gemm(
            MatRef::new(weight, g.c_out, kk).t(),
            MatRef::new(dy, g.c_out, p),
            0.0,
            &mut dcols,
        );
        let mut dx = vec![0.0; g.c_in * g.h * g.w];
        col2im(&dcols, g.c_in, g.h, g.w, g.k, g.stride, &mut dx);
        dx
    });
    let db = (0..g.c_out)
        .map(|o| dy[o * p..(o + 1) * p].iter().sum())
        .collect();
    (dx, dw, db)
}

/// Transposed convolution (`[C_in, C_out, k, k]` weights) with `crop` rows and
/// columns removed from each border of the full output.
pub fn conv_transpose2d(
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    g: ConvGeom,
    crop: usize,
) -> (Vec<f64>, usize, usize) {
    let (hf, wf) = ((g.h - 1) * g.stride + g.k, (g.w - 1) * g.stride + g.k);
    let q = g.c_out * g.k * g.k;
    let p = g.h * g.w;
    let mut cols = vec![0.0; q * p];
    gemm(
        MatRef::new(weight, g.c_in, q).t(),
        MatRef::new(x, g.c_in, p),
        0.0,
        &mut cols,
    );
    let mut full = vec![0.0; g.c_out * hf * wf];
    col2im(&cols, g.c_out, hf, wf, g.k, g.stride, &mut full);
    let (ho, wo) = (hf - 2 * crop, wf - 2 * crop);
    let mut out = vec![0.0; g.c_out * ho * wo];
    for o in 0..g.c_out {
        let b = bias.map_or(0.0, |b| b[o]);
        for y in 0..ho {
            let src = &full[(o * hf + y + crop) * wf + crop..][..wo];
            let dst = &mut out[(o * ho + y) * wo..][..wo];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + b;
            }
        }
    }
    (out, ho, wo)
}

pub fn conv_transpose2d_backward(
    dy: &[f64],
    x: &[f64],
    weight: &[f64],
    g: ConvGeom,
    crop: usize,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>) {
    let (hf, wf) = ((g.h - 1) * g.stride + g.k, (g.w - 1) * g.stride + g.k);
    let (ho, wo) = (hf - 2 * crop, wf - 2 * crop);
    let q = g.c_out * g.k * g.k;
    let p = g.h * g.w;
    let mut dfull = vec![0.0; g.c_out * hf * wf];
    let mut db = vec![0.0; g.c_out];
    for o in 0..g.c_out {
        for y in 0..ho {
            let src = &dy[(o * ho + y) * wo..][..wo];
            db[o] += src.iter().sum::<f64>();
            dfull[(o * hf + y + crop) * wf + crop..][..wo].copy_from_slice(src);
        }
    }
    // Columns of the full-output gradient line up with input positions.
    let dcols = im2col(&dfull, g.c_out, hf, wf, g.k, g.stride);
    debug_assert_eq!(dcols.len(), q * p);
    let dx = want_dx.then(|| {
        let mut dx = vec![0.0; g.c_in * p];
        gemm(
            MatRef::new(weight, g.c_in, q),
            MatRef::new(&dcols, q, p),
            0.0,
            &mut dx,
        );
        dx
    });
    let dw = want_dw.then(|| {
        let mut dw = vec![0.0; g.c_in * q];
        gemm(
            MatRef::new(x, g.c_in, p),
            MatRef::new(&dcols, q, p).t(),
            0.0,
            &mut dw,
        );
        dw
    });
    (dx, dw, db)
}

/// Separable resize with precomputed interpolation matrices
/// (`ry`: `out_h × h`, `rx`: `out_w × w`).
#[allow(clippy::too_many_arguments)]
pub fn resize(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    ry: &[f64],
    out_h: usize,
    rx: &[f64],
    out_w: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; c * out_h * out_w];
    let mut tmp = vec![0.0; h * out_w];
    for ch in 0..c {
        gemm(
            MatRef::new(&x[ch * h * w..(ch + 1) * h * w], h, w),
            MatRef::new(rx, out_w, w).t(),
            0.0,
            &mut tmp,
        );
        gemm(
            MatRef::new(ry, out_h, h),
            MatRef::new(&tmp, h, out_w),
            0.0,
            &mut out[ch * out_h * out_w..(ch + 1) * out_h * out_w],
        );
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn resize_backward(
    dy: &[f64],
    c: usize,
    h: usize,
    w: usize,
    ry: &[f64],
    out_h: usize,
    rx: &[f64],
    out_w: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; c * h * w];
    let mut tmp = vec![0.0; h * out_w];
    for ch in 0..c {
        gemm(
            MatRef::new(ry, out_h, h).t(),
            MatRef::new(&dy[ch * out_h * out_w..(ch + 1) * out_h * out_w], out_h, out_w),
            0.0,
            &mut tmp,
        );
        gemm(
            MatRef::new(&tmp, h, out_w),
            MatRef::new(rx, out_w, w),
            0.0,
            &mut dx[ch * h * w..(ch + 1) * h * w],
        );
    }
    dx
}

/// Max pooling (floor mode). Returns the output and the flat argmax index per output.
pub fn max_pool(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>, usize, usize) {
    let (ho, wo) = (conv_out(h, k, stride), conv_out(w, k, stride));
    let mut out = vec![0.0; c * ho * wo];
    let mut arg = vec![0; c * ho * wo];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for ki in 0..k {
                    for kj in 0..k {
                        let i = (ch * h + oy * stride + ki) * w + ox * stride + kj;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                let o = (ch * ho + oy) * wo + ox;
                out[o] = best;
                arg[o] = best_i;
            }
        }
    }
    (out, arg, ho, wo)
}

/// Per-channel normalization over spatial positions. Returns `(y, x_hat, inv_std)`.
pub fn batch_norm(
    x: &[f64],
    c: usize,
    hw: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; x.len()];
    let mut x_hat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; c];
    let n = hw as f64;
    for ch in 0..c {
        let xs = &x[ch * hw..(ch + 1) * hw];
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[ch] = is;
        for i in 0..hw {
            let xh = (xs[i] - mean) * is;
            x_hat[ch * hw + i] = xh;
            y[ch * hw + i] = gamma[ch] * xh + beta[ch];
        }
    }
    (y, x_hat, inv_std)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward(
    dy: &[f64],
    x_hat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    c: usize,
    hw: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; dy.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let n = hw as f64;
    for ch in 0..c {
        let r = ch * hw..(ch + 1) * hw;
        let (dys, xh) = (&dy[r.clone()], &x_hat[r.clone()]);
        let sum_dy: f64 = dys.iter().sum();
        let sum_dy_xh: f64 = dys.iter().zip(xh).map(|(a, b)| a * b).sum();
        dbeta[ch] = sum_dy;
        dgamma[ch] = sum_dy_xh;
        let scale = gamma[ch] * inv_std[ch] / n;
        for i in 0..hw {
            dx[ch * hw + i] = scale * (n * dys[i] - sum_dy - xh[i] * sum_dy_xh);
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_index_matches_reflection_padding() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-2, 1), 0);
    }

    #[test]
    fn gemm_handles_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut out = [0.0; 4];
        gemm(MatRef::new(&a, 2, 2), MatRef::new(&b, 2, 2), 0.0, &mut out);
        assert_eq!(out, [19.0, 22.0, 43.0, 50.0]);
        gemm(MatRef::new(&a, 2, 2).t(), MatRef::new(&b, 2, 2), 0.0, &mut out);
        assert_eq!(out, [26.0, 30.0, 38.0, 44.0]);
        gemm(MatRef::new(&a, 2, 2), MatRef::new(&b, 2, 2).t(), 0.0, &mut out);
        assert_eq!(out, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn conv2d_matches_direct_loop() {
        let g = ConvGeom {
            c_in: 2,
            c_out: 3,
            h: 6,
            w: 5,
            k: 3,
            stride: 2,
        };
        let x: Vec<f64> = (0..60).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let wt: Vec<f64> = (0..54).map(|i| ((i * 5) % 13) as f64 * 0.1 - 0.6).collect();
        let b = [0.5, -1.0, 2.0];
        let (y, _) = conv2d(&x, &wt, Some(&b), g);
        let (ho, wo) = g.out_hw();
        for o in 0..3 {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[o];
                    for c in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                acc += wt[((o * 2 + c) * 3 + ki) * 3 + kj]
                                    * x[(c * 6 + oy * 2 + ki) * 5 + ox * 2 + kj];
                            }
                        }
                    }
                    assert!((y[(o * ho + oy) * wo + ox] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transposed_conv_matches_scatter_definition() {
        let g = ConvGeom {
            c_in: 2,
            c_out: 1,
            h: 2,
            w: 3,
            k: 4,
            stride: 2,
        };
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect();
        let wt: Vec<f64> = (0..32).map(|i| ((i * 3) % 7) as f64 - 3.0).collect();
        let (y, ho, wo) = conv_transpose2d(&x, &wt, Some(&[0.25]), g, 1);
        assert_eq!((ho, wo), (4, 6));
        let (hf, wf) = (6, 8);
        let mut full = vec![0.25; hf * wf];
        for c in 0..2 {
            for iy in 0..2 {
                for ix in 0..3 {
                    for ki in 0..4 {
                        for kj in 0..4 {
                            full[(iy * 2 + ki) * wf + ix * 2 + kj] +=
                                x[(c * 2 + iy) * 3 + ix] * wt[(c * 4 + ki) * 4 + kj];
                        }
                    }
                }
            }
        }
        for yy in 0..ho {
            for xx in 0..wo {
                assert!((y[yy * wo + xx] - full[(yy + 1) * wf + xx + 1]).abs() < 1e-12);
            }
        }
    }
}
