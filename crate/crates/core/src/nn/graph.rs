//! Tape-based reverse-mode differentiation over single-sample `[C, H, W]`
//! tensors. A [`Graph`] borrows the parameter store for the duration of one
//! forward/backward pass; parameters are never copied onto the tape.

use std::borrow::Cow;
use std::sync::Arc;

use super::kernels::{self, ConvGeom};
use super::{ParamId, ParamStore, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Precomputed separable interpolation matrices for a resize.
#[derive(Debug, Clone, PartialEq)]
pub struct ResizePlan {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    /// `out_h × in_h`, row-major.
    pub rows: Vec<f64>,
    /// `out_w × in_w`, row-major.
    pub cols: Vec<f64>,
}

enum Op {
    Leaf,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        crop: usize,
    },
    ReflectPad {
        x: Var,
        pad: usize,
    },
    ZeroPad {
        x: Var,
        pad: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Tanh {
        x: Var,
    },
    Resize {
        x: Var,
        plan: Arc<ResizePlan>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    MaxPool {
        x: Var,
        arg: Vec<usize>,
    },
    ChannelNorm {
        x: Var,
        inv_norms: Vec<f64>,
    },
    MeanAbsDiff {
        a: Var,
        b: Var,
    },
    SumSquares {
        x: Var,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node<'a>>,
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    params: Vec<Option<Tensor>>,
    leaves: Vec<(Var, Tensor)>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id.0].as_ref()
    }

    pub fn params(&self) -> &[Option<Tensor>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<Tensor>] {
        &mut self.params
    }

    /// Gradient w.r.t. a leaf created by [`Graph::input_with_grad`].
    pub fn leaf(&self, v: Var) -> Option<&Tensor> {
        self.leaves.iter().find(|(l, _)| *l == v).map(|(_, t)| t)
    }

    pub fn global_norm(&self) -> f64 {
        self.params
            .iter()
            .flatten()
            .map(Tensor::sq_norm)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.params.iter_mut().flatten() {
            t.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// Borrowed constant (frozen weights).
    pub fn constant(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Gradients::leaf`].
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let t = self.params.get(id);
        self.push(Cow::Borrowed(t), Op::Param(id), true)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Var {
        let (c_in, h, wd) = self.value(x).chw();
        let ws = self.value(w).shape();
        assert_eq!(ws.len(), 4, "conv weight must be rank 4");
        assert_eq!(ws[1], c_in, "conv weight expects {} input channels, got {c_in}", ws[1]);
        assert_eq!(ws[2], ws[3]);
        let geom = ConvGeom {
            c_in,
            c_out: ws[0],
            h,
            w: wd,
            k: ws[2],
            stride,
        };
        let (ho, wo) = geom.out_hw();
        assert!(ho > 0 && wo > 0, "conv input {h}x{wd} smaller than kernel {}", geom.k);
        let bias = b.map(|b| self.value(b).data());
        let (out, cols) = kernels::conv2d(self.value(x).data(), self.value(w).data(), bias, geom);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let t = Tensor::new(vec![geom.c_out, ho, wo], out);
        self.push(
            Cow::Owned(t),
            Op::Conv {
                x,
                w,
                b,
                geom,
                cols: if rg { cols } else { Vec::new() },
            },
            rg,
        )
    }

    /// Transposed convolution; `crop` plays the role of the usual `padding` argument.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        crop: usize,
    ) -> Var {
        let (c_in, h, wd) = self.value(x).chw();
        let ws = self.value(w).shape();
        assert_eq!(ws.len(), 4);
        assert_eq!(ws[0], c_in, "transposed conv weight expects {} input channels", ws[0]);
        let geom = ConvGeom {
            c_in,
            c_out: ws[1],
            h,
            w: wd,
            k: ws[2],
            stride,
        };
        let bias = b.map(|b| self.value(b).data());
        let (out, ho, wo) =
            kernels::conv_transpose2d(self.value(x).data(), self.value(w).data(), bias, geom, crop);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let t = Tensor::new(vec![geom.c_out, ho, wo], out);
        self.push(
            Cow::Owned(t),
            Op::ConvTranspose {
                x,
                w,
                b,
                geom,
                crop,
            },
            rg,
        )
    }

    pub fn reflect_pad(&mut self, x: Var, pad: usize) -> Var {
        let (c, h, w) = self.value(x).chw();
        let out = kernels::reflect_pad(self.value(x).data(), c, h, w, pad);
        let t = Tensor::new(vec![c, h + 2 * pad, w + 2 * pad], out);
        let rg = self.rg(x);
        self.push(Cow::Owned(t), Op::ReflectPad { x, pad }, rg)
    }

    pub fn zero_pad(&mut self, x: Var, pad: usize) -> Var {
        let (c, h, w) = self.value(x).chw();
        let out = kernels::zero_pad(self.value(x).data(), c, h, w, pad);
        let t = Tensor::new(vec![c, h + 2 * pad, w + 2 * pad], out);
        let rg = self.rg(x);
        self.push(Cow::Owned(t), Op::ZeroPad { x, pad }, rg)
    }

    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-5;
        let (c, h, w) = self.value(x).chw();
        let (y, x_hat, inv_std) = kernels::batch_norm(
            self.value(x).data(),
            c,
            h * w,
            self.value(gamma).data(),
            self.value(beta).data(),
            EPS,
        );
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            Cow::Owned(Tensor::new(vec![c, h, w], y)),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
            },
            rg,
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let t = self
            .value(x)
            .map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        self.push(Cow::Owned(t), Op::LeakyRelu { x, slope }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(Cow::Owned(t), Op::Tanh { x }, rg)
    }

    pub fn resize(&mut self, x: Var, plan: Arc<ResizePlan>) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert_eq!((h, w), (plan.in_h, plan.in_w), "resize plan built for other input dims");
        let out = kernels::resize(
            self.value(x).data(),
            c,
            h,
            w,
            &plan.rows,
            plan.out_h,
            &plan.cols,
            plan.out_w,
        );
        let t = Tensor::new(vec![c, plan.out_h, plan.out_w], out);
        let rg = self.rg(x);
        self.push(Cow::Owned(t), Op::Resize { x, plan }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(va.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(t), Op::Add { a, b }, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(va.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(t), Op::Sub { a, b }, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(Cow::Owned(t), Op::Scale { x, c }, rg)
    }

    pub fn max_pool(&mut self, x: Var, k: usize, stride: usize) -> Var {
        let (c, h, w) = self.value(x).chw();
        let (out, arg, ho, wo) = kernels::max_pool(self.value(x).data(), c, h, w, k, stride);
        let rg = self.rg(x);
        self.push(
            Cow::Owned(Tensor::new(vec![c, ho, wo], out)),
            Op::MaxPool { x, arg },
            rg,
        )
    }

    /// Scale each spatial feature vector to unit L2 norm across channels.
    pub fn channel_normalize(&mut self, x: Var) -> Var {
        const EPS: f64 = 1e-10;
        let (c, h, w) = self.value(x).chw();
        let hw = h * w;
        let xs = self.value(x).data();
        let mut inv_norms = vec![0.0; hw];
        let mut out = vec![0.0; xs.len()];
        for p in 0..hw {
            let n2: f64 = (0..c).map(|ch| xs[ch * hw + p].powi(2)).sum();
            let inv = 1.0 / (n2 + EPS).sqrt();
            inv_norms[p] = inv;
            for ch in 0..c {
                out[ch * hw + p] = xs[ch * hw + p] * inv;
            }
        }
        let rg = self.rg(x);
        self.push(
            Cow::Owned(Tensor::new(vec![c, h, w], out)),
            Op::ChannelNorm { x, inv_norms },
            rg,
        )
    }

    /// Mean absolute difference, as a scalar node.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mean_abs_diff shape mismatch");
        let n = va.len().max(1) as f64;
        let s: f64 = va.data().iter().zip(vb.data()).map(|(x, y)| (x - y).abs()).sum();
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(Tensor::scalar(s / n)), Op::MeanAbsDiff { a, b }, rg)
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).sq_norm();
        let rg = self.rg(x);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::SumSquares { x }, rg)
    }

    /// Sum of scalar nodes, left to right.
    pub fn sum(&mut self, terms: &[Var]) -> Var {
        match terms {
            [] => self.input(Tensor::scalar(0.0)),
            [first, rest @ ..] => rest.iter().fold(*first, |acc, &t| self.add(acc, t)),
        }
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut params: Vec<Option<Tensor>> = (0..self.params.len()).map(|_| None).collect();
        let mut leaves = Vec::new();

        for idx in (0..=root.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let acc = |v: Var, g: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(t) => t.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            };
            let dyd = dy.data();
            match &node.op {
                Op::Leaf => leaves.push((Var(idx), dy)),
                Op::Param(id) => match &mut params[id.0] {
                    Some(t) => t.add_assign(&dy),
                    slot @ None => *slot = Some(dy),
                },
                Op::Conv {
                    x,
                    w,
                    b,
                    geom,
                    cols,
                } => {
                    let (dx, dw, db) = kernels::conv2d_backward(
                        dyd,
                        cols,
                        self.value(*w).data(),
                        *geom,
                        self.rg(*x),
                        self.rg(*w),
                    );
                    if let Some(dx) = dx {
                        acc(*x, Tensor::new(self.value(*x).shape().to_vec(), dx), &mut grads);
                    }
                    if let Some(dw) = dw {
                        acc(*w, Tensor::new(self.value(*w).shape().to_vec(), dw), &mut grads);
                    }
                    if let Some(b) = b {
                        acc(*b, Tensor::new(vec![geom.c_out], db), &mut grads);
                    }
                }
                Op::ConvTranspose {
                    x,
                    w,
                    b,
                    geom,
                    crop,
                } => {
                    let (dx, dw, db) = kernels::conv_transpose2d_backward(
                        dyd,
                        self.value(*x).data(),
                        self.value(*w).data(),
                        *geom,
                        *crop,
                        self.rg(*x),
                        self.rg(*w),
                    );
                    if let Some(dx) = dx {
                        acc(*x, Tensor::new(self.value(*x).shape().to_vec(), dx), &mut grads);
                    }
                    if let Some(dw) = dw {
                        acc(*w, Tensor::new(self.value(*w).shape().to_vec(), dw), &mut grads);
                    }
                    if let Some(b) = b {
                        acc(*b, Tensor::new(vec![geom.c_out], db), &mut grads);
                    }
                }
                Op::ReflectPad { x, pad } => {
                    let (c, h, w) = self.value(*x).chw();
                    let dx = kernels::reflect_pad_backward(dyd, c, h, w, *pad);
                    acc(*x, Tensor::new(vec![c, h, w], dx), &mut grads);
                }
                Op::ZeroPad { x, pad } => {
                    let (c, h, w) = self.value(*x).chw();
                    let dx = kernels::zero_pad_backward(dyd, c, h, w, *pad);
                    acc(*x, Tensor::new(vec![c, h, w], dx), &mut grads);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    x_hat,
                    inv_std,
                } => {
                    let (c, h, w) = self.value(*x).chw();
                    let (dx, dg, db) = kernels::batch_norm_backward(
                        dyd,
                        x_hat,
                        inv_std,
                        self.value(*gamma).data(),
                        c,
                        h * w,
                    );
                    acc(*x, Tensor::new(vec![c, h, w], dx), &mut grads);
                    acc(*gamma, Tensor::new(vec![c], dg), &mut grads);
                    acc(*beta, Tensor::new(vec![c], db), &mut grads);
                }
                Op::LeakyRelu { x, slope } => {
                    let xs = self.value(*x);
                    let data = xs
                        .data()
                        .iter()
                        .zip(dyd)
                        .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
                        .collect();
                    acc(*x, Tensor::new(xs.shape().to_vec(), data), &mut grads);
                }
                Op::Tanh { x } => {
                    let data = node
                        .value
                        .data()
                        .iter()
                        .zip(dyd)
                        .map(|(&y, &g)| g * (1.0 - y * y))
                        .collect();
                    acc(*x, Tensor::new(node.value.shape().to_vec(), data), &mut grads);
                }
                Op::Resize { x, plan } => {
                    let (c, h, w) = self.value(*x).chw();
                    let dx = kernels::resize_backward(
                        dyd,
                        c,
                        h,
                        w,
                        &plan.rows,
                        plan.out_h,
                        &plan.cols,
                        plan.out_w,
                    );
                    acc(*x, Tensor::new(vec![c, h, w], dx), &mut grads);
                }
                Op::Add { a, b } => {
                    acc(*b, dy.clone(), &mut grads);
                    acc(*a, dy, &mut grads);
                }
                Op::Sub { a, b } => {
                    acc(*b, dy.map(|v| -v), &mut grads);
                    acc(*a, dy, &mut grads);
                }
                Op::Scale { x, c } => acc(*x, dy.map(|v| v * c), &mut grads),
                Op::MaxPool { x, arg } => {
                    let xs = self.value(*x);
                    let mut dx = vec![0.0; xs.len()];
                    for (o, &i) in arg.iter().enumerate() {
                        dx[i] += dyd[o];
                    }
                    acc(*x, Tensor::new(xs.shape().to_vec(), dx), &mut grads);
                }
                Op::ChannelNorm { x, inv_norms } => {
                    let (c, h, w) = self.value(*x).chw();
                    let hw = h * w;
                    let y = node.value.data();
                    let mut dx = vec![0.0; c * hw];
                    for p in 0..hw {
                        let dot: f64 = (0..c).map(|ch| dyd[ch * hw + p] * y[ch * hw + p]).sum();
                        for ch in 0..c {
                            let i = ch * hw + p;
                            dx[i] = (dyd[i] - y[i] * dot) * inv_norms[p];
                        }
                    }
                    acc(*x, Tensor::new(vec![c, h, w], dx), &mut grads);
                }
                Op::MeanAbsDiff { a, b } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let g = dyd[0] / va.len().max(1) as f64;
                    let da: Vec<f64> = va
                        .data()
                        .iter()
                        .zip(vb.data())
                        .map(|(x, y)| g * sign(x - y))
                        .collect();
                    if self.rg(*b) {
                        let db = da.iter().map(|v| -v).collect();
                        acc(*b, Tensor::new(vb.shape().to_vec(), db), &mut grads);
                    }
                    acc(*a, Tensor::new(va.shape().to_vec(), da), &mut grads);
                }
                Op::SumSquares { x } => {
                    let g = dyd[0];
                    acc(*x, self.value(*x).map(|v| 2.0 * g * v), &mut grads);
                }
            }
        }
        Gradients { params, leaves }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
