//! Central finite-difference checks for every differentiable op.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Builds `loss = Σ (f(x, params) + offset)²` and compares the analytic gradient
/// w.r.t. the input and every parameter against central differences.
fn check(
    input_shape: &[usize],
    mut params: ParamStore,
    seed: u64,
    f: impl Fn(&mut Graph, Var) -> Var,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = random(input_shape, &mut rng);
    let loss_of = |params: &ParamStore, x: &Tensor| -> f64 {
        let mut g = Graph::new(params);
        let xv = g.input(x.clone());
        let y = f(&mut g, xv);
        let off = g.input(Tensor::full(g.value(y).shape(), 0.3));
        let s = g.add(y, off);
        let l = g.sum_squares(s);
        g.value(l).item()
    };

    let (dx, dparams) = {
        let mut g = Graph::new(&params);
        let xv = g.input_with_grad(x0.clone());
        let y = f(&mut g, xv);
        let off = g.input(Tensor::full(g.value(y).shape(), 0.3));
        let s = g.add(y, off);
        let l = g.sum_squares(s);
        let grads = g.backward(l);
        (
            grads.leaf(xv).cloned(),
            grads.params().to_vec(),
        )
    };

    let h = 1e-6;
    let close = |a: f64, n: f64, what: &str| {
        let denom = a.abs().max(n.abs()).max(1e-4);
        assert!(
            (a - n).abs() / denom < 1e-5,
            "{what}: analytic {a} vs numeric {n}"
        );
    };
    let dx = dx.expect("input gradient");
    for i in 0..x0.len() {
        let mut xp = x0.clone();
        xp.data_mut()[i] += h;
        let mut xm = x0.clone();
        xm.data_mut()[i] -= h;
        let num = (loss_of(&params, &xp) - loss_of(&params, &xm)) / (2.0 * h);
        close(dx.data()[i], num, &format!("input[{i}]"));
    }
    for id in params.ids().collect::<Vec<_>>() {
        let analytic = dparams[id.0].clone().expect("param gradient");
        for i in 0..params.get(id).len() {
            let orig = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = orig + h;
            let lp = loss_of(&params, &x0);
            params.get_mut(id).data_mut()[i] = orig - h;
            let lm = loss_of(&params, &x0);
            params.get_mut(id).data_mut()[i] = orig;
            close(
                analytic.data()[i],
                (lp - lm) / (2.0 * h),
                &format!("{}[{i}]", params.name(id)),
            );
        }
    }
}

fn store(entries: &[(&str, &[usize])], seed: u64) -> (ParamStore, Vec<ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let ids = entries
        .iter()
        .map(|(n, shape)| s.add(*n, random(shape, &mut rng)))
        .collect();
    (s, ids)
}

#[test]
fn conv2d_stride_one_and_two() {
    for stride in [1, 2] {
        let (s, ids) = store(&[("w", &[3, 2, 3, 3]), ("b", &[3])], 1);
        check(&[2, 7, 6], s, 2, |g, x| {
            let w = g.param(ids[0]);
            let b = g.param(ids[1]);
            g.conv2d(x, w, Some(b), stride)
        });
    }
}

#[test]
fn conv_transpose() {
    let (s, ids) = store(&[("w", &[3, 2, 4, 4]), ("b", &[2])], 3);
    check(&[3, 3, 4], s, 4, |g, x| {
        let w = g.param(ids[0]);
        let b = g.param(ids[1]);
        g.conv_transpose2d(x, w, Some(b), 2, 1)
    });
}

#[test]
fn reflect_pad_and_batch_norm() {
    let (s, ids) = store(&[("gamma", &[2]), ("beta", &[2])], 5);
    check(&[2, 4, 5], s, 6, |g, x| {
        let p = g.reflect_pad(x, 1);
        let p = g.zero_pad(p, 2);
        let (ga, be) = (g.param(ids[0]), g.param(ids[1]));
        let n = g.batch_norm(p, ga, be);
        // break the symmetry that makes Σ(bn) gradients vanish
        let t = g.tanh(n);
        g.scale(t, 1.7)
    });
}

#[test]
fn activations_and_arithmetic() {
    let (s, _) = store(&[], 7);
    check(&[2, 3, 3], s, 8, |g, x| {
        let a = g.leaky_relu(x, 0.2);
        let b = g.tanh(x);
        let c = g.add(a, b);
        let d = g.sub(c, x);
        g.scale(d, -0.5)
    });
}

#[test]
fn resize_matrices() {
    let (s, _) = store(&[], 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let plan = Arc::new(ResizePlan {
        in_h: 4,
        in_w: 3,
        out_h: 6,
        out_w: 5,
        rows: (0..24).map(|_| rng.random_range(-1.0..1.0)).collect(),
        cols: (0..15).map(|_| rng.random_range(-1.0..1.0)).collect(),
    });
    check(&[2, 4, 3], s, 11, move |g, x| g.resize(x, plan.clone()));
}

#[test]
fn pooling_and_channel_norm() {
    let (s, _) = store(&[], 12);
    check(&[3, 6, 6], s, 13, |g, x| {
        let p = g.max_pool(x, 2, 2);
        g.channel_normalize(p)
    });
}

#[test]
fn scalar_losses() {
    let (s, ids) = store(&[("t", &[2, 3, 3])], 14);
    check(&[2, 3, 3], s, 15, |g, x| {
        let t = g.param(ids[0]);
        let l1 = g.mean_abs_diff(x, t);
        let l2 = g.sum_squares(x);
        g.sum(&[l1, l2])
    });
}
