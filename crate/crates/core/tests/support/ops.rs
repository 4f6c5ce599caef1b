//! Differentiable operators with the input shapes they are probed at,
//! shared by the numerics tests and the acceptance suite.

#![allow(dead_code)]

use codial_core::numerics::{BatchNormMode, Graph, Tensor, Var};
use codial_core::{Purpose, RngStream};
use rand::Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = RngStream::new(seed, 0, 0, Purpose::Custom(1));
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Contracts a tensor-valued op to a scalar with fixed random weights so
/// every output coordinate contributes to the checked gradient.
pub fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> codial_core::Result<Var> {
    let w = random_tensor(g.shape(y), seed ^ 0xABCD);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

pub type OpFn = fn(&mut Graph<f64>, Var) -> codial_core::Result<Var>;

pub fn differentiable_ops() -> Vec<(&'static str, Vec<usize>, OpFn)> {
    vec![
        ("add", vec![3, 4], |g, x| {
            let c = g.constant(random_tensor(&[3, 4], 99));
            g.add(x, c)
        }),
        ("sub", vec![3, 4], |g, x| {
            let c = g.constant(random_tensor(&[3, 4], 98));
            g.sub(c, x)
        }),
        ("mul", vec![3, 4], |g, x| g.mul(x, x)),
        ("add_row", vec![3, 4], |g, x| {
            let r = g.constant(random_tensor(&[4], 97));
            g.add_row(x, r)
        }),
        ("add_row_bias", vec![4], |g, b| {
            let x = g.constant(random_tensor(&[3, 4], 96));
            g.add_row(x, b)
        }),
        ("scale", vec![5], |g, x| Ok(g.scale(x, -1.7))),
        ("add_scalar", vec![5], |g, x| Ok(g.add_scalar(x, 0.3))),
        ("exp", vec![5], |g, x| Ok(g.exp(x))),
        ("ln", vec![5], |g, x| {
            let e = g.exp(x);
            let e = g.add_scalar(e, 0.5);
            Ok(g.ln(e))
        }),
        ("softplus", vec![6], |g, x| {
            let s = g.scale(x, 8.0);
            Ok(g.softplus(s))
        }),
        ("relu", vec![6], |g, x| Ok(g.relu(x))),
        ("clamp", vec![6], |g, x| Ok(g.clamp(x, -0.5, 0.5))),
        ("mean", vec![6], |g, x| Ok(g.mean(x))),
        ("sum_last", vec![3, 4], |g, x| g.sum_last(x)),
        ("matmul_lhs", vec![3, 4], |g, x| {
            let w = g.constant(random_tensor(&[4, 2], 95));
            g.matmul(x, w)
        }),
        ("matmul_rhs", vec![4, 2], |g, w| {
            let x = g.constant(random_tensor(&[3, 4], 94));
            g.matmul(x, w)
        }),
        ("conv2d_input", vec![2, 5, 5, 2], |g, x| {
            let k = g.constant(random_tensor(&[3, 3, 2, 3], 93));
            g.conv2d(x, k, 2, 1)
        }),
        ("conv2d_kernel", vec![3, 3, 2, 3], |g, k| {
            let x = g.constant(random_tensor(&[2, 5, 4, 2], 92));
            g.conv2d(x, k, 1, 1)
        }),
        ("max_pool2d", vec![1, 4, 4, 2], |g, x| g.max_pool2d(x, 2, 2)),
        ("adaptive_avg_pool", vec![2, 5, 4, 2], |g, x| g.adaptive_avg_pool(x, 2, 3)),
        ("global_avg_pool", vec![2, 3, 3, 2], |g, x| g.global_avg_pool(x)),
        ("batch_norm_train", vec![5, 3], |g, x| {
            let gamma = g.constant(Tensor::from_f64(&[3], &[1.2, -0.4, 0.8]).unwrap());
            let beta = g.constant(Tensor::from_f64(&[3], &[0.0, 0.1, -0.1]).unwrap());
            let (y, _) = g.batch_norm(x, gamma, beta, BatchNormMode::Train)?;
            g.mul(y, y)
        }),
        ("batch_norm_gamma", vec![3], |gm, gamma| {
            let x = gm.constant(random_tensor(&[5, 3], 91));
            let beta = gm.constant(Tensor::zeros(&[3]));
            let (y, _) = gm.batch_norm(x, gamma, beta, BatchNormMode::Train)?;
            gm.mul(y, y)
        }),
        ("batch_norm_eval", vec![5, 3], |g, x| {
            let gamma = g.constant(Tensor::from_f64(&[3], &[1.2, -0.4, 0.8]).unwrap());
            let beta = g.constant(Tensor::zeros(&[3]));
            let (rm, rv) = ([0.1, -0.2, 0.0], [0.5, 2.0, 1.0]);
            let mode = BatchNormMode::Eval {
                running_mean: &rm,
                running_var: &rv,
            };
            Ok(g.batch_norm(x, gamma, beta, mode)?.0)
        }),
        ("reshape", vec![2, 6], |g, x| {
            let r = g.reshape(x, &[3, 4])?;
            g.mul(r, r)
        }),
        ("concat", vec![3, 2], |g, x| {
            let c = g.constant(random_tensor(&[3, 3], 90));
            let y = g.concat(&[c, x, x])?;
            g.mul(y, y)
        }),
        ("gather_rows", vec![4, 3], |g, x| {
            let y = g.gather_rows(x, &[3, 0, 3, 1])?;
            g.mul(y, y)
        }),
        ("softmax_cross_entropy", vec![4, 5], |g, x| {
            let s = g.scale(x, 3.0);
            g.softmax_cross_entropy(s, &[1, 0, 4, 4])
        }),
    ]
}
