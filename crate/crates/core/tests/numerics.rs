#[path = "support/ops.rs"]
mod ops;

use codial_core::numerics::{finite_diff_gradcheck, BatchNormMode, Graph, Tensor};
use codial_core::Error;
use ops::{differentiable_ops, random_tensor, weighted_sum};
use proptest::prelude::*;

/// Direct-sum convolution oracle, NHWC input and [KH,KW,Cin,Cout] kernel.
fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, co) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * oh * ow * co];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..co {
                    let mut s = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            for ci in 0..c {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x.data()[((b * h + iy as usize) * w + ix as usize) * c + ci];
                                let kv = k.data()[((ky * kw + kx) * c + ci) * co + o];
                                s += xv * kv;
                            }
                        }
                    }
                    out[((b * oh + oy) * ow + ox) * co + o] = s;
                }
            }
        }
    }
    out
}

#[test]
fn conv_identity_kernel_returns_input() {
    let x = random_tensor(&[2, 5, 4, 1], 1);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let k = g.constant(Tensor::from_f64(&[1, 1, 1, 1], &[1.0]).unwrap());
    let y = g.conv2d(xv, k, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), x.data());
}

#[test]
fn conv_averaging_kernel_keeps_constant_input() {
    let x = Tensor::<f64>::full(&[1, 6, 6, 2], 0.37);
    let mut g = Graph::new();
    let xv = g.constant(x);
    // each output channel sums to 1 over the 3×3×2 patch
    let k = g.constant(Tensor::full(&[3, 3, 2, 3], 1.0 / 18.0));
    let y = g.conv2d(xv, k, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 4, 4, 3]);
    for &v in g.value(y).data() {
        assert!((v - 0.37).abs() < 1e-12);
    }
}

#[test]
fn conv_matches_direct_sum_oracle() {
    let x = random_tensor(&[1, 3, 3, 1], 2);
    let k = random_tensor(&[2, 2, 1, 1], 3);
    let mut g = Graph::new();
    let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
    let y = g.conv2d(xv, kv, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 2, 2, 1]);
    for (a, b) in g.value(y).data().iter().zip(conv_oracle(&x, &k, 1, 0)) {
        assert!((a - b).abs() < 1e-12);
    }
    // strided, padded, multi-channel variant
    let x = random_tensor(&[2, 7, 6, 3], 4);
    let k = random_tensor(&[3, 3, 3, 4], 5);
    let mut g = Graph::new();
    let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
    let y = g.conv2d(xv, kv, 2, 1).unwrap();
    assert_eq!(g.shape(y), &[2, 4, 3, 4]);
    for (a, b) in g.value(y).data().iter().zip(conv_oracle(&x, &k, 2, 1)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv_shape_mismatch_names_both_shapes() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[1, 4, 4, 3]));
    let k = g.constant(Tensor::zeros(&[3, 3, 2, 8]));
    match g.conv2d(x, k, 1, 1) {
        Err(Error::Dimension { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![1, 4, 4, 3]);
            assert_eq!(rhs, vec![3, 3, 2, 8]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
    let k = g.constant(Tensor::zeros(&[7, 7, 3, 1]));
    assert!(matches!(g.conv2d(x, k, 1, 1), Err(Error::Dimension { .. })));
}

#[test]
fn dense_examples() {
    let x = random_tensor(&[3, 2], 6);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let eye = g.constant(Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
    let zero = g.constant(Tensor::zeros(&[2]));
    let y = g.dense(xv, eye, zero).unwrap();
    assert_eq!(g.value(y).data(), x.data());

    let zw = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap());
    let y = g.dense(xv, zw, b).unwrap();
    for r in 0..3 {
        assert_eq!(g.value(y).row(r), &[0.5, -1.0, 2.0]);
    }

    let a = random_tensor(&[2, 3], 7);
    let w = random_tensor(&[3, 2], 8);
    let bias = random_tensor(&[2], 9);
    let (av, wv, bv) = (g.constant(a.clone()), g.constant(w.clone()), g.constant(bias.clone()));
    let y = g.dense(av, wv, bv).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let mut s = bias.data()[j];
            for k in 0..3 {
                s += a.data()[i * 3 + k] * w.data()[k * 2 + j];
            }
            assert!((g.value(y).data()[i * 2 + j] - s).abs() < 1e-12);
        }
    }
    let bad = g.constant(Tensor::zeros(&[2, 2]));
    assert!(matches!(g.dense(av, bad, bv), Err(Error::Dimension { .. })));
}

#[test]
fn batch_norm_train_and_eval() {
    let x = random_tensor(&[16, 3], 10).map(|v| 3.0 * v + 1.5);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let gamma = g.constant(Tensor::full(&[3], 1.0));
    let beta = g.constant(Tensor::zeros(&[3]));
    let (y, stats) = g.batch_norm(xv, gamma, beta, BatchNormMode::Train).unwrap();
    assert!(stats.is_some());
    for c in 0..3 {
        let col: Vec<f64> = (0..16).map(|r| g.value(y).data()[r * 3 + c]).collect();
        let mean = col.iter().sum::<f64>() / 16.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-4);
        assert!((var - 1.0).abs() < 1e-4);
    }
    let (rm, rv) = ([0.0; 3], [1.0; 3]);
    let (y, stats) = g
        .batch_norm(
            xv,
            gamma,
            beta,
            BatchNormMode::Eval {
                running_mean: &rm,
                running_var: &rv,
            },
        )
        .unwrap();
    assert!(stats.is_none());
    for (a, b) in g.value(y).data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-4);
    }
    let one = g.constant(Tensor::zeros(&[1, 3]));
    assert_eq!(
        g.batch_norm(one, gamma, beta, BatchNormMode::Train).unwrap_err(),
        Error::DegenerateBatch
    );
}

#[test]
fn batch_norm_gradient_matches_finite_differences() {
    let x = random_tensor(&[6, 4], 11);
    let err = finite_diff_gradcheck(
        |g, x| {
            let gamma = g.constant(Tensor::from_f64(&[4], &[1.0, 0.5, -2.0, 1.5]).unwrap());
            let beta = g.constant(Tensor::from_f64(&[4], &[0.1, 0.0, 0.3, -0.2]).unwrap());
            let (y, _) = g.batch_norm(x, gamma, beta, BatchNormMode::Train)?;
            let sq = g.mul(y, y)?;
            let y3 = g.mul(sq, y)?;
            weighted_sum(g, y3, 12)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn cross_entropy_examples() {
    let mut g = Graph::<f64>::new();
    let uniform = g.constant(Tensor::full(&[3, 5], 0.7));
    let l = g.softmax_cross_entropy(uniform, &[0, 3, 4]).unwrap();
    assert!((g.value(l).item() - 5f64.ln()).abs() < 1e-12);

    let mut sat = vec![0.0; 5];
    sat[2] = 30.0;
    let s = g.constant(Tensor::from_f64(&[1, 5], &sat).unwrap());
    let l = g.softmax_cross_entropy(s, &[2]).unwrap();
    assert!(g.value(l).item() < 1e-9);

    let two = g.constant(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
    let l = g.softmax_cross_entropy(two, &[0]).unwrap();
    let expected = (1.0 + 1f64.exp()).ln();
    assert!((g.value(l).item() - expected).abs() < 1e-12);
    assert!((g.value(l).item() - 1.31326).abs() < 1e-5);

    assert_eq!(
        g.softmax_cross_entropy(two, &[2]).unwrap_err(),
        Error::Label { label: 2, classes: 2 }
    );
}

#[test]
fn cross_entropy_is_stable_for_huge_logits() {
    let mut g = Graph::<f32>::new();
    let l = g.constant(Tensor::from_f64(&[1, 3], &[1e4, -1e4, 0.0]).unwrap());
    let ce = g.softmax_cross_entropy(l, &[1]).unwrap();
    assert!(g.value(ce).item().is_finite());
}

#[test]
fn softplus_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_f64(&[3], &[0.0, 100.0, -3.0]).unwrap());
    let y = g.softplus(x);
    let v = g.value(y).data();
    assert!((v[0] - 2f64.ln()).abs() < 1e-12);
    assert!((v[1] - 100.0).abs() < 1e-6);
    assert!((v[2] - 0.048587).abs() < 1e-6);
    assert!((v[2] - (1.0 + (-3f64).exp()).ln()).abs() < 1e-15);
}

#[test]
fn backward_examples() {
    let p = random_tensor(&[4], 13);
    let mut g = Graph::new();
    let pv = g.leaf(p.clone(), true);
    let s = g.sum(pv);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(pv).unwrap(), &[1.0; 4]);

    let mut g = Graph::new();
    let pv = g.leaf(p.clone(), true);
    let sq = g.mul(pv, pv).unwrap();
    let s = g.sum(sq);
    let grads = g.backward(s).unwrap();
    for (d, v) in grads.wrt(pv).unwrap().iter().zip(p.data()) {
        assert!((d - 2.0 * v).abs() < 1e-15);
    }
    assert!(matches!(g.backward(sq), Err(Error::Rank(_))));
}

#[test]
fn gradcheck_examples() {
    let x = random_tensor(&[7], 14);
    let err = finite_diff_gradcheck(|g, x| Ok(g.sum(x)), &x, 1e-4).unwrap();
    assert!(err < 1e-8);
    let logits = random_tensor(&[4, 5], 15).map(|v| 3.0 * v);
    let err = finite_diff_gradcheck(|g, x| g.softmax_cross_entropy(x, &[0, 4, 2, 2]), &logits, 1e-4).unwrap();
    assert!(err < 1e-5, "ce {err}");
}

#[test]
fn every_differentiable_op_passes_gradcheck_at_ten_points() {
    for (name, shape, op) in differentiable_ops() {
        for point in 0..10u64 {
            let x = random_tensor(&shape, 1000 + point);
            let err = finite_diff_gradcheck(
                |g, x| {
                    let y = op(g, x)?;
                    weighted_sum(g, y, point)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{name} at point {point}: rel err {err}");
        }
    }
}

#[test]
fn forward_and_backward_are_bit_reproducible() {
    let run = || {
        let x = random_tensor(&[2, 6, 6, 3], 20).cast::<f32>();
        let k = random_tensor(&[3, 3, 3, 4], 21).cast::<f32>();
        let mut g = Graph::<f32>::new();
        let xv = g.leaf(x, true);
        let kv = g.leaf(k, true);
        let y = g.conv2d(xv, kv, 2, 1).unwrap();
        let y = g.relu(y);
        let p = g.global_avg_pool(y).unwrap();
        let l = g.softmax_cross_entropy(p, &[1, 3]).unwrap();
        let grads = g.backward(l).unwrap();
        (
            g.value(l).item().to_bits(),
            grads.wrt(kv).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            grads.wrt(xv).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softplus_is_monotone_and_odd_part_is_identity(x in -50.0f64..50.0, dx in 1e-6f64..5.0) {
        let mut g = Graph::<f64>::new();
        let v = g.constant(Tensor::from_f64(&[3], &[x, x + dx, -x]).unwrap());
        let s = g.softplus(v);
        let d = g.value(s).data();
        prop_assert!(d[1] > d[0]);
        prop_assert!((d[0] - d[2] - x).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_nonnegative_and_uniform_is_ln_k(
        logits in proptest::collection::vec(-20.0f64..20.0, 12),
        c in -5.0f64..5.0,
        k in 2usize..9,
    ) {
        let mut g = Graph::<f64>::new();
        let l = g.constant(Tensor::from_f64(&[3, 4], &logits).unwrap());
        let ce = g.softmax_cross_entropy(l, &[0, 1, 3]).unwrap();
        prop_assert!(g.value(ce).item() >= 0.0);
        let u = g.constant(Tensor::full(&[2, k], c));
        let ce = g.softmax_cross_entropy(u, &[0, k - 1]).unwrap();
        prop_assert!((g.value(ce).item() - (k as f64).ln()).abs() < 1e-12);
    }
}
