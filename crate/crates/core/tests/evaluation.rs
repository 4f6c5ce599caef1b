use codial_core::evaluation::*;
use codial_core::models::{Codial, CriticConfig, EncoderConfig, ModelConfig};
use codial_core::transforms::Image;
use codial_core::{Error, Purpose, RngStream, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn model() -> Codial<f32> {
    let cfg = ModelConfig {
        encoder: EncoderConfig::with_widths(&[4, 8], 16),
        repr_dim: 4,
        critic: CriticConfig { hidden: vec![4] },
    };
    Codial::new(cfg, 1).unwrap()
}

fn images(n: usize) -> Vec<Image> {
    let mut r = RngStream::new(3, 0, 0, Purpose::Custom(2));
    (0..n).map(|_| Image::from_fn(16, 16, 3, |_, _, _| r.random::<f32>())).collect()
}

#[test]
fn features_shape_identity_and_determinism() {
    let m = model();
    let imgs = images(70);
    // stage 0 is 8×8×4 = 256 values; asking for exactly that is no pooling
    let f = extract_features(&m, &imgs, 0, 256).unwrap();
    assert_eq!(f.shape(), &[70, 256]);
    let (stages, _) = m.encode_images(&imgs[..3]).unwrap();
    assert_eq!(f.row(2), &stages[0].data()[2 * 256..3 * 256]);
    let again = extract_features(&m, &imgs, 0, 256).unwrap();
    assert_eq!(f, again);
    // 4×4×8 stage 1 pooled into ≤ 40 values → 2×2×8
    let p = extract_features(&m, &imgs, 1, 40).unwrap();
    assert_eq!(p.shape(), &[70, 32]);
    assert!(matches!(extract_features(&m, &imgs, 2, 256), Err(Error::Config(_))));
    assert!(extract_features(&m, &imgs, 1, 7).is_err());
}

#[test]
fn pooled_side_rule() {
    assert_eq!(pooled_side(256, 4, 4, 1024).unwrap(), 2);
    assert_eq!(pooled_side(32, 32, 32, 1024).unwrap(), 5);
    assert_eq!(pooled_side(4, 2, 2, 1024).unwrap(), 2);
}

#[test]
fn pooling_preserves_region_means() {
    let m = model();
    let imgs = images(2);
    let (stages, _) = m.encode_images(&imgs).unwrap();
    // 4×4×8 → 2×2×8: each output averages a 2×2 block
    let p = extract_features(&m, &imgs, 1, 32).unwrap();
    let map = &stages[1];
    for b in 0..2 {
        for oy in 0..2 {
            for ox in 0..2 {
                for c in 0..8 {
                    let mut s = 0.0f64;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (y, x) = (oy * 2 + dy, ox * 2 + dx);
                            s += map.data()[((b * 4 + y) * 4 + x) * 8 + c] as f64;
                        }
                    }
                    let got = p.row(b)[(oy * 2 + ox) * 8 + c] as f64;
                    assert!((got - s / 4.0).abs() < 1e-6);
                }
            }
        }
    }
}

fn blobs(n: usize, seed: u64) -> (Tensor<f32>, Vec<usize>) {
    let mut r = RngStream::new(seed, 0, 0, Purpose::Custom(4));
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let c = i % 2;
        let centre = if c == 0 { -3.0 } else { 3.0 };
        let a: f64 = StandardNormal.sample(&mut r);
        let b: f64 = StandardNormal.sample(&mut r);
        x.push((centre + a * 0.5) as f32);
        x.push((b * 0.5) as f32);
        y.push(c);
    }
    (Tensor::new(vec![n, 2], x).unwrap(), y)
}

#[test]
fn probe_separable_blobs() {
    let (xtr, ytr) = blobs(200, 1);
    let (xte, yte) = blobs(100, 2);
    let cfg = ProbeConfig { pooled_dim: 2, ..ProbeConfig::default() };
    let r = linear_probe(&xtr, &ytr, &xte, &yte, &cfg).unwrap();
    assert!(r.test_acc >= 0.99, "{r:?}");
    assert!(r.train_acc >= 0.99);
}

#[test]
fn probe_shuffled_labels_is_chance() {
    let mut r = RngStream::new(5, 0, 0, Purpose::Custom(5));
    let n = 2000;
    let x = Tensor::from_fn(&[n, 8], |_| r.random::<f32>());
    let mut y: Vec<usize> = (0..n).map(|i| i % 4).collect();
    y.shuffle(&mut r);
    let (tr, te) = (1600, 400);
    let xtr = Tensor::new(vec![tr, 8], x.data()[..tr * 8].to_vec()).unwrap();
    let xte = Tensor::new(vec![te, 8], x.data()[tr * 8..].to_vec()).unwrap();
    let cfg = ProbeConfig { pooled_dim: 8, ..ProbeConfig::default() };
    let rep = linear_probe(&xtr, &y[..tr], &xte, &y[tr..], &cfg).unwrap();
    assert!((rep.test_acc - 0.25).abs() <= 0.05, "{rep:?}");
}

#[test]
fn probe_rejects_single_class() {
    let x = Tensor::from_fn(&[4, 2], |i| i as f32);
    let r = linear_probe(&x, &[1, 1, 1, 1], &x, &[1, 1, 1, 1], &ProbeConfig::default());
    assert!(matches!(r, Err(Error::DegenerateLabels(_))));
}

#[test]
fn probe_leaves_model_untouched() {
    let m = model();
    let before = m.store.clone();
    let imgs = images(20);
    let f = extract_features(&m, &imgs, 1, 128).unwrap();
    let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
    linear_probe(&f, &y, &f, &y, &ProbeConfig { epochs: 20, ..ProbeConfig::default() }).unwrap();
    assert_eq!(m.store, before);
}

#[test]
fn knn_examples() {
    let g = Tensor::from_f64(&[3, 2], &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0]).unwrap();
    assert_eq!(knn_retrieve(&[1.0, 0.1], &g, 3).unwrap(), vec![0, 1, 2]);
    let mut r = RngStream::new(6, 0, 0, Purpose::Custom(6));
    let gal = Tensor::from_fn(&[30, 5], |_| r.random::<f32>() - 0.5);
    let q = gal.row(17).to_vec();
    let top = knn_retrieve(&q, &gal, 30).unwrap();
    assert_eq!(top[0], 17);
    let q7: Vec<f32> = q.iter().map(|v| v * 7.0).collect();
    assert_eq!(knn_retrieve(&q7, &gal, 30).unwrap(), top);
    assert!(knn_retrieve(&q, &gal, 31).is_err());
}

#[test]
fn knn_ties_and_zero_vectors() {
    let g = Tensor::from_f64(&[4, 2], &[0.0, 0.0, 2.0, 0.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(knn_retrieve(&[1.0, 0.0], &g, 4).unwrap(), vec![1, 2, 0, 3]);
    assert_eq!(knn_retrieve(&[0.0, 0.0], &g, 4).unwrap(), vec![0, 1, 2, 3]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_ranking_invariant_to_row_scaling(
        vals in proptest::collection::vec(-1.0f32..1.0, 40),
        q in proptest::collection::vec(-1.0f32..1.0, 4),
        row in 0usize..10,
        scale in 0.01f32..100.0,
    ) {
        let g = Tensor::new(vec![10, 4], vals.clone()).unwrap();
        let mut scaled = vals;
        scaled[row * 4..row * 4 + 4].iter_mut().for_each(|v| *v *= scale);
        let gs = Tensor::new(vec![10, 4], scaled).unwrap();
        let a = knn_retrieve(&q, &g, 10).unwrap();
        let b = knn_retrieve(&q, &gs, 10).unwrap();
        // rankings agree up to floating ties of exactly equal similarity
        let sim = |t: &Tensor<f32>, i: usize| {
            let r = t.row(i);
            let d: f64 = r.iter().zip(&q).map(|(&x, &y)| x as f64 * y as f64).sum();
            let n: f64 = r.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()
                * q.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            if n == 0.0 { 0.0 } else { d / n }
        };
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(x == y || (sim(&g, *x) - sim(&g, *y)).abs() < 1e-9);
        }
    }
}
