//! Frozen-feature evaluation: per-stage pooled features, a linear probe
//! and cosine nearest neighbours.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::models::Codial;
use crate::numerics::{Graph, Tensor};
use crate::transforms::{images_to_tensor, Image};

const EXTRACT_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Zero-based encoder stage whose activations are probed.
    pub stage: usize,
    pub pooled_dim: usize,
    pub epochs: usize,
    pub l2: f64,
    /// Multiplier on the step `1/L`, `L` the gradient Lipschitz bound.
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            stage: 3,
            pooled_dim: 1024,
            epochs: 1000,
            l2: 1e-4,
            learning_rate: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub stage: usize,
    pub pooled_dim: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub epochs_run: usize,
    pub seed: u64,
}

/// Side length `s` of the pooled map: the largest with `channels·s² ≤
/// pooled_dim`, capped by the map itself.
pub fn pooled_side(channels: usize, height: usize, width: usize, pooled_dim: usize) -> Result<usize> {
    let mut s = 0;
    while s < height.min(width) && channels * (s + 1) * (s + 1) <= pooled_dim {
        s += 1;
    }
    if s == 0 {
        return Err(config_err(format!(
            "pooled_dim {pooled_dim} is smaller than the {channels} channels of the stage"
        )));
    }
    Ok(s)
}

/// Eval-mode activations of `stage`, adaptively average-pooled and
/// flattened, one row per image.
pub fn extract_features(model: &Codial<f32>, images: &[Image], stage: usize, pooled_dim: usize) -> Result<Tensor<f32>> {
    if stage >= model.num_stages() {
        return Err(config_err(format!(
            "stage {stage} invalid for an encoder of {} stages",
            model.num_stages()
        )));
    }
    let mut rows = Vec::new();
    let mut width = 0;
    for chunk in images.chunks(EXTRACT_CHUNK) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(images_to_tensor::<f32>(chunk)?);
        let out = model.encode_eval(&mut g, x, stage + 1)?;
        let map = out.stages[stage];
        let (h, w, c) = {
            let s = g.shape(map);
            (s[1], s[2], s[3])
        };
        let side = pooled_side(c, h, w, pooled_dim)?;
        let pooled = g.adaptive_avg_pool(map, side, side)?;
        width = c * side * side;
        rows.extend_from_slice(g.value(pooled).data());
    }
    Tensor::new(vec![images.len(), width], rows)
}

fn check_labels(labels: &[usize], rows: usize) -> Result<usize> {
    if labels.len() != rows {
        return Err(Error::Dimension {
            op: "linear_probe",
            lhs: vec![rows],
            rhs: vec![labels.len()],
        });
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let first = labels.first().copied();
    if labels.iter().all(|&l| Some(l) == first) {
        return Err(Error::DegenerateLabels(format!(
            "{} training rows carry a single class",
            labels.len()
        )));
    }
    Ok(classes)
}

/// Standardized copy of `x` with a trailing constant column for the bias,
/// using statistics from the training rows.
struct Standardizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &Tensor<f32>) -> Self {
        let (n, d) = x.rows_cols();
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, &v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v as f64 - m) * (v as f64 - m);
            }
        }
        let inv_std = var
            .iter()
            .map(|&s| {
                let sd = Float::sqrt(s / n as f64);
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    0.0
                }
            })
            .collect();
        Self { mean, inv_std }
    }

    fn apply(&self, x: &Tensor<f32>) -> (Vec<f64>, usize) {
        let (n, d) = x.rows_cols();
        let mut out = Vec::with_capacity(n * (d + 1));
        for r in 0..n {
            for ((&v, m), s) in x.row(r).iter().zip(&self.mean).zip(&self.inv_std) {
                out.push((v as f64 - m) * s);
            }
            out.push(1.0);
        }
        (out, d + 1)
    }
}

fn logits(x: &[f64], d: usize, w: &[f64], k: usize) -> Vec<f64> {
    let n = x.len() / d;
    let mut out = vec![0.0; n * k];
    crate::numerics::gemm_acc(x, w, &mut out, n, d, k);
    out
}

fn accuracy(x: &[f64], d: usize, w: &[f64], k: usize, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let z = logits(x, d, w, k);
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(r, &l)| {
            let row = &z[r * k..(r + 1) * k];
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best == l
        })
        .count();
    hits as f64 / labels.len() as f64
}

/// Objective gradient `Xᵀ(P − Y)/n + l2·W` (bias row unpenalized); returns
/// the gradient.
fn gradient(x: &[f64], d: usize, w: &[f64], k: usize, labels: &[usize], l2: f64) -> Vec<f64> {
    let n = labels.len();
    let mut p = logits(x, d, w, k);
    for (r, &l) in labels.iter().enumerate() {
        let row = &mut p[r * k..(r + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = Float::exp(*v - m);
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s * n as f64;
        }
        row[l] -= 1.0 / n as f64;
    }
    let mut grad = vec![0.0; d * k];
    crate::numerics::gemm_at_b_acc(x, &p, &mut grad, n, d, k);
    for (i, (gv, &wv)) in grad.iter_mut().zip(w).enumerate() {
        if i / k < d - 1 {
            *gv += l2 * wv;
        }
    }
    grad
}

/// Largest eigenvalue of `XᵀX/n` by power iteration.
fn top_eigenvalue(x: &[f64], d: usize) -> f64 {
    let n = x.len() / d;
    let mut v = vec![1.0 / Float::sqrt(d as f64); d];
    let mut lambda = 0.0;
    for _ in 0..50 {
        let mut xv = vec![0.0; n];
        crate::numerics::gemm_acc(x, &v, &mut xv, n, d, 1);
        let mut w = vec![0.0; d];
        crate::numerics::gemm_at_b_acc(x, &xv, &mut w, n, d, 1);
        let norm = Float::sqrt(w.iter().map(|a| a * a).sum::<f64>());
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm / n as f64;
        v = w.iter().map(|a| a / norm).collect();
    }
    lambda
}

/// Fits L2-regularized multinomial logistic regression on standardized
/// training features with accelerated full-batch gradient descent and
/// reports top-1 accuracy on both splits.
pub fn linear_probe(
    train_x: &Tensor<f32>,
    train_y: &[usize],
    test_x: &Tensor<f32>,
    test_y: &[usize],
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let classes = check_labels(train_y, train_x.rows_cols().0)?.max(test_y.iter().max().map_or(0, |&m| m + 1));
    if test_x.rows_cols().0 != test_y.len() || (test_x.rows_cols().1 != train_x.rows_cols().1 && !test_y.is_empty()) {
        return Err(Error::Dimension {
            op: "linear_probe",
            lhs: train_x.shape().to_vec(),
            rhs: test_x.shape().to_vec(),
        });
    }
    if cfg.pooled_dim < classes {
        return Err(config_err("pooled_dim must be at least the number of classes"));
    }
    let st = Standardizer::fit(train_x);
    let (xtr, d) = st.apply(train_x);
    let (xte, _) = st.apply(test_x);
    let k = classes;
    // softmax cross-entropy has Hessian bounded by ½·XᵀX/n
    let lipschitz = 0.5 * top_eigenvalue(&xtr, d) + cfg.l2;
    let step = cfg.learning_rate / lipschitz.max(1e-12);
    let mut w = vec![0.0; d * k];
    let mut prev = w.clone();
    let mut epochs_run = 0;
    for t in 0..cfg.epochs {
        let momentum = t as f64 / (t as f64 + 3.0);
        let look: Vec<f64> = w.iter().zip(&prev).map(|(&a, &b)| a + momentum * (a - b)).collect();
        let grad = gradient(&xtr, d, &look, k, train_y, cfg.l2);
        epochs_run = t + 1;
        let gnorm = Float::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
        prev = core::mem::replace(&mut w, look.iter().zip(&grad).map(|(&a, &g)| a - step * g).collect());
        if gnorm < 1e-5 {
            break;
        }
    }
    Ok(ProbeReport {
        stage: cfg.stage,
        pooled_dim: cfg.pooled_dim,
        train_acc: accuracy(&xtr, d, &w, k, train_y),
        test_acc: accuracy(&xte, d, &w, k, test_y),
        epochs_run,
        seed: cfg.seed,
    })
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (Float::sqrt(aa) * Float::sqrt(bb))
    }
}

/// Indices of the `k` gallery rows most cosine-similar to `query`, most
/// similar first, ties by ascending index. Zero vectors have similarity 0.
pub fn knn_retrieve(query: &[f32], gallery: &Tensor<f32>, k: usize) -> Result<Vec<usize>> {
    let (n, d) = gallery.rows_cols();
    if n == 0 || gallery.is_empty() {
        return Err(config_err("gallery is empty"));
    }
    if k > n {
        return Err(config_err(format!("k = {k} exceeds gallery size {n}")));
    }
    if query.len() != d {
        return Err(Error::Dimension {
            op: "knn_retrieve",
            lhs: vec![query.len()],
            rhs: vec![d],
        });
    }
    let sims: Vec<f64> = (0..n).map(|r| cosine(query, gallery.row(r))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}
