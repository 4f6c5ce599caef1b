//! Correlated-Gaussian check for the MI estimator: train a critic on pairs
//! with known mutual information and compare the estimate with the truth.

use alloc::vec::Vec;

use num_traits::Float;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::losses::js_from_scores;
use crate::models::Mlp;
use crate::numerics::{Graph, Method, Optimizer, OptimizerConfig, ParamStore, Tensor, Var};
use crate::{Purpose, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianMiConfig {
    pub rho: f64,
    /// Number of independent coordinate pairs; true MI scales with it.
    pub dim: usize,
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for GaussianMiConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            dim: 1,
            hidden: alloc::vec![64, 64],
            steps: 2000,
            batch: 256,
            learning_rate: 1e-3,
            eval_samples: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMiReport {
    pub rho: f64,
    pub true_mi: f64,
    /// Held-out MI estimate in nats.
    pub estimate: f64,
    /// Held-out value of the JS training objective.
    pub js_objective: f64,
}

/// `−½·dim·ln(1 − ρ²)`.
pub fn gaussian_mi(rho: f64, dim: usize) -> f64 {
    -0.5 * dim as f64 * Float::ln(1.0 - rho * rho)
}

/// `rows` pairs `(x, y)` with unit variances and per-coordinate correlation
/// `rho`, plus a second independent `y'` for negatives.
fn sample(rows: usize, dim: usize, rho: f64, rng: &mut RngStream) -> [Tensor<f32>; 3] {
    let s = Float::sqrt(1.0 - rho * rho);
    let n = rows * dim;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y2 = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        let c: f64 = StandardNormal.sample(rng);
        x.push(a as f32);
        y.push((rho * a + s * b) as f32);
        y2.push(c as f32);
    }
    let t = |v| Tensor::new(alloc::vec![rows, dim], v).expect("sized");
    [t(x), t(y), t(y2)]
}

fn scores(g: &mut Graph<f32>, critic: &Mlp, store: &ParamStore<f32>, x: Var, y: Var) -> Result<Var> {
    let h = g.concat(&[x, y])?;
    let c = critic.forward(g, store, h)?;
    let rows = g.shape(c)[0];
    g.reshape(c, &[rows])
}

/// Trains a concat critic on fresh batches with the JS objective, then
/// evaluates both reductions on a held-out sample.
pub fn run_gaussian_mi(cfg: &GaussianMiConfig) -> Result<GaussianMiReport> {
    if !(cfg.rho > -1.0 && cfg.rho < 1.0) || cfg.dim == 0 || cfg.batch < 2 || cfg.eval_samples == 0 {
        return Err(config_err("rho must lie in (-1, 1) and sizes must be positive"));
    }
    let mut init = RngStream::new(cfg.seed, 0, 0, Purpose::Init);
    let mut store = ParamStore::<f32>::new();
    let mut widths = alloc::vec![2 * cfg.dim];
    widths.extend_from_slice(&cfg.hidden);
    widths.push(1);
    let critic = Mlp::new(&mut store, "critic", &widths, &mut init);
    let mut opt = Optimizer::new(
        OptimizerConfig {
            method: Method::Adam,
            learning_rate: cfg.learning_rate,
            weight_decay: 0.0,
        },
        &store,
    )?;
    let mut data = RngStream::new(cfg.seed, 0, 0, Purpose::Data);
    for _ in 0..cfg.steps {
        let [x, y, y2] = sample(cfg.batch, cfg.dim, cfg.rho, &mut data);
        let mut g = Graph::new();
        let (x, y, y2) = (g.constant(x), g.constant(y), g.constant(y2));
        let cp = scores(&mut g, &critic, &store, x, y)?;
        let cn = scores(&mut g, &critic, &store, x, y2)?;
        let est = js_from_scores(&mut g, cp, cn)?;
        let loss = g.neg(est.objective);
        store.zero_grad();
        g.backward(loss)?.accumulate_into(&mut store);
        opt.step(&mut store);
    }
    let mut held = RngStream::new(cfg.seed, 0, 0, Purpose::HeldOut);
    let [x, y, y2] = sample(cfg.eval_samples, cfg.dim, cfg.rho, &mut held);
    let mut g = Graph::new();
    let (x, y, y2) = (g.constant(x), g.constant(y), g.constant(y2));
    let cp = scores(&mut g, &critic, &store, x, y)?;
    let cn = scores(&mut g, &critic, &store, x, y2)?;
    let est = js_from_scores(&mut g, cp, cn)?;
    Ok(GaussianMiReport {
        rho: cfg.rho,
        true_mi: gaussian_mi(cfg.rho, cfg.dim),
        estimate: est.nats as f64,
        js_objective: g.value(est.objective).item() as f64,
    })
}
