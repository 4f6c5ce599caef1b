//! Objective terms: view classification, the Jensen-Shannon MI bound, the
//! symmetrized KL regularizer, the β ramp and the weighted total.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::models::GaussianRepr;
use crate::numerics::{Graph, Scalar, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaSchedule {
    pub start_value: f64,
    pub end_value: f64,
    pub start_epoch: usize,
    pub ramp_epochs: usize,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            start_value: 1e-6,
            end_value: 1.0,
            start_epoch: 10,
            ramp_epochs: 100,
        }
    }
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.start_value > 0.0 && self.start_value <= self.end_value && self.end_value.is_finite()) {
            return Err(config_err("beta schedule needs 0 < start_value <= end_value"));
        }
        Ok(())
    }
}

/// β for `epoch`: flat before the ramp, geometric along it, flat after.
pub fn beta_at(schedule: &BetaSchedule, epoch: usize) -> f64 {
    let s = schedule;
    if epoch <= s.start_epoch {
        return s.start_value;
    }
    if epoch >= s.start_epoch + s.ramp_epochs {
        return s.end_value;
    }
    let t = (epoch - s.start_epoch) as f64 / s.ramp_epochs as f64;
    s.start_value * Float::powf(s.end_value / s.start_value, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_mi: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_mi: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cls >= 0.0 && self.lambda_mi >= 0.0) || !(self.lambda_cls + self.lambda_mi).is_finite() {
            return Err(config_err("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Mean cross-entropy over every view of every image.
pub fn cls_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    g.softmax_cross_entropy(logits, labels)
}

/// Critic output on positive and negative pairs, reduced two ways.
#[derive(Debug, Clone, Copy)]
pub struct MiEstimate<T> {
    /// `E_pos[−softplus(−C)] − E_neg[softplus(C)]`, the differentiable
    /// training objective. Equals `2·JSD − 2 ln 2`.
    pub objective: Var,
    /// `E_pos[C] − E_neg[exp C] + 1`: a lower bound on MI in nats that is
    /// tight when `C` is the log density ratio, which is what the JS
    /// objective drives the critic towards.
    pub nats: T,
}

/// Scores positive pairs and negative pairs with `critic` and forms the
/// Jensen-Shannon estimate. Pairs are row-aligned `[rows, D]` matrices.
pub fn js_mi_lower_bound<T, F>(g: &mut Graph<T>, mut critic: F, pos: (Var, Var), neg: (Var, Var)) -> Result<MiEstimate<T>>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, Var, Var) -> Result<Var>,
{
    if g.shape(neg.0).first().copied().unwrap_or(0) == 0 {
        return Err(Error::NoNegatives("js_mi_lower_bound"));
    }
    if g.shape(pos.0).first().copied().unwrap_or(0) == 0 {
        return Err(Error::DegenerateBatch);
    }
    let cp = critic(g, pos.0, pos.1)?;
    let cn = critic(g, neg.0, neg.1)?;
    js_from_scores(g, cp, cn)
}

/// The estimate from precomputed critic scores.
pub fn js_from_scores<T: Scalar>(g: &mut Graph<T>, pos_scores: Var, neg_scores: Var) -> Result<MiEstimate<T>> {
    if g.value(neg_scores).is_empty() {
        return Err(Error::NoNegatives("js_from_scores"));
    }
    if g.value(pos_scores).is_empty() {
        return Err(Error::DegenerateBatch);
    }
    let np = g.neg(pos_scores);
    let sp = g.softplus(np);
    let pos_term = g.mean(sp);
    let sn = g.softplus(neg_scores);
    let neg_term = g.mean(sn);
    let objective = {
        let p = g.neg(pos_term);
        g.sub(p, neg_term)?
    };
    let mean = |v: &[T]| v.iter().fold(T::zero(), |a, &b| a + b) / T::lit(v.len() as f64);
    let pos_mean = mean(g.value(pos_scores).data());
    let exps: alloc::vec::Vec<T> = g.value(neg_scores).data().iter().map(|&c| Float::exp(c)).collect();
    let nats = pos_mean - mean(&exps) + T::one();
    Ok(MiEstimate { objective, nats })
}

/// `½ KL(p‖q) + ½ KL(q‖p)` between diagonal Gaussians, summed over
/// coordinates and averaged over rows.
pub fn mib_regularizer<T: Scalar>(g: &mut Graph<T>, p: &GaussianRepr, q: &GaussianRepr) -> Result<Var> {
    for (a, b) in [(p.mean, q.mean), (p.logvar, q.logvar), (p.mean, p.logvar)] {
        if g.shape(a) != g.shape(b) {
            return Err(Error::Dimension {
                op: "mib_regularizer",
                lhs: g.shape(a).to_vec(),
                rhs: g.shape(b).to_vec(),
            });
        }
    }
    // The log terms cancel, leaving per coordinate
    // ¼[e^(a−b) + e^(b−a) + Δμ²(e^−a + e^−b)] − ½ with a, b the log-variances.
    let d_lv = g.sub(p.logvar, q.logvar)?;
    let r1 = g.exp(d_lv);
    let nd = g.neg(d_lv);
    let r2 = g.exp(nd);
    let ratio = g.add(r1, r2)?;
    let dm = g.sub(p.mean, q.mean)?;
    let dm2 = g.mul(dm, dm)?;
    let na = g.neg(p.logvar);
    let ia = g.exp(na);
    let nb = g.neg(q.logvar);
    let ib = g.exp(nb);
    let inv = g.add(ia, ib)?;
    let quad = g.mul(dm2, inv)?;
    let s = g.add(ratio, quad)?;
    let s = g.scale(s, T::lit(0.25));
    let per = g.add_scalar(s, T::lit(-0.5));
    let rows = g.sum_last(per)?;
    Ok(g.mean(rows))
}

/// `−mi + β·reg`, both already averaged over the sampled pairs.
pub fn mi_loss<T: Scalar>(g: &mut Graph<T>, mi_estimate: Var, reg: Var, beta: f64) -> Result<Var> {
    let r = g.scale(reg, T::lit(beta));
    g.sub(r, mi_estimate)
}

/// `λ_cls·cls + λ_mi·mi`; a missing MI term counts as zero.
pub fn total_loss<T: Scalar>(g: &mut Graph<T>, cls: Var, mi: Option<Var>, w: &LossWeights) -> Result<Var> {
    let c = g.scale(cls, T::lit(w.lambda_cls));
    match mi {
        Some(m) => {
            let m = g.scale(m, T::lit(w.lambda_mi));
            g.add(c, m)
        }
        None => Ok(c),
    }
}
