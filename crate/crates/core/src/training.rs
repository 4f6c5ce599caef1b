//! The pretraining loop: views, pair sampling, loss assembly and one
//! optimizer step per batch, with per-epoch metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::losses::{beta_at, cls_loss, js_from_scores, mi_loss, mib_regularizer, total_loss, BetaSchedule, LossWeights};
use crate::models::{reparam_with_noise, Codial, GaussianRepr, Mode, ModelConfig};
use crate::numerics::{Graph, Optimizer, OptimizerConfig, Scalar, Var};
use crate::pairing::{draw_negatives, enumerate_pairs, sample_pair_subset};
use crate::transforms::{images_to_tensor, make_views, AuxConfig, Image, NUM_CLASSES};
use crate::{Purpose, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub weights: LossWeights,
    pub beta: BetaSchedule,
    pub aux: AuxConfig,
    pub model: ModelConfig,
    /// Number of view pairs sampled per image for the alignment term.
    pub pair_subset_k: usize,
    pub dataset: String,
    /// Held-out images used for pretext accuracy.
    pub test_dataset: String,
    pub output_dir: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            weights: LossWeights::default(),
            beta: BetaSchedule {
                start_epoch: 3,
                ramp_epochs: 10,
                ..BetaSchedule::default()
            },
            aux: AuxConfig::default(),
            model: ModelConfig::default(),
            pair_subset_k: 10,
            dataset: "data/shapes_train.cdld".into(),
            test_dataset: "data/shapes_test.cdld".into(),
            output_dir: "runs/pretrain".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(config_err("batch_size must be at least 2 so negatives exist"));
        }
        if self.epochs == 0 {
            return Err(config_err("epochs must be positive"));
        }
        let max_pairs = NUM_CLASSES * (NUM_CLASSES - 1) / 2;
        if self.pair_subset_k == 0 || self.pair_subset_k > max_pairs {
            return Err(config_err(format!("pair_subset_k must lie in 1..={max_pairs}")));
        }
        if self.aux.out_size != self.model.encoder.input_size {
            return Err(config_err(format!(
                "view size {} differs from encoder input size {}",
                self.aux.out_size, self.model.encoder.input_size
            )));
        }
        self.optimizer.validate()?;
        self.weights.validate()?;
        self.beta.validate()?;
        self.aux.validate()?;
        self.model.validate()
    }

    pub fn uses_mi(&self) -> bool {
        self.weights.lambda_mi > 0.0
    }
}

/// Everything random about one batch, drawn up front so the loss itself is
/// a deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    /// Views stacked image-major: row `b·K + v` is view `v` of image `b`.
    pub views: Vec<Image>,
    pub labels: Vec<usize>,
    /// Row pairs `(anchor, partner)` of the same image.
    pub positives: Vec<(usize, usize)>,
    /// One `(anchor, other-image view)` row pair per positive.
    pub negatives: Vec<(usize, usize)>,
    /// Standard-normal noise, `views.len() × repr_dim`, row-major.
    pub noise: Vec<f64>,
}

impl BatchPlan {
    /// Draws views, pairs, negatives and noise for `images`, whose dataset
    /// indices are `ids`. Each draw comes from a stream keyed by the image.
    pub fn draw(cfg: &TrainConfig, epoch: usize, images: &[&Image], ids: &[usize]) -> Result<Self> {
        let b = images.len();
        let k = NUM_CLASSES;
        let d = cfg.model.repr_dim;
        let seed = cfg.seed;
        let e = epoch as u64;
        let mut views = Vec::with_capacity(b * k);
        let mut labels = Vec::with_capacity(b * k);
        for (img, &id) in images.iter().zip(ids) {
            let mut rng = RngStream::new(seed, e, id as u64, Purpose::Views);
            for v in make_views(img, &cfg.aux, &mut rng) {
                labels.push(v.label.index());
                views.push(v.image);
            }
        }
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        let mut noise = Vec::new();
        if cfg.uses_mi() {
            if b < 2 {
                return Err(Error::NoNegatives("a batch of one image has no other image"));
            }
            let all = enumerate_pairs(k)?;
            for (i, &id) in ids.iter().enumerate() {
                let mut pr = RngStream::new(seed, e, id as u64, Purpose::Pairs);
                let subset = sample_pair_subset(&all, cfg.pair_subset_k, &mut pr)?;
                let mut nr = RngStream::new(seed, e, id as u64, Purpose::Negatives);
                let negs = draw_negatives(b, i, k, subset.len(), &mut nr)?;
                for (p, n) in subset.iter().zip(negs) {
                    let anchor = i * k + p.first();
                    positives.push((anchor, i * k + p.second()));
                    negatives.push((anchor, n.image * k + n.view));
                }
                let mut zr = RngStream::new(seed, e, id as u64, Purpose::Reparam);
                noise.extend((0..k * d).map(|_| -> f64 { StandardNormal.sample(&mut zr) }));
            }
        }
        Ok(Self {
            views,
            labels,
            positives,
            negatives,
            noise,
        })
    }
}

/// Graph handles of every loss term for one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms<T> {
    pub total: Var,
    pub cls: Var,
    pub logits: Var,
    pub mi: Option<MiTerms<T>>,
}

#[derive(Debug, Clone, Copy)]
pub struct MiTerms<T> {
    pub loss: Var,
    pub js_objective: Var,
    pub kl: Var,
    pub mi_nats: T,
}

/// Records the full weighted objective for `plan` on `g`. Train mode
/// updates batch-norm running statistics in `model`.
pub fn build_loss<T: Scalar>(
    g: &mut Graph<T>,
    model: &mut Codial<T>,
    plan: &BatchPlan,
    weights: &LossWeights,
    beta: f64,
    mode: Mode,
) -> Result<LossTerms<T>> {
    let x = g.constant(images_to_tensor::<T>(&plan.views)?);
    let enc = model.encode(g, x, mode)?;
    let logits = model.classify(g, enc.features)?;
    let cls = cls_loss(g, logits, &plan.labels)?;
    let mi = if weights.lambda_mi > 0.0 {
        let repr = model.project_stochastic(g, enc.features)?;
        let z = reparam_with_noise(g, &repr, &plan.noise)?;
        let (anchors, partners): (Vec<usize>, Vec<usize>) = plan.positives.iter().copied().unzip();
        let others: Vec<usize> = plan.negatives.iter().map(|&(_, o)| o).collect();
        let neg_anchors: Vec<usize> = plan.negatives.iter().map(|&(a, _)| a).collect();
        let za = g.gather_rows(z, &anchors)?;
        let zp = g.gather_rows(z, &partners)?;
        let zna = g.gather_rows(z, &neg_anchors)?;
        let zn = g.gather_rows(z, &others)?;
        let cp = model.critic_score(g, za, zp)?;
        let cn = model.critic_score(g, zna, zn)?;
        let js = js_from_scores(g, cp, cn)?;
        let p = GaussianRepr {
            mean: g.gather_rows(repr.mean, &anchors)?,
            logvar: g.gather_rows(repr.logvar, &anchors)?,
        };
        let q = GaussianRepr {
            mean: g.gather_rows(repr.mean, &partners)?,
            logvar: g.gather_rows(repr.logvar, &partners)?,
        };
        let kl = mib_regularizer(g, &p, &q)?;
        let loss = mi_loss(g, js.objective, kl, beta)?;
        Some(MiTerms {
            loss,
            js_objective: js.objective,
            kl,
            mi_nats: js.nats,
        })
    } else {
        None
    };
    let total = total_loss(g, cls, mi.map(|m| m.loss), weights)?;
    Ok(LossTerms { total, cls, logits, mi })
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Count of rows whose argmax matches the label.
pub fn correct_predictions<T: Scalar>(logits: &crate::Tensor<T>, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(r, &l)| argmax(logits.row(r)) == l)
        .count()
}

/// Per-epoch averages over batches. MI fields are absent when the
/// alignment term is disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_cls: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_mi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mi_estimate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_reg: Option<f64>,
    pub beta: f64,
    /// Transformation-classification accuracy on held-out views.
    pub pretext_acc: f64,
}

/// Owns the model and optimizer across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    model: Codial<f32>,
    optimizer: Optimizer<f32>,
    epoch: usize,
}

const EVAL_CHUNK: usize = 64;

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Codial::new(config.model.clone(), config.seed)?;
        let optimizer = Optimizer::new(config.optimizer, &model.store)?;
        Ok(Self {
            config,
            model,
            optimizer,
            epoch: 0,
        })
    }

    /// Continues from saved state; `epoch` is the number of epochs already
    /// completed.
    pub fn resume(config: TrainConfig, model: Codial<f32>, optimizer: Optimizer<f32>, epoch: usize) -> Result<Self> {
        config.validate()?;
        if *model.config() != config.model {
            return Err(config_err("checkpointed model differs from the configured model"));
        }
        if optimizer.first.len() != model.store.len() || optimizer.second.len() != model.store.len() {
            return Err(config_err("optimizer state does not match the parameters"));
        }
        Ok(Self {
            config,
            model,
            optimizer,
            epoch,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Codial<f32> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Codial<f32> {
        &mut self.model
    }

    pub fn optimizer(&self) -> &Optimizer<f32> {
        &self.optimizer
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Shuffled batches of dataset indices; a trailing batch of one image
    /// is dropped since it has no negatives.
    pub fn batches(&self, count: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut RngStream::new(self.config.seed, epoch as u64, 0, Purpose::Shuffle));
        order
            .chunks(self.config.batch_size)
            .filter(|c| c.len() >= 2)
            .map(|c| c.to_vec())
            .collect()
    }

    /// One pass over `train`, then pretext accuracy on `held_out`.
    pub fn run_epoch(&mut self, train: &[Image], held_out: &[Image]) -> Result<EpochMetrics> {
        let epoch = self.epoch;
        let beta = beta_at(&self.config.beta, epoch);
        let batches = self.batches(train.len(), epoch);
        if batches.is_empty() {
            return Err(Error::DegenerateBatch);
        }
        let mut sums = [0.0f64; 5];
        for (bi, ids) in batches.iter().enumerate() {
            let images: Vec<&Image> = ids.iter().map(|&i| &train[i]).collect();
            let plan = BatchPlan::draw(&self.config, epoch, &images, ids)?;
            let mut g = Graph::<f32>::new();
            let terms = build_loss(&mut g, &mut self.model, &plan, &self.config.weights, beta, Mode::Train)?;
            let total = g.value(terms.total).item();
            let cls = g.value(terms.cls).item();
            let mi_loss = terms.mi.map(|m| g.value(m.loss).item());
            if !(total.is_finite() && cls.is_finite()) {
                return Err(Error::NonFinite {
                    epoch,
                    batch: bi,
                    loss_cls: cls as f64,
                    loss_mi: mi_loss.map_or(0.0, f64::from),
                });
            }
            self.model.store.zero_grad();
            g.backward(terms.total)?.accumulate_into(&mut self.model.store);
            self.optimizer.step(&mut self.model.store);
            sums[0] += total as f64;
            sums[1] += cls as f64;
            if let Some(m) = terms.mi {
                sums[2] += g.value(m.loss).item() as f64;
                sums[3] += m.mi_nats as f64;
                sums[4] += g.value(m.kl).item() as f64;
            }
        }
        let n = batches.len() as f64;
        let pretext_acc = self.pretext_accuracy(held_out)?;
        let uses_mi = self.config.uses_mi();
        let mi = |v: f64| uses_mi.then_some(v / n);
        self.epoch += 1;
        Ok(EpochMetrics {
            epoch,
            loss_total: sums[0] / n,
            loss_cls: sums[1] / n,
            loss_mi: mi(sums[2]),
            mi_estimate: mi(sums[3]),
            kl_reg: mi(sums[4]),
            beta,
            pretext_acc,
        })
    }

    /// Eval-mode transformation accuracy over views of `images`, drawn
    /// from streams that do not depend on the epoch.
    pub fn pretext_accuracy(&mut self, images: &[Image]) -> Result<f64> {
        if images.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0;
        let mut total = 0;
        for (c, chunk) in images.chunks(EVAL_CHUNK).enumerate() {
            let mut views = Vec::with_capacity(chunk.len() * NUM_CLASSES);
            let mut labels = Vec::with_capacity(chunk.len() * NUM_CLASSES);
            for (i, img) in chunk.iter().enumerate() {
                let id = (c * EVAL_CHUNK + i) as u64;
                let mut rng = RngStream::new(self.config.seed, 0, id, Purpose::HeldOut);
                for v in make_views(img, &self.config.aux, &mut rng) {
                    labels.push(v.label.index());
                    views.push(v.image);
                }
            }
            let mut g = Graph::<f32>::new();
            let x = g.constant(images_to_tensor::<f32>(&views)?);
            let enc = self.model.encode(&mut g, x, Mode::Eval)?;
            let logits = self.model.classify(&mut g, enc.features)?;
            correct += correct_predictions(g.value(logits), &labels);
            total += labels.len();
        }
        Ok(correct as f64 / total as f64)
    }

    /// Runs the remaining epochs, handing each epoch's metrics to `on_epoch`.
    pub fn fit(
        &mut self,
        train: &[Image],
        held_out: &[Image],
        mut on_epoch: impl FnMut(&Trainer, &EpochMetrics) -> Result<()>,
    ) -> Result<Vec<EpochMetrics>> {
        let mut all = Vec::new();
        while !self.is_done() {
            let m = self.run_epoch(train, held_out)?;
            on_epoch(self, &m)?;
            all.push(m);
        }
        Ok(all)
    }
}
