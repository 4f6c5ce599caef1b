//! Encoder trunk, transformation classifier, stochastic projection head and
//! the pair critic. All heads read the same encoder parameters.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::numerics::{BatchNormMode, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::transforms::{images_to_tensor, Image, NUM_CLASSES};
use crate::{Purpose, RngStream};

const BN_MOMENTUM: f64 = 0.1;
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub stages: Vec<ConvStage>,
    /// Length of the pooled feature vector; equals the last stage's width.
    pub feature_dim: usize,
    pub input_size: usize,
    pub in_channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            stages: [32, 64, 128, 256]
                .into_iter()
                .map(|c| ConvStage {
                    out_channels: c,
                    kernel: 3,
                    stride: 2,
                })
                .collect(),
            feature_dim: 256,
            input_size: 64,
            in_channels: 3,
        }
    }
}

impl EncoderConfig {
    /// Encoder of `widths.len()` stride-2 3×3 stages.
    pub fn with_widths(widths: &[usize], input_size: usize) -> Self {
        Self {
            stages: widths
                .iter()
                .map(|&c| ConvStage {
                    out_channels: c,
                    kernel: 3,
                    stride: 2,
                })
                .collect(),
            feature_dim: *widths.last().unwrap_or(&0),
            input_size,
            in_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let last = self
            .stages
            .last()
            .ok_or_else(|| config_err("encoder needs at least one conv stage"))?;
        if last.out_channels != self.feature_dim {
            return Err(config_err(format!(
                "feature_dim {} must equal the last stage width {}",
                self.feature_dim, last.out_channels
            )));
        }
        if !(self.in_channels == 1 || self.in_channels == 3) {
            return Err(config_err("in_channels must be 1 or 3"));
        }
        let mut size = self.input_size;
        for (i, s) in self.stages.iter().enumerate() {
            if s.out_channels == 0 || s.kernel == 0 || s.stride == 0 {
                return Err(config_err(format!("stage {i} has a zero extent")));
            }
            size = crate::numerics::conv_output_size(size, s.kernel, s.stride, s.kernel / 2)
                .filter(|&o| o > 0)
                .ok_or_else(|| config_err(format!("stage {i} does not fit a {size}px input")))?;
        }
        Ok(())
    }

    /// Spatial side length after each stage.
    pub fn stage_sizes(&self) -> Vec<usize> {
        let mut size = self.input_size;
        self.stages
            .iter()
            .map(|s| {
                size = crate::numerics::conv_output_size(size, s.kernel, s.stride, s.kernel / 2).unwrap_or(0);
                size
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub hidden: Vec<usize>,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self { hidden: vec![256, 256] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Dimension `D` of the stochastic representation.
    pub repr_dim: usize,
    pub critic: CriticConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            repr_dim: 64,
            critic: CriticConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.repr_dim == 0 || self.critic.hidden.iter().any(|&h| h == 0) {
            return Err(config_err("repr_dim and critic widths must be positive"));
        }
        Ok(())
    }
}

/// Train mode normalizes with batch statistics and updates running
/// statistics; eval mode is a pure function of the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub(crate) fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        let bound = 1.0 / Float::sqrt(fan_in as f64);
        let mut uniform = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w = uniform(fan_in * fan_out);
        let b = uniform(fan_out);
        Self {
            weight: store.add(format!("{name}.weight"), Tensor::from_f64(&[fan_in, fan_out], &w).expect("sized")),
            bias: store.add(format!("{name}.bias"), Tensor::from_f64(&[fan_out], &b).expect("sized")),
        }
    }

    pub(crate) fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.dense(x, w, b)
    }
}

/// Dense layers with ReLU between them and a linear last layer.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub(crate) fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, widths: &[usize], rng: &mut RngStream) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.layer{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub(crate) fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            if i < last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvBlock {
    kernel: ParamId,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    stride: usize,
    pad: usize,
}

impl ConvBlock {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, stage: &ConvStage, rng: &mut RngStream) -> Self {
        let (k, cout) = (stage.kernel, stage.out_channels);
        let std = Float::sqrt(2.0 / (k * k * cin) as f64);
        let w: Vec<f64> = (0..k * k * cin * cout)
            .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect();
        Self {
            kernel: store.add(format!("{name}.kernel"), Tensor::from_f64(&[k, k, cin, cout], &w).expect("sized")),
            gamma: store.add(format!("{name}.bn.gamma"), Tensor::full(&[cout], T::one())),
            beta: store.add(format!("{name}.bn.beta"), Tensor::zeros(&[cout])),
            running_mean: store.add_buffer(format!("{name}.bn.running_mean"), Tensor::zeros(&[cout])),
            running_var: store.add_buffer(format!("{name}.bn.running_var"), Tensor::full(&[cout], T::one())),
            stride: stage.stride,
            pad: k / 2,
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        if mode == Mode::Eval {
            return self.forward_eval(g, store, x);
        }
        let k = g.param(store, self.kernel);
        let y = g.conv2d(x, k, self.stride, self.pad)?;
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let (y, stats) = g.batch_norm(y, gamma, beta, BatchNormMode::Train)?;
        let stats = stats.expect("train mode returns statistics");
        let m = T::lit(BN_MOMENTUM);
        let keep = T::one() - m;
        for (r, &s) in store.get_mut(self.running_mean).value.data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * s;
        }
        for (r, &s) in store.get_mut(self.running_var).value.data_mut().iter_mut().zip(&stats.var) {
            *r = keep * *r + m * s;
        }
        Ok(g.relu(y))
    }

    fn forward_eval<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let k = g.param(store, self.kernel);
        let y = g.conv2d(x, k, self.stride, self.pad)?;
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let mode = BatchNormMode::Eval {
            running_mean: store.value(self.running_mean).data(),
            running_var: store.value(self.running_var).data(),
        };
        let y = g.batch_norm(y, gamma, beta, mode)?.0;
        Ok(g.relu(y))
    }
}

/// Per-stage activation maps and the globally pooled feature vectors.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub stages: Vec<Var>,
    pub features: Var,
}

/// Mean and clamped log-variance of a diagonal Gaussian per row.
#[derive(Debug, Clone, Copy)]
pub struct GaussianRepr {
    pub mean: Var,
    pub logvar: Var,
}

/// `mean + exp(½·logvar) · ε` with `ε ~ N(0, I)` drawn from `rng`. The
/// noise is a constant, so gradients reach only mean and log-variance.
pub fn reparam_sample<T: Scalar>(g: &mut Graph<T>, repr: &GaussianRepr, rng: &mut impl Rng) -> Result<Var> {
    let n = g.value(repr.mean).len();
    let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    reparam_with_noise(g, repr, &eps)
}

/// The same with caller-supplied standard-normal noise, row-major.
pub fn reparam_with_noise<T: Scalar>(g: &mut Graph<T>, repr: &GaussianRepr, eps: &[f64]) -> Result<Var> {
    let shape = g.shape(repr.mean).to_vec();
    if shape != g.shape(repr.logvar) || eps.len() != g.value(repr.mean).len() {
        return Err(Error::Dimension {
            op: "reparam_sample",
            lhs: shape,
            rhs: g.shape(repr.logvar).to_vec(),
        });
    }
    let eps = g.constant(Tensor::from_f64(&shape, eps)?);
    let half = g.scale(repr.logvar, T::lit(0.5));
    let std = g.exp(half);
    let noise = g.mul(std, eps)?;
    g.add(repr.mean, noise)
}

/// The full model: encoder, classifier over the primary classes,
/// stochastic head and critic, with one parameter store.
#[derive(Debug, Clone)]
pub struct Codial<T> {
    config: ModelConfig,
    pub store: ParamStore<T>,
    blocks: Vec<ConvBlock>,
    classifier: Linear,
    head_mean: Linear,
    head_logvar: Linear,
    critic: Mlp,
}

impl<T: Scalar> Codial<T> {
    /// Builds and initializes every parameter from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStream::new(seed, 0, 0, Purpose::Init);
        let mut store = ParamStore::new();
        let enc = &config.encoder;
        let mut cin = enc.in_channels;
        let mut blocks = Vec::with_capacity(enc.stages.len());
        for (i, stage) in enc.stages.iter().enumerate() {
            blocks.push(ConvBlock::new(&mut store, &format!("encoder.stage{i}"), cin, stage, &mut rng));
            cin = stage.out_channels;
        }
        let f = enc.feature_dim;
        let d = config.repr_dim;
        let classifier = Linear::new(&mut store, "classifier", f, NUM_CLASSES, &mut rng);
        let head_mean = Linear::new(&mut store, "head.mean", f, d, &mut rng);
        let head_logvar = Linear::new(&mut store, "head.logvar", f, d, &mut rng);
        let mut widths = vec![2 * d];
        widths.extend_from_slice(&config.critic.hidden);
        widths.push(1);
        let critic = Mlp::new(&mut store, "critic", &widths, &mut rng);
        Ok(Self {
            config,
            store,
            blocks,
            classifier,
            head_mean,
            head_logvar,
            critic,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Replaces every parameter value with the matching entry of `values`
    /// (same names and shapes required).
    pub fn load_values(&mut self, values: &[(String, Tensor<T>)]) -> Result<()> {
        if values.len() != self.store.len() {
            return Err(config_err(format!(
                "expected {} parameters, got {}",
                self.store.len(),
                values.len()
            )));
        }
        for ((name, v), p) in values.iter().zip(self.store.iter_mut()) {
            if *name != p.name || v.shape() != p.value.shape() {
                return Err(config_err(format!("parameter {name} does not match {}", p.name)));
            }
            p.value = v.clone();
        }
        Ok(())
    }

    /// Same model with every value converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Codial<U> {
        Codial {
            config: self.config.clone(),
            store: self.store.cast(),
            blocks: self.blocks.clone(),
            classifier: self.classifier,
            head_mean: self.head_mean,
            head_logvar: self.head_logvar,
            critic: self.critic.clone(),
        }
    }

    pub fn num_stages(&self) -> usize {
        self.blocks.len()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let e = &self.config.encoder;
        let want = [e.input_size, e.input_size, e.in_channels];
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::Dimension {
                op: "encode",
                lhs: shape.to_vec(),
                rhs: want.to_vec(),
            });
        }
        Ok(())
    }

    /// Runs the encoder on an NHWC batch recorded on `g`.
    pub fn encode(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<EncoderOutput> {
        self.check_input(g.shape(x))?;
        if mode == Mode::Eval {
            return self.encode_eval(g, x, self.blocks.len());
        }
        let mut h = x;
        let mut stages = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            h = block.forward(g, &mut self.store, h, mode)?;
            stages.push(h);
        }
        let features = g.global_avg_pool(h)?;
        Ok(EncoderOutput { stages, features })
    }

    /// Eval-mode encoder through the first `upto` stages; `features` pools
    /// the last stage run.
    pub fn encode_eval(&self, g: &mut Graph<T>, x: Var, upto: usize) -> Result<EncoderOutput> {
        self.check_input(g.shape(x))?;
        if upto == 0 || upto > self.blocks.len() {
            return Err(config_err(format!("stage count {upto} outside 1..={}", self.blocks.len())));
        }
        let mut h = x;
        let mut stages = Vec::with_capacity(upto);
        for block in &self.blocks[..upto] {
            h = block.forward_eval(g, &self.store, h)?;
            stages.push(h);
        }
        let features = g.global_avg_pool(h)?;
        Ok(EncoderOutput { stages, features })
    }

    /// Eval-mode encoding of images, returning stage maps and features as
    /// plain tensors.
    pub fn encode_images(&self, images: &[Image]) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        let x = images_to_tensor::<T>(images)?;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let out = self.encode_eval(&mut g, xv, self.blocks.len())?;
        let stages = out.stages.iter().map(|&s| g.value(s).clone()).collect();
        Ok((stages, g.value(out.features).clone()))
    }

    /// Logits over the primary transformation classes, one row per view.
    pub fn classify(&self, g: &mut Graph<T>, features: Var) -> Result<Var> {
        self.classifier.forward(g, &self.store, features)
    }

    pub fn project_stochastic(&self, g: &mut Graph<T>, features: Var) -> Result<GaussianRepr> {
        let mean = self.head_mean.forward(g, &self.store, features)?;
        let raw = self.head_logvar.forward(g, &self.store, features)?;
        let logvar = g.clamp(raw, T::lit(LOGVAR_MIN), T::lit(LOGVAR_MAX));
        Ok(GaussianRepr { mean, logvar })
    }

    /// Critic scores of row-aligned sample pairs, shape `[rows]`.
    pub fn critic_score(&self, g: &mut Graph<T>, z1: Var, z2: Var) -> Result<Var> {
        let d = self.config.repr_dim;
        for z in [z1, z2] {
            if g.shape(z).len() != 2 || g.shape(z)[1] != d {
                return Err(Error::Dimension {
                    op: "critic_score",
                    lhs: g.shape(z).to_vec(),
                    rhs: vec![d],
                });
            }
        }
        let h = g.concat(&[z1, z2])?;
        let h = self.critic.forward(g, &self.store, h)?;
        let rows = g.shape(h)[0];
        g.reshape(h, &[rows])
    }

    /// Parameters of the stochastic head and the critic.
    pub fn alignment_param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            self.head_mean.weight,
            self.head_mean.bias,
            self.head_logvar.weight,
            self.head_logvar.bias,
        ];
        ids.extend(self.critic.param_ids());
        ids
    }
}
