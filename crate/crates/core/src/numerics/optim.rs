use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Scalar};
use crate::error::{config_err, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    SgdMomentum { momentum: f64 },
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::Adam,
            learning_rate: 3e-4,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(config_err("learning rate must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(config_err("weight decay must be nonnegative"));
        }
        if let Method::SgdMomentum { momentum } = self.method {
            if !(0.0..1.0).contains(&momentum) {
                return Err(config_err("momentum must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// In-place first-order optimizer over the trainable entries of a
/// [`ParamStore`]. `first` holds momentum / Adam first moments, `second`
/// the Adam second moments; both are indexed like the store.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    pub config: OptimizerConfig,
    pub steps: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, store: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let zeros = || store.iter().map(|(_, p)| vec![T::zero(); p.value.len()]).collect();
        Ok(Self {
            config,
            steps: 0,
            first: zeros(),
            second: zeros(),
        })
    }

    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.steps += 1;
        let lr = T::lit(self.config.learning_rate);
        let wd = T::lit(self.config.weight_decay);
        let t = self.steps as i32;
        for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if !p.trainable {
                continue;
            }
            let grads = p.grad.data();
            let values = p.value.data_mut();
            match self.config.method {
                Method::SgdMomentum { momentum } => {
                    let mu = T::lit(momentum);
                    for ((w, &g), mi) in values.iter_mut().zip(grads).zip(m.iter_mut()) {
                        let g = g + wd * *w;
                        *mi = mu * *mi + g;
                        *w -= lr * *mi;
                    }
                }
                Method::Adam => {
                    let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
                    let c1 = T::one() - b1.powi(t);
                    let c2 = T::one() - b2.powi(t);
                    let eps = T::lit(ADAM_EPS);
                    for (((w, &g), mi), vi) in values.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let g = g + wd * *w;
                        *mi = b1 * *mi + (T::one() - b1) * g;
                        *vi = b2 * *vi + (T::one() - b2) * g * g;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
