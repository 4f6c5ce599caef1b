//! Self-supervised feature learning by jointly predicting image
//! transformations and aligning views through a mutual-information bound.
//!
//! The crate is `no_std` (it needs `alloc`). It carries the whole
//! algorithmic side of the method:
//!
//! - [`numerics`]: dense tensors, a reverse-mode tape, optimizers.
//! - [`transforms`]: quarter-turn rotations, control-point warps and the
//!   auxiliary augmentations that produce the labeled views.
//! - [`pairing`]: view-pair enumeration, subset sampling, negatives.
//! - [`models`]: encoder trunk, transformation classifier, stochastic
//!   projection head and critic.
//! - [`losses`]: classification loss, Jensen-Shannon MI bound, symmetrized
//!   KL bottleneck regularizer, the β ramp and the combined objective.
//! - [`training`]: the pretraining loop, deterministic per-sample streams.
//! - [`evaluation`]: frozen-feature extraction, linear probes, retrieval.
//!
//! File formats, datasets and the command-line tool live in the companion
//! `codial-cli` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod evaluation;
pub mod gaussian_mi;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod pairing;
pub mod rng;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
pub use numerics::{Graph, ParamStore, Scalar, Tensor, Var};
pub use rng::{Purpose, RngStream};
