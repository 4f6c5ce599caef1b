//! Deterministic differentiable-computation backend.
//!
//! Values are recorded on a [`Graph`] (a Wengert tape) as operations run;
//! [`Graph::backward`] replays the tape in reverse. Everything is generic
//! over [`Scalar`], so the same model code runs in `f32` for training and
//! in `f64` for finite-difference checks.

mod gradcheck;
mod graph;
mod kernels;
mod optim;
mod param;
mod scalar;
mod tensor;

pub use gradcheck::{finite_diff_gradcheck, gradcheck_params, relative_error};
pub use graph::{BatchNormMode, BatchStats, Gradients, Graph, Var};
pub use kernels::{conv_output_size, gemm_acc, gemm_at_b_acc};
pub use optim::{Method, Optimizer, OptimizerConfig};
pub use param::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;
