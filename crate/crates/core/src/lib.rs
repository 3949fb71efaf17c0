//! Hybrid two-backbone image classifier at toy scale.
//!
//! * [`tensor`] and [`autograd`]: `f32` tensors with reverse-mode differentiation;
//!   [`gradcheck`] compares it against central differences.
//! * [`nn`]: inception-module and dense-block backbones with sigmoid heads.
//! * [`optim`], [`train`], [`checkpoint`]: Adam, the training loop and weight files.
//! * [`data`]: manifests, PGM/PPM/raw-tensor decoding, preprocessing and splitting.
//! * [`fusion`]: weighted-sum score fusion and the class decision.
//! * [`metrics`]: confusion counts, derived rates, ROC and AUC.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod fusion;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

pub use autograd::{Activation, Gradients, Graph, Var};
pub use tensor::{Tensor, TensorError};
