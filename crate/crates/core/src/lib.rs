//! Semantic guidance for image enhancement networks.
//!
//! Patch and text embeddings are turned into a spatial relevance map, which
//! steers a small encoder-decoder through guided cross-attention and an
//! explicit feature alignment loss.
//!
//! Everything numeric is generic over [`Scalar`]; `f32` is used for training
//! and `f64` for gradient checks. The aliases below name the common choices.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod gradsuite;
pub mod guidance;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod scalar;
pub mod train;

pub use diffcore::{Gradients, Tape, Tensor, Var};
pub use error::{Error, Result};
pub use scalar::{Scalar, ScalarMode};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type UieNet32 = network::UieNet<f32>;
pub type UieNet64 = network::UieNet<f64>;
pub type GuidanceMap32 = guidance::GuidanceMap<f32>;
pub type GuidanceMap64 = guidance::GuidanceMap<f64>;
