//! StyleFlow: an invertible normalizing-flow encoder for text style
//! transfer, with attention-aware coupling layers, content/style
//! disentanglement, conditional-layer-norm style injection, and
//! latent-space data augmentation.
//!
//! Everything runs on a small reverse-mode autodiff tape over dense f64
//! tensors; no external numerics.

pub mod augment;
pub mod bleu;
pub mod block;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod ngram;
pub mod optim;
pub mod rng;
pub mod scorer;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod transfer;

pub use error::{Error, Result};
pub use tape::{Checks, Tape, TensorId};
pub use tensor::Tensor;
