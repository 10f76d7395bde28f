//! Block-sparse adversarial attacks against transformer text classifiers.
//!
//! The attack perturbs the input-token embeddings of a white-box classifier
//! to maximize its loss under an ℓ1-of-ℓ2 block-sparsity penalty, projecting
//! the continuous iterate back onto real vocabulary tokens by cosine
//! similarity after every gradient step. Only a few token blocks end up
//! non-zero, so the adversarial sentence differs from the original in a
//! handful of words.
//!
//! Crate layout:
//! - [`numerics`]: tensors, reverse-mode gradients, Adam, gradient checking
//! - [`vocab`]: tokenization, the embedding table, cosine projection
//! - [`model`]: the transformer classifier, training, checkpoints
//! - [`attack`]: the block-sparse objective and the gradient-projection loop
//! - [`harness`]: datasets, metrics, evaluation reports, the α sweep

pub mod attack;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod vocab;

pub use error::{Error, Result};
