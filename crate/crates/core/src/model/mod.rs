//! Trainable classifiers the attack targets: a small transformer encoder and
//! an attention-free linear baseline, plus checkpointing and the frozen-model
//! bundle consumed by attack runs.

pub mod checkpoint;
mod linear;
mod train;
mod transformer;

pub use linear::MeanPoolLinear;
pub use train::{evaluate_accuracy, train, EpochStats, TrainConfig};
pub use transformer::{ClassifierModel, GraphInput, ModelConfig};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};
use crate::vocab::{EmbeddingTable, Vocabulary, SPECIAL_COUNT};

/// White-box classifier interface the attack drives: logits, loss, and the
/// loss gradient with respect to the input embedding matrix.
pub trait TargetModel<T: Real>: Sync {
    fn class_count(&self) -> usize;

    fn logits(&self, embeddings: &Tensor<T>) -> Result<Vec<T>>;

    fn loss(&self, embeddings: &Tensor<T>, label: usize) -> Result<T>;

    /// Loss and its `n × d` input-embedding gradient; weight gradients are
    /// not part of this contract.
    fn loss_and_input_gradient(
        &self,
        embeddings: &Tensor<T>,
        label: usize,
    ) -> Result<(T, Tensor<T>)>;

    /// Argmax logit, ties broken by lowest class id.
    fn predict(&self, embeddings: &Tensor<T>) -> Result<usize> {
        Ok(argmax_lowest(&self.logits(embeddings)?))
    }
}

/// Index of the maximum value; ties resolve to the lowest index.
pub fn argmax_lowest<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

impl<T: Real> TargetModel<T> for ClassifierModel<T> {
    fn class_count(&self) -> usize {
        self.config().classes
    }

    fn logits(&self, embeddings: &Tensor<T>) -> Result<Vec<T>> {
        self.forward_logits(embeddings, None)
    }

    fn loss(&self, embeddings: &Tensor<T>, label: usize) -> Result<T> {
        ClassifierModel::loss(self, embeddings, label, None)
    }

    fn loss_and_input_gradient(
        &self,
        embeddings: &Tensor<T>,
        label: usize,
    ) -> Result<(T, Tensor<T>)> {
        self.input_gradient(embeddings, label, None)
    }
}

/// A trained model frozen for attack runs, bundled with its vocabulary and
/// the embedding table that defines the discrete token subspace.
///
/// Freezing verifies that the table is exactly the model's input-embedding
/// matrix and that every candidate row projects back onto itself, so
/// embedding followed by projection is the identity on real tokens.
pub struct FrozenModel<T> {
    model: ClassifierModel<T>,
    table: EmbeddingTable<T>,
    vocab: Vocabulary,
}

impl<T: Real> FrozenModel<T> {
    pub fn freeze(model: ClassifierModel<T>, vocab: Vocabulary) -> Result<Self> {
        if vocab.len() != model.config().vocab_size {
            return Err(Error::Vocab(format!(
                "vocabulary has {} tokens but model expects {}",
                vocab.len(),
                model.config().vocab_size
            )));
        }
        let special: Vec<bool> = (0..vocab.len()).map(|id| id < SPECIAL_COUNT).collect();
        let table = EmbeddingTable::new(model.token_embedding().clone(), special)?;
        if table.matrix() != model.token_embedding() {
            return Err(Error::Vocab(
                "embedding table drifted from the model's input embeddings".into(),
            ));
        }
        table.verify_self_projection()?;
        Ok(FrozenModel {
            model,
            table,
            vocab,
        })
    }

    pub fn model(&self) -> &ClassifierModel<T> {
        &self.model
    }

    pub fn table(&self) -> &EmbeddingTable<T> {
        &self.table
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }
}

impl<T: Real> TargetModel<T> for FrozenModel<T> {
    fn class_count(&self) -> usize {
        self.model.class_count()
    }

    fn logits(&self, embeddings: &Tensor<T>) -> Result<Vec<T>> {
        self.model.logits(embeddings)
    }

    fn loss(&self, embeddings: &Tensor<T>, label: usize) -> Result<T> {
        TargetModel::loss(&self.model, embeddings, label)
    }

    fn loss_and_input_gradient(
        &self,
        embeddings: &Tensor<T>,
        label: usize,
    ) -> Result<(T, Tensor<T>)> {
        self.model.loss_and_input_gradient(embeddings, label)
    }
}
