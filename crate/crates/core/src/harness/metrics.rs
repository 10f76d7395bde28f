//! Evaluation metrics: the semantic-similarity proxy and the token error
//! rate.

use crate::error::{Error, Result};
use crate::numerics::{slice_dot, slice_l2_norm, Real};
use crate::vocab::{EmbeddingTable, TokenSequence};

/// Name and version of the similarity function, recorded in every report so
/// the proxy can be swapped without silently changing old numbers.
pub const SIMILARITY_FUNCTION: &str = "mean-embedding-cosine-v1";

/// Cosine similarity of the mean-pooled input embeddings of two equal-length
/// sequences — the stand-in for a sentence-encoder similarity. Range [−1, 1].
pub fn similarity_proxy<T: Real>(
    original: &TokenSequence,
    adversarial: &TokenSequence,
    table: &EmbeddingTable<T>,
) -> Result<f64> {
    if original.len() != adversarial.len() {
        return Err(Error::shape(
            "similarity-proxy",
            format!("lengths {} vs {}", original.len(), adversarial.len()),
        ));
    }
    if original.is_empty() {
        return Err(Error::arg("similarity of empty sequences is undefined"));
    }
    let a = mean_embedding(original, table)?;
    let b = mean_embedding(adversarial, table)?;
    let (na, nb) = (slice_l2_norm(&a), slice_l2_norm(&b));
    if na == T::zero() || nb == T::zero() {
        return Err(Error::arg("similarity-proxy: zero-norm mean embedding"));
    }
    Ok((slice_dot(&a, &b) / (na * nb)).as_f64())
}

fn mean_embedding<T: Real>(seq: &TokenSequence, table: &EmbeddingTable<T>) -> Result<Vec<T>> {
    let emb = table.embed_sequence(seq)?;
    let inv = T::of(1.0 / seq.len() as f64);
    let mut mean = vec![T::zero(); table.dim()];
    for i in 0..emb.rows() {
        for (m, &v) in mean.iter_mut().zip(emb.row(i)) {
            *m = *m + v * inv;
        }
    }
    Ok(mean)
}

/// Fraction of positions where the two sequences carry different token ids.
pub fn token_error_rate(original: &TokenSequence, adversarial: &TokenSequence) -> Result<f64> {
    if original.len() != adversarial.len() {
        return Err(Error::shape(
            "token-error-rate",
            format!("lengths {} vs {}", original.len(), adversarial.len()),
        ));
    }
    if original.is_empty() {
        return Err(Error::arg(
            "token error rate of empty sequences is undefined",
        ));
    }
    let differing = original
        .ids
        .iter()
        .zip(&adversarial.ids)
        .filter(|(a, b)| a != b)
        .count();
    Ok(differing as f64 / original.len() as f64)
}
