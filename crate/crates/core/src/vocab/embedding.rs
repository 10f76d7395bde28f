//! The embedding table that defines the discrete token subspace, and the
//! cosine projection of continuous vectors back onto it.

use crate::error::{Error, Result};
use crate::numerics::{slice_dot, slice_l2_norm, Real, Tensor};
use crate::vocab::vocabulary::TokenSequence;
use std::collections::HashSet;

/// Minimum ℓ2 norm for a row to be a valid projection candidate.
pub const MIN_CANDIDATE_NORM: f64 = 1e-8;

/// A `|V| × d` matrix whose row `i` is the embedding of token `i`, with
/// cached row norms. Special tokens (UNK, PAD) are never projection targets.
#[derive(Clone, Debug)]
pub struct EmbeddingTable<T> {
    matrix: Tensor<T>,
    row_norms: Vec<T>,
    special: Vec<bool>,
}

impl<T: Real> EmbeddingTable<T> {
    /// Wrap a `|V| × d` matrix. `special` flags rows excluded from projection
    /// candidacy; every candidate row must have norm above
    /// [`MIN_CANDIDATE_NORM`].
    pub fn new(matrix: Tensor<T>, special: Vec<bool>) -> Result<Self> {
        if matrix.shape().len() != 2 {
            return Err(Error::shape("embedding-table", "expected a 2D matrix"));
        }
        if special.len() != matrix.rows() {
            return Err(Error::shape(
                "embedding-table",
                "special flags must match row count",
            ));
        }
        let row_norms: Vec<T> = (0..matrix.rows())
            .map(|i| slice_l2_norm(matrix.row(i)))
            .collect();
        let floor = T::of(MIN_CANDIDATE_NORM);
        for (i, (&norm, &is_special)) in row_norms.iter().zip(&special).enumerate() {
            if !is_special && norm <= floor {
                return Err(Error::Vocab(format!(
                    "embedding row {i} has near-zero norm and cannot be a projection candidate"
                )));
            }
        }
        Ok(EmbeddingTable {
            matrix,
            row_norms,
            special,
        })
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, id: usize) -> &[T] {
        self.matrix.row(id)
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn is_special(&self, id: usize) -> bool {
        self.special[id]
    }

    /// Cached-vs-fresh norm drift; the cache must stay within 1e-6.
    pub fn max_norm_drift(&self) -> f64 {
        (0..self.rows())
            .map(|i| {
                (self.row_norms[i] - slice_l2_norm(self.row(i)))
                    .abs()
                    .as_f64()
            })
            .fold(0.0, f64::max)
    }

    /// Gather rows for a token sequence into an `n × d` embedding matrix.
    pub fn embed_sequence(&self, seq: &TokenSequence) -> Result<Tensor<T>> {
        let d = self.dim();
        let mut data = Vec::with_capacity(seq.len() * d);
        for &id in &seq.ids {
            if id >= self.rows() {
                return Err(Error::arg(format!(
                    "token id {id} out of range for table with {} rows",
                    self.rows()
                )));
            }
            data.extend_from_slice(self.row(id));
        }
        Tensor::new(vec![seq.len(), d], data)
    }

    /// Nearest token by cosine similarity: argmax over non-special,
    /// non-excluded rows, ties broken by lowest id. The scan is exact; any
    /// accelerated index must agree with it id-for-id.
    pub fn project_nearest(&self, query: &[T], exclude: &HashSet<usize>) -> Result<usize> {
        if query.len() != self.dim() {
            return Err(Error::shape(
                "project-nearest",
                format!("query has {} dims, table has {}", query.len(), self.dim()),
            ));
        }
        let qnorm = slice_l2_norm(query);
        if qnorm <= T::of(MIN_CANDIDATE_NORM) {
            return Err(Error::arg("project-nearest: query has near-zero norm"));
        }
        let mut best: Option<(usize, T)> = None;
        for id in 0..self.rows() {
            if self.special[id] || exclude.contains(&id) {
                continue;
            }
            let cos = slice_dot(query, self.row(id)) / (qnorm * self.row_norms[id]);
            match best {
                Some((_, best_cos)) if cos <= best_cos => {}
                _ => best = Some((id, cos)),
            }
        }
        best.map(|(id, _)| id)
            .ok_or_else(|| Error::arg("project-nearest: empty candidate set"))
    }

    /// Project every row of an `n × d` matrix to its nearest token.
    pub fn project_rows(
        &self,
        rows: &Tensor<T>,
        exclude: &HashSet<usize>,
    ) -> Result<TokenSequence> {
        let mut ids = Vec::with_capacity(rows.rows());
        for i in 0..rows.rows() {
            ids.push(self.project_nearest(rows.row(i), exclude)?);
        }
        Ok(TokenSequence::new(ids))
    }

    /// Exhaustively verify that every candidate row projects back onto
    /// itself, which makes `embed` followed by projection the identity on
    /// real tokens.
    pub fn verify_self_projection(&self) -> Result<()> {
        let none = HashSet::new();
        for id in 0..self.rows() {
            if self.special[id] {
                continue;
            }
            let hit = self.project_nearest(self.row(id), &none)?;
            if hit != id {
                return Err(Error::Vocab(format!(
                    "embedding row {id} projects onto row {hit}; the table is not self-nearest"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table_from_rows(rows: &[Vec<f64>], special: Vec<bool>) -> EmbeddingTable<f64> {
        EmbeddingTable::new(Tensor::from_rows(rows).unwrap(), special).unwrap()
    }

    fn random_table(rows: usize, dim: usize, seed: u64) -> EmbeddingTable<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mut special = vec![false; rows];
        special[0] = true;
        special[1] = true;
        EmbeddingTable::new(Tensor::new(vec![rows, dim], data).unwrap(), special).unwrap()
    }

    /// Independent argmax-cosine scan with freshly computed norms.
    fn brute_force_nearest(
        table: &EmbeddingTable<f64>,
        query: &[f64],
        exclude: &HashSet<usize>,
    ) -> Option<usize> {
        let qn = slice_l2_norm(query);
        let mut best: Option<(usize, f64)> = None;
        for id in 0..table.rows() {
            if table.is_special(id) || exclude.contains(&id) {
                continue;
            }
            let row = table.row(id);
            let cos = slice_dot(query, row) / (qn * slice_l2_norm(row));
            match best {
                Some((_, b)) if cos <= b => {}
                _ => best = Some((id, cos)),
            }
        }
        best.map(|(id, _)| id)
    }

    #[test]
    fn projecting_a_row_returns_its_token() {
        let table = random_table(30, 8, 1);
        let none = HashSet::new();
        for id in 2..30 {
            assert_eq!(table.project_nearest(table.row(id), &none).unwrap(), id);
        }
        table.verify_self_projection().unwrap();
    }

    #[test]
    fn projection_is_scale_invariant() {
        let table = random_table(20, 6, 2);
        let none = HashSet::new();
        let scaled: Vec<f64> = table.row(5).iter().map(|v| v * 2.0).collect();
        assert_eq!(table.project_nearest(&scaled, &none).unwrap(), 5);
    }

    #[test]
    fn random_queries_match_brute_force_scan() {
        let table = random_table(100, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let none = HashSet::new();
        for _ in 0..200 {
            let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert_eq!(
                table.project_nearest(&q, &none).unwrap(),
                brute_force_nearest(&table, &q, &none).unwrap()
            );
        }
    }

    #[test]
    fn duplicate_rows_tie_break_to_lowest_id() {
        let rows = vec![
            vec![0.0, 1.0], // special
            vec![1.0, 1.0], // special
            vec![1.0, 0.0],
            vec![0.6, 0.8],
            vec![1.0, 0.0], // exact duplicate of id 2
        ];
        let table = table_from_rows(&rows, vec![true, true, false, false, false]);
        let none = HashSet::new();
        assert_eq!(table.project_nearest(&[2.0, 0.0], &none).unwrap(), 2);
    }

    #[test]
    fn exclusion_and_empty_candidate_errors() {
        let rows = vec![
            vec![0.1, 0.0],
            vec![0.0, 0.1],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ];
        let table = table_from_rows(&rows, vec![true, true, false, false]);
        let mut exclude = HashSet::new();
        exclude.insert(2);
        assert_eq!(table.project_nearest(&[1.0, 0.1], &exclude).unwrap(), 3);
        exclude.insert(3);
        assert!(table.project_nearest(&[1.0, 0.1], &exclude).is_err());
    }

    #[test]
    fn zero_norm_query_rejected() {
        let table = random_table(10, 4, 5);
        let none = HashSet::new();
        assert!(table.project_nearest(&[0.0; 4], &none).is_err());
    }

    #[test]
    fn zero_norm_candidate_row_rejected_at_build() {
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 0.0],
        ];
        let matrix = Tensor::from_rows(&rows).unwrap();
        let err = EmbeddingTable::new(matrix, vec![true, true, false, false]).unwrap_err();
        assert!(matches!(err, Error::Vocab(_)));
    }

    #[test]
    fn embed_sequence_gathers_rows_and_roundtrips() {
        let table = random_table(25, 6, 6);
        let seq = TokenSequence::new(vec![4, 4, 17, 9]);
        let emb = table.embed_sequence(&seq).unwrap();
        assert_eq!(emb.shape(), &[4, 6]);
        assert_eq!(emb.row(0), emb.row(1));
        assert_eq!(emb.row(0), table.row(4));
        // Brute-force scan recovers the original ids row by row.
        let none = HashSet::new();
        for (i, &id) in seq.ids.iter().enumerate() {
            assert_eq!(brute_force_nearest(&table, emb.row(i), &none).unwrap(), id);
        }
        assert_eq!(table.project_rows(&emb, &none).unwrap(), seq);
    }

    #[test]
    fn cached_norms_match_fresh() {
        let table = random_table(50, 16, 7);
        assert!(table.max_norm_drift() < 1e-6);
    }

    proptest! {
        #[test]
        fn positive_scaling_never_changes_projection(
            seed in 0u64..1000,
            scale in 1e-3f64..1e3,
        ) {
            let table = random_table(20, 5, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let q: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scaled: Vec<f64> = q.iter().map(|v| v * scale).collect();
            let none = HashSet::new();
            prop_assert_eq!(
                table.project_nearest(&q, &none).unwrap(),
                table.project_nearest(&scaled, &none).unwrap()
            );
        }
    }
}
