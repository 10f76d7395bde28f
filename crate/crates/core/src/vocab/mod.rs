//! Tokenization, the embedding table defining the discrete token subspace,
//! and the cosine projection back onto real vocabulary tokens.

mod embedding;
mod vocabulary;

pub use embedding::{EmbeddingTable, MIN_CANDIDATE_NORM};
pub use vocabulary::{
    TokenSequence, Vocabulary, PAD_ID, PAD_TOKEN, SPECIAL_COUNT, UNK_ID, UNK_TOKEN,
};
