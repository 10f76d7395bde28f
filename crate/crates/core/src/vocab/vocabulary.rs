//! Word-level vocabulary with UNK/PAD specials and deterministic ordering.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::Path;

pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

/// Token id of the unknown-word placeholder.
pub const UNK_ID: usize = 0;
/// Token id of the padding placeholder.
pub const PAD_ID: usize = 1;

/// Number of reserved special ids at the front of every vocabulary.
pub const SPECIAL_COUNT: usize = 2;

/// Ordered token set. Ids 0 and 1 are always UNK and PAD; word ids follow in
/// frequency-descending, then lexicographic order, so rebuilding from the same
/// corpus yields the same assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// A sentence as a list of token ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        TokenSequence { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl Vocabulary {
    fn from_words(words: Vec<String>) -> Self {
        let mut tokens = vec![UNK_TOKEN.to_string(), PAD_TOKEN.to_string()];
        tokens.extend(words);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Build from a corpus: every token with frequency ≥ `min_count` gets an
    /// id, ordered by frequency descending then lexicographic.
    pub fn build<I, S>(corpus: I, min_count: usize) -> Result<Vocabulary>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut saw_text = false;
        for text in corpus {
            saw_text = true;
            for word in split_words(text.as_ref()) {
                *counts.entry(word).or_insert(0) += 1;
            }
        }
        if !saw_text {
            return Err(Error::Vocab(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Vocabulary::from_words(
            ranked.into_iter().map(|(w, _)| w).collect(),
        ))
    }

    /// Build directly from a fixed word list (synthetic corpora, tests).
    /// The words must be distinct and must not collide with the specials.
    pub fn from_word_list<S: AsRef<str>>(words: &[S]) -> Result<Vocabulary> {
        let words: Vec<String> = words.iter().map(|w| w.as_ref().to_string()).collect();
        let vocab = Vocabulary::from_words(words);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Vocab("duplicate tokens in word list".into()));
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // UNK and PAD are always present
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIAL_COUNT
    }

    /// Lowercased word tokenization; punctuation characters become their own
    /// tokens, out-of-vocabulary words map to UNK.
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        TokenSequence::new(
            split_words(text)
                .into_iter()
                .map(|w| self.id_of(&w).unwrap_or(UNK_ID))
                .collect(),
        )
    }

    /// Space-joined surface form. `tokenize(detokenize(tokenize(t)))` equals
    /// `tokenize(t)` for any text.
    pub fn detokenize(&self, seq: &TokenSequence) -> String {
        seq.ids
            .iter()
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Serialized form: one token per line, UTF-8, in id order.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_lines(content: &str) -> Result<Vocabulary> {
        let tokens: Vec<String> = content.lines().map(str::to_string).collect();
        if tokens.len() < SPECIAL_COUNT
            || tokens[UNK_ID] != UNK_TOKEN
            || tokens[PAD_ID] != PAD_TOKEN
        {
            return Err(Error::Vocab(format!(
                "vocabulary file must start with the special tokens {UNK_TOKEN}, {PAD_TOKEN}"
            )));
        }
        let index: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != tokens.len() {
            return Err(Error::Vocab("duplicate tokens in vocabulary file".into()));
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_lines())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let content = std::fs::read_to_string(path)?;
        Vocabulary::from_lines(&content)
    }

    /// SHA-256 of the serialized token list; checkpoints embed this so a
    /// model can refuse a mismatched vocabulary.
    pub fn content_hash(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.to_lines().as_bytes());
        digest.into()
    }
}

/// Lowercase word splitter: alphanumeric runs are words, every other
/// non-whitespace character is a single-character token.
fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                words.push(ch.to_string());
            }
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn build_orders_by_frequency_then_lexicographic() {
        let vocab = Vocabulary::build(["a b", "a c"], 1).unwrap();
        assert_eq!(vocab.len(), 5);
        assert_eq!(vocab.token(UNK_ID), UNK_TOKEN);
        assert_eq!(vocab.token(PAD_ID), PAD_TOKEN);
        assert_eq!(vocab.token(2), "a"); // frequency 2, ranked first
        assert_eq!(vocab.token(3), "b");
        assert_eq!(vocab.token(4), "c");
    }

    #[test]
    fn min_count_drops_rare_words() {
        let vocab = Vocabulary::build(["a b", "a c"], 2).unwrap();
        assert_eq!(vocab.len(), 3);
        assert_eq!(vocab.id_of("a"), Some(2));
        let seq = vocab.tokenize("a b c");
        assert_eq!(seq.ids, vec![2, UNK_ID, UNK_ID]);
    }

    #[test]
    fn rebuild_is_deterministic() {
        let corpus = ["the cat sat", "the dog ran", "a cat ran fast"];
        let a = Vocabulary::build(corpus, 1).unwrap();
        let b = Vocabulary::build(corpus, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_corpus_rejected() {
        let empty: [&str; 0] = [];
        assert!(Vocabulary::build(empty, 1).is_err());
    }

    #[test]
    fn tokenize_empty_text_gives_empty_sequence() {
        let vocab = Vocabulary::build(["a"], 1).unwrap();
        assert!(vocab.tokenize("").is_empty());
    }

    #[test]
    fn tokenize_lowercases_and_maps_oov_to_unk() {
        let vocab = Vocabulary::build(["the cat sat"], 1).unwrap();
        let seq = vocab.tokenize("The cat sat");
        assert_eq!(
            seq.ids,
            vec![
                vocab.id_of("the").unwrap(),
                vocab.id_of("cat").unwrap(),
                vocab.id_of("sat").unwrap()
            ]
        );
        let oov = vocab.tokenize("the zyxqw sat");
        assert_eq!(oov.ids[1], UNK_ID);
    }

    #[test]
    fn punctuation_splits_into_single_tokens() {
        let vocab = Vocabulary::build(["the cat , sat ."], 1).unwrap();
        let seq = vocab.tokenize("The cat, sat.");
        assert_eq!(seq.len(), 5);
        assert_eq!(vocab.detokenize(&seq), "the cat , sat .");
    }

    #[test]
    fn lines_roundtrip_preserves_ids() {
        let vocab = Vocabulary::build(["x y z y"], 1).unwrap();
        let back = Vocabulary::from_lines(&vocab.to_lines()).unwrap();
        assert_eq!(vocab, back);
        assert_eq!(vocab.content_hash(), back.content_hash());
    }

    #[test]
    fn from_lines_rejects_missing_specials() {
        assert!(Vocabulary::from_lines("a\nb\n").is_err());
    }

    proptest! {
        #[test]
        fn detokenize_tokenize_is_stable(text in "[ a-z.,!0-9]{0,40}") {
            let vocab = Vocabulary::build([text.as_str(), "filler"], 1).unwrap();
            let once = vocab.tokenize(&text);
            let again = vocab.tokenize(&vocab.detokenize(&once));
            prop_assert_eq!(once, again);
        }
    }
}
