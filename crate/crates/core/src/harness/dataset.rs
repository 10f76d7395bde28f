//! Labeled text datasets: JSONL loading/saving and a synthetic
//! keyword-sentiment corpus generator so the whole pipeline runs without
//! external downloads.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: usize,
}

/// A list of `(text, label)` records with class names and a split tag.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub records: Vec<LabeledExample>,
    pub class_names: Vec<String>,
    pub split: String,
}

impl LabeledDataset {
    pub fn new(records: Vec<LabeledExample>, class_names: Vec<String>, split: &str) -> Self {
        LabeledDataset {
            records,
            class_names,
            split: split.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    /// Load a JSONL file: one `{"text": ..., "label": ...}` object per line.
    /// Malformed lines are reported with their 1-based line number; record
    /// order is preserved. Class names are synthesized from the label range.
    pub fn load_jsonl(path: &Path, split: &str) -> Result<LabeledDataset> {
        #[derive(Deserialize)]
        struct RawRecord {
            text: String,
            label: i64,
        }
        let content = std::fs::read_to_string(path)?;
        let mut records = Vec::new();
        let mut max_label = 0usize;
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Dataset {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if raw.label < 0 {
                return Err(Error::Dataset {
                    line: i + 1,
                    msg: format!("label {} is negative", raw.label),
                });
            }
            let label = raw.label as usize;
            max_label = max_label.max(label);
            records.push(LabeledExample {
                text: raw.text,
                label,
            });
        }
        let class_names = (0..=max_label).map(|c| format!("class_{c}")).collect();
        Ok(LabeledDataset::new(records, class_names, split))
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record)?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reject labels outside the classifier's range.
    pub fn validate_labels(&self, classes: usize) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.label >= classes {
                return Err(Error::arg(format!(
                    "record {i}: label {} out of range for {classes} classes",
                    r.label
                )));
            }
        }
        Ok(())
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.text.as_str())
    }
}

/// Parameters of the synthetic keyword-sentiment task: the class of a
/// sentence is decided by a few sentiment keywords planted among filler
/// pseudo-words.
#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub train_examples: usize,
    pub test_examples: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub max_keywords: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_examples: 1000,
            test_examples: 200,
            min_len: 5,
            max_len: 20,
            max_keywords: 1,
            seed: 0,
        }
    }
}

pub const NEGATIVE_KEYWORDS: [&str; 25] = [
    "terrible",
    "awful",
    "horrible",
    "dreadful",
    "disappointing",
    "miserable",
    "unpleasant",
    "mediocre",
    "atrocious",
    "dismal",
    "lousy",
    "appalling",
    "woeful",
    "abysmal",
    "inferior",
    "revolting",
    "tedious",
    "bland",
    "irritating",
    "offensive",
    "depressing",
    "shoddy",
    "sloppy",
    "grim",
    "wretched",
];

pub const POSITIVE_KEYWORDS: [&str; 25] = [
    "great",
    "excellent",
    "wonderful",
    "amazing",
    "fantastic",
    "delightful",
    "superb",
    "brilliant",
    "charming",
    "pleasant",
    "lovely",
    "enjoyable",
    "impressive",
    "perfect",
    "outstanding",
    "marvelous",
    "splendid",
    "terrific",
    "admirable",
    "stellar",
    "graceful",
    "refreshing",
    "satisfying",
    "glorious",
    "uplifting",
];

const ONSETS: [&str; 20] = [
    "ba", "de", "fi", "go", "hu", "ka", "le", "mi", "no", "pu", "ra", "se", "ti", "vo", "wa", "ze",
    "bo", "da", "fe", "gi",
];

const RIMES: [&str; 22] = [
    "lon", "mer", "tak", "rin", "vel", "dor", "nas", "pel", "sim", "tur", "ban", "kel", "mov",
    "rud", "lin", "sar", "tem", "vok", "nid", "gal", "pos", "fen",
];

/// The 440 filler pseudo-words, in a fixed order.
pub fn filler_words() -> Vec<String> {
    let mut words = Vec::with_capacity(ONSETS.len() * RIMES.len());
    for onset in ONSETS {
        for rime in RIMES {
            words.push(format!("{onset}{rime}"));
        }
    }
    words
}

/// Generate `(train, test)` splits of the keyword-sentiment task. Class 0 is
/// negative, class 1 positive; each sentence carries 1..=max_keywords
/// keywords of its own class only, so flipping those few tokens flips the
/// evidence — exactly the structure a block-sparse attack exploits.
pub fn generate_keyword_corpus(cfg: &SyntheticConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::arg("synthetic corpus needs 1 ≤ min_len ≤ max_len"));
    }
    if cfg.max_keywords == 0 {
        return Err(Error::arg(
            "synthetic corpus needs at least one keyword per sentence",
        ));
    }
    let filler = filler_words();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let class_names = vec!["negative".to_string(), "positive".to_string()];
    let mut make_split = |count: usize, split: &str| -> LabeledDataset {
        let records = (0..count)
            .map(|i| {
                let label = i % 2;
                let keywords: &[&str] = if label == 0 {
                    &NEGATIVE_KEYWORDS
                } else {
                    &POSITIVE_KEYWORDS
                };
                let len = rng.random_range(cfg.min_len..=cfg.max_len);
                let k = rng.random_range(1..=cfg.max_keywords.min(len));
                let mut positions: Vec<usize> = (0..len).collect();
                for j in (1..len).rev() {
                    positions.swap(j, rng.random_range(0..=j));
                }
                let keyword_slots: std::collections::HashSet<usize> =
                    positions[..k].iter().copied().collect();
                let words: Vec<&str> = (0..len)
                    .map(|p| {
                        if keyword_slots.contains(&p) {
                            keywords[rng.random_range(0..keywords.len())]
                        } else {
                            filler[rng.random_range(0..filler.len())].as_str()
                        }
                    })
                    .collect();
                LabeledExample {
                    text: words.join(" "),
                    label,
                }
            })
            .collect();
        LabeledDataset::new(records, class_names.clone(), split)
    };
    let train = make_split(cfg.train_examples, "train");
    let test = make_split(cfg.test_examples, "test");
    Ok((train, test))
}
