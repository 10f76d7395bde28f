//! Datasets, metrics, attack evaluation, the α sweep, and report persistence.

pub mod dataset;
pub mod metrics;
pub mod report;

pub use dataset::{
    filler_words, generate_keyword_corpus, LabeledDataset, LabeledExample, SyntheticConfig,
    NEGATIVE_KEYWORDS, POSITIVE_KEYWORDS,
};
pub use metrics::{similarity_proxy, token_error_rate, SIMILARITY_FUNCTION};
pub use report::{
    compute_aggregates, evaluate_attack, sweep_alpha, sweep_to_csv, Aggregates, AttackReport,
    ExampleRow, SweepRow, REPORT_SCHEMA_VERSION,
};
