//! Attack evaluation: per-example runs, aggregate metrics, the α sweep, and
//! report persistence (JSON, CSV, text).

use crate::attack::{run_attack, AttackConfig, AttackResult, AttackStatus};
use crate::error::{Error, Result};
use crate::harness::dataset::LabeledDataset;
use crate::harness::metrics::SIMILARITY_FUNCTION;
use crate::model::FrozenModel;
use crate::numerics::Real;
use crate::vocab::TokenSequence;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRow {
    pub index: usize,
    pub label: usize,
    pub original_text: String,
    pub adversarial_text: String,
    pub result: AttackResult,
}

/// Aggregates over a report's rows. Skipped examples (model already wrong, or
/// nothing to attack) are excluded from every denominator; a run where *all*
/// examples were skipped is flagged degenerate and carries no aggregates.
///
/// After-attack accuracy counts failed attacks (budget exhausted or below the
/// similarity threshold) as unchanged predictions, i.e. still correct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub total_examples: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub degenerate: bool,
    pub after_attack_accuracy: Option<f64>,
    pub success_rate: Option<f64>,
    pub mean_similarity: Option<f64>,
    pub mean_token_error_rate: Option<f64>,
    pub mean_iterations: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub version: u32,
    pub similarity_function: String,
    pub config: AttackConfig,
    pub aggregates: Aggregates,
    pub rows: Vec<ExampleRow>,
}

/// Recompute aggregates from rows; reports must always satisfy
/// `report.aggregates == compute_aggregates(&report.rows)`.
pub fn compute_aggregates(rows: &[ExampleRow]) -> Aggregates {
    let total = rows.len();
    let evaluated: Vec<&ExampleRow> = rows
        .iter()
        .filter(|r| r.result.status != AttackStatus::SkippedAlreadyMisclassified)
        .collect();
    let skipped = total - evaluated.len();
    if evaluated.is_empty() {
        return Aggregates {
            total_examples: total,
            evaluated: 0,
            skipped,
            degenerate: true,
            after_attack_accuracy: None,
            success_rate: None,
            mean_similarity: None,
            mean_token_error_rate: None,
            mean_iterations: None,
        };
    }
    let n = evaluated.len() as f64;
    let successes = evaluated.iter().filter(|r| r.result.success).count() as f64;
    let mean = |f: &dyn Fn(&ExampleRow) -> f64| evaluated.iter().map(|r| f(r)).sum::<f64>() / n;
    Aggregates {
        total_examples: total,
        evaluated: evaluated.len(),
        skipped,
        degenerate: false,
        after_attack_accuracy: Some((n - successes) / n),
        success_rate: Some(successes / n),
        mean_similarity: Some(mean(&|r| r.result.similarity)),
        mean_token_error_rate: Some(mean(&|r| r.result.token_error_rate)),
        mean_iterations: Some(mean(&|r| r.result.iterations as f64)),
    }
}

/// Attack every example of `dataset` against a frozen model. Examples the
/// model already misclassifies are recorded as skipped rows; per-example
/// attacks run in parallel but rows always come back in dataset order.
pub fn evaluate_attack<T: Real>(
    frozen: &FrozenModel<T>,
    dataset: &LabeledDataset,
    cfg: &AttackConfig,
) -> Result<AttackReport> {
    if dataset.is_empty() {
        return Err(Error::arg("cannot evaluate an attack on an empty dataset"));
    }
    cfg.validate()?;
    dataset.validate_labels(frozen.model().config().classes)?;

    let max_len = frozen.model().config().max_len;
    let prepared: Vec<(usize, TokenSequence, usize, &str)> = dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut seq = frozen.vocab().tokenize(&r.text);
            seq.ids.truncate(max_len);
            (i, seq, r.label, r.text.as_str())
        })
        .collect();

    let rows: Result<Vec<ExampleRow>> = prepared
        .par_iter()
        .map(|(index, seq, label, text)| {
            let result = if seq.is_empty() {
                // Nothing to attack; excluded from the denominator like other
                // skipped examples.
                AttackResult {
                    status: AttackStatus::SkippedAlreadyMisclassified,
                    success: false,
                    adversarial: seq.clone(),
                    iterations: 0,
                    final_alpha: 0.0,
                    final_lr: 0.0,
                    adversarial_loss: 0.0,
                    similarity: 1.0,
                    token_error_rate: 0.0,
                }
            } else {
                run_attack(frozen, frozen.table(), seq, *label, cfg)?
            };
            Ok(ExampleRow {
                index: *index,
                label: *label,
                original_text: text.to_string(),
                adversarial_text: frozen.vocab().detokenize(&result.adversarial),
                result,
            })
        })
        .collect();
    let rows = rows?;

    Ok(AttackReport {
        version: REPORT_SCHEMA_VERSION,
        similarity_function: SIMILARITY_FUNCTION.to_string(),
        config: cfg.clone(),
        aggregates: compute_aggregates(&rows),
        rows,
    })
}

/// One row of the α-tradeoff sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub adv_accuracy: f64,
    pub mean_similarity: f64,
    pub mean_token_error_rate: f64,
}

/// Sweep the base α over single-setting attack runs at a fixed learning rate
/// (no schedule fallback); budget, threshold and seed come from `base`.
pub fn sweep_alpha<T: Real>(
    frozen: &FrozenModel<T>,
    dataset: &LabeledDataset,
    alphas: &[f64],
    lr: f64,
    base: &AttackConfig,
) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() {
        return Err(Error::arg("sweep needs at least one α value"));
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let cfg = AttackConfig {
            alpha_schedule: vec![alpha],
            lr_schedule: vec![lr],
            max_iterations: base.max_iterations,
            similarity_threshold: base.similarity_threshold,
            stall_patience: base.stall_patience,
            seed: base.seed,
        };
        let report = evaluate_attack(frozen, dataset, &cfg)?;
        let agg = &report.aggregates;
        if agg.degenerate {
            return Err(Error::arg(
                "sweep is degenerate: the model misclassifies every example",
            ));
        }
        rows.push(SweepRow {
            alpha,
            adv_accuracy: agg.after_attack_accuracy.expect("non-degenerate"),
            mean_similarity: agg.mean_similarity.expect("non-degenerate"),
            mean_token_error_rate: agg.mean_token_error_rate.expect("non-degenerate"),
        });
    }
    Ok(rows)
}

/// Sweep rows as CSV with the fixed header
/// `alpha,adv_accuracy,mean_similarity,mean_token_error_rate`.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,adv_accuracy,mean_similarity,mean_token_error_rate\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.alpha, r.adv_accuracy, r.mean_similarity, r.mean_token_error_rate
        ));
    }
    out
}

impl std::fmt::Display for AttackStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AttackStatus::Succeeded => "succeeded",
            AttackStatus::ExhaustedBudget => "exhausted-budget",
            AttackStatus::BelowSimilarityThreshold => "below-similarity-threshold",
            AttackStatus::SkippedAlreadyMisclassified => "skipped-already-misclassified",
        };
        f.write_str(s)
    }
}

impl AttackReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AttackReport> {
        let content = std::fs::read_to_string(path)?;
        let report: AttackReport = serde_json::from_str(&content)?;
        if report.version != REPORT_SCHEMA_VERSION {
            return Err(Error::arg(format!(
                "unsupported report schema version {}",
                report.version
            )));
        }
        Ok(report)
    }

    /// Per-row CSV export (quoted where needed).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "index",
            "label",
            "status",
            "success",
            "iterations",
            "final_alpha",
            "final_lr",
            "adversarial_loss",
            "similarity",
            "token_error_rate",
            "original_text",
            "adversarial_text",
        ])?;
        for row in &self.rows {
            let r = &row.result;
            w.write_record([
                row.index.to_string(),
                row.label.to_string(),
                r.status.to_string(),
                r.success.to_string(),
                r.iterations.to_string(),
                r.final_alpha.to_string(),
                r.final_lr.to_string(),
                r.adversarial_loss.to_string(),
                r.similarity.to_string(),
                r.token_error_rate.to_string(),
                row.original_text.clone(),
                row.adversarial_text.clone(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Csv(e.to_string()))
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let a = &self.aggregates;
        let fmt_opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "n/a".to_string(),
        };
        let mut out = String::new();
        out.push_str(&format!(
            "attack report (schema v{}, similarity: {})\n",
            self.version, self.similarity_function
        ));
        out.push_str(&format!(
            "examples: {} total, {} evaluated, {} skipped{}\n",
            a.total_examples,
            a.evaluated,
            a.skipped,
            if a.degenerate {
                " [degenerate run]"
            } else {
                ""
            }
        ));
        out.push_str(&format!(
            "after-attack accuracy: {}\n",
            fmt_opt(a.after_attack_accuracy)
        ));
        out.push_str(&format!(
            "success rate:          {}\n",
            fmt_opt(a.success_rate)
        ));
        out.push_str(&format!(
            "mean similarity:       {}\n",
            fmt_opt(a.mean_similarity)
        ));
        out.push_str(&format!(
            "mean token error rate: {}\n",
            fmt_opt(a.mean_token_error_rate)
        ));
        out.push_str(&format!(
            "mean iterations:       {}\n",
            fmt_opt(a.mean_iterations)
        ));
        out
    }
}
