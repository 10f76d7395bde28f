//! Block-sparse gradient-projection attack.
//!
//! Maximizes classifier loss by minimizing `−L_f(e_x′, y) + α·Σᵢ‖rᵢ‖₂` over
//! the perturbation `r = e_x′ − e_x`, alternating Adam steps in the
//! continuous embedding space with cosine projection of every row back onto
//! real vocabulary tokens. A buffer of already-visited sentences prevents the
//! projection from cycling; failed settings fall through an (lr, α) schedule
//! from least to most aggressive.

use crate::error::{Error, Result};
use crate::harness::metrics::{similarity_proxy, token_error_rate};
use crate::model::TargetModel;
use crate::numerics::{adam_step, slice_l2_norm, AdamState, Real, Tensor};
use crate::vocab::{EmbeddingTable, TokenSequence};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// Attack hyper-parameters. `alpha_schedule` holds base values that are
/// divided by the sentence length at use; `lr_schedule` escalates outward
/// while α descends inward, so settings are tried least-aggressive first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub alpha_schedule: Vec<f64>,
    pub lr_schedule: Vec<f64>,
    /// Global iteration budget K, shared across the whole schedule.
    pub max_iterations: usize,
    pub similarity_threshold: f64,
    /// A schedule point that goes this many consecutive iterations without
    /// accepting a new sentence has failed; the run falls through to the
    /// next (lr, α) setting instead of burning the remaining budget on a
    /// buffer-bound oscillation.
    pub stall_patience: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            alpha_schedule: vec![10.0, 8.0, 5.0, 2.0],
            lr_schedule: vec![0.15, 0.3],
            max_iterations: 500,
            similarity_threshold: 0.8,
            stall_patience: 40,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_schedule.is_empty() {
            return Err(Error::arg("alpha_schedule must not be empty"));
        }
        if self.alpha_schedule.iter().any(|&a| a <= 0.0) {
            return Err(Error::arg("alpha_schedule values must be positive"));
        }
        if self.alpha_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::arg("alpha_schedule must be strictly decreasing"));
        }
        if self.lr_schedule.is_empty() || self.lr_schedule.iter().any(|&lr| lr <= 0.0) {
            return Err(Error::arg("lr_schedule must be non-empty and positive"));
        }
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return Err(Error::arg("similarity_threshold must lie in [0, 1]"));
        }
        if self.stall_patience == 0 {
            return Err(Error::arg("stall_patience must be positive"));
        }
        Ok(())
    }

    /// Parse a `key = value` config file. Unknown keys are rejected; missing
    /// keys keep their defaults. List values are comma-separated.
    pub fn from_kv_file(path: &std::path::Path) -> Result<AttackConfig> {
        let content = std::fs::read_to_string(path)?;
        let mut cfg = AttackConfig::default();
        for (lineno, raw) in content.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::arg(format!(
                    "config line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            let parse_list = |v: &str| -> Result<Vec<f64>> {
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::arg(format!("config: bad number `{s}` for {key}")))
                    })
                    .collect()
            };
            match key {
                "alpha_schedule" => cfg.alpha_schedule = parse_list(value)?,
                "lr_schedule" => cfg.lr_schedule = parse_list(value)?,
                "max_iterations" => {
                    cfg.max_iterations = value
                        .parse()
                        .map_err(|_| Error::arg(format!("config: bad integer `{value}`")))?
                }
                "similarity_threshold" => {
                    cfg.similarity_threshold = value
                        .parse()
                        .map_err(|_| Error::arg(format!("config: bad number `{value}`")))?
                }
                "stall_patience" => {
                    cfg.stall_patience = value
                        .parse()
                        .map_err(|_| Error::arg(format!("config: bad integer `{value}`")))?
                }
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| Error::arg(format!("config: bad integer `{value}`")))?
                }
                other => {
                    return Err(Error::arg(format!(
                        "config line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Outcome classification of one attack run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackStatus {
    Succeeded,
    ExhaustedBudget,
    BelowSimilarityThreshold,
    SkippedAlreadyMisclassified,
}

/// Outcome of [`run_attack`]. `success` implies the adversarial sequence
/// fools the model (re-checked by a fresh forward pass) *and* meets the
/// similarity threshold; the adversarial sequence always has the original
/// length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub status: AttackStatus,
    pub success: bool,
    pub adversarial: TokenSequence,
    pub iterations: usize,
    pub final_alpha: f64,
    pub final_lr: f64,
    pub adversarial_loss: f64,
    pub similarity: f64,
    pub token_error_rate: f64,
}

/// Mutable state of one attack run: the continuous iterate e_g, the last
/// projected sentence e_p, the buffer of sentences already visited, the
/// global iteration counter, and Adam moments over e_g.
pub struct AttackState<T> {
    pub continuous: Tensor<T>,
    pub projected: TokenSequence,
    pub buffer: HashSet<Vec<usize>>,
    pub iterations: usize,
    pub adam: AdamState<T>,
}

impl<T: Real> AttackState<T> {
    /// The original sentence is pre-seeded into the buffer and stands as the
    /// initial projection, so `f(e_p)` is defined before the first step.
    pub fn new(input: &TokenSequence, embeddings: Tensor<T>) -> Self {
        let mut buffer = HashSet::new();
        buffer.insert(input.ids.clone());
        AttackState {
            adam: AdamState::new(embeddings.shape()),
            continuous: embeddings,
            projected: input.clone(),
            buffer,
            iterations: 0,
        }
    }

    /// Fresh optimizer moments for a new (lr, α) schedule point; the
    /// continuous iterate and the buffer persist.
    pub fn reset_adam(&mut self) {
        self.adam = AdamState::new(self.continuous.shape());
    }
}

/// Eq.-style adversarial loss: the negative cross entropy of the classifier
/// at `e_adv` against the true label. Unbounded below.
pub fn adversarial_loss<T: Real, M: TargetModel<T>>(
    model: &M,
    e_adv: &Tensor<T>,
    label: usize,
) -> Result<T> {
    Ok(-model.loss(e_adv, label)?)
}

/// ℓ1-of-ℓ2 block penalty: Σᵢ ‖rᵢ‖₂ over the rows of the perturbation.
/// Non-negative, zero exactly when the perturbation is zero.
pub fn block_sparse_loss<T: Real>(perturbation: &Tensor<T>) -> T {
    (0..perturbation.rows()).fold(T::zero(), |acc, i| acc + slice_l2_norm(perturbation.row(i)))
}

fn perturbation<T: Real>(e_x: &Tensor<T>, e_adv: &Tensor<T>) -> Result<Tensor<T>> {
    if e_x.shape() != e_adv.shape() {
        return Err(Error::shape(
            "perturbation",
            format!("{:?} vs {:?}", e_x.shape(), e_adv.shape()),
        ));
    }
    let data = e_adv
        .data()
        .iter()
        .zip(e_x.data())
        .map(|(&a, &b)| a - b)
        .collect();
    Tensor::new(e_x.shape().to_vec(), data)
}

/// Joint objective: `adversarial_loss(e_adv) + α · block_sparse_loss(e_adv − e_x)`.
pub fn objective<T: Real, M: TargetModel<T>>(
    model: &M,
    e_x: &Tensor<T>,
    e_adv: &Tensor<T>,
    label: usize,
    alpha: f64,
) -> Result<T> {
    if alpha < 0.0 {
        return Err(Error::arg("objective weight α must be non-negative"));
    }
    let r = perturbation(e_x, e_adv)?;
    Ok(adversarial_loss(model, e_adv, label)? + T::of(alpha) * block_sparse_loss(&r))
}

/// Objective value and its gradient with respect to `e_adv`: the negated
/// cross-entropy gradient plus α times the block subgradient, which is
/// `rᵢ/‖rᵢ‖₂` per row and zero on rows with exactly zero perturbation.
pub fn objective_gradient<T: Real, M: TargetModel<T>>(
    model: &M,
    e_x: &Tensor<T>,
    e_adv: &Tensor<T>,
    label: usize,
    alpha: f64,
) -> Result<(T, Tensor<T>)> {
    if alpha < 0.0 {
        return Err(Error::arg("objective weight α must be non-negative"));
    }
    let r = perturbation(e_x, e_adv)?;
    let (loss, loss_grad) = model.loss_and_input_gradient(e_adv, label)?;
    let a = T::of(alpha);
    let mut grad = Tensor::zeros(e_adv.shape().to_vec());
    for i in 0..r.rows() {
        let norm = slice_l2_norm(r.row(i));
        let dst = grad.row_mut(i);
        let lg = loss_grad.row(i);
        if norm > T::zero() {
            for (j, d) in dst.iter_mut().enumerate() {
                *d = -lg[j] + a * r.row(i)[j] / norm;
            }
        } else {
            for (j, d) in dst.iter_mut().enumerate() {
                *d = -lg[j];
            }
        }
    }
    Ok((-loss + a * block_sparse_loss(&r), grad))
}

/// One attack iteration: gradient of the objective at the continuous iterate,
/// an Adam step, projection of every row onto its nearest token, and a buffer
/// check. When the projected sentence is new it is accepted: the buffer takes
/// it and the continuous iterate is overwritten with its embeddings. On a
/// buffer hit the continuous iterate keeps drifting, which is the escape
/// mechanism from projection loops. Returns whether the step was accepted;
/// the iteration counter advances either way.
pub fn attack_step<T: Real, M: TargetModel<T>>(
    state: &mut AttackState<T>,
    model: &M,
    table: &EmbeddingTable<T>,
    e_x: &Tensor<T>,
    label: usize,
    alpha: f64,
    lr: f64,
) -> Result<bool> {
    let (_, grad) = objective_gradient(model, e_x, &state.continuous, label, alpha)?;
    if !grad.is_finite() {
        return Err(Error::NonFiniteGradient(format!(
            "attack aborted at iteration {}: objective gradient has NaN/Inf entries",
            state.iterations
        )));
    }
    adam_step(&mut state.continuous, &grad, &mut state.adam, T::of(lr))?;

    let candidate = table.project_rows(&state.continuous, &HashSet::new())?;
    let accepted = !state.buffer.contains(&candidate.ids);
    if accepted {
        state.buffer.insert(candidate.ids.clone());
        state.continuous = table.embed_sequence(&candidate)?;
        state.projected = candidate;
    }
    state.iterations += 1;
    Ok(accepted)
}

/// Sentences accepted into the buffer during one run, in order; used by
/// diagnostics and the property suite.
#[derive(Clone, Debug, Default)]
pub struct AttackTrace {
    pub accepted: Vec<Vec<usize>>,
    pub steps: usize,
}

/// Run the full attack on one input. The model's prediction must match
/// `label` for an attack to make sense; otherwise the input is reported as
/// skipped with zero perturbation.
pub fn run_attack<T: Real, M: TargetModel<T>>(
    model: &M,
    table: &EmbeddingTable<T>,
    input: &TokenSequence,
    label: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    run_attack_traced(model, table, input, label, cfg).map(|(result, _)| result)
}

/// [`run_attack`] plus the acceptance trace.
pub fn run_attack_traced<T: Real, M: TargetModel<T>>(
    model: &M,
    table: &EmbeddingTable<T>,
    input: &TokenSequence,
    label: usize,
    cfg: &AttackConfig,
) -> Result<(AttackResult, AttackTrace)> {
    cfg.validate()?;
    if input.is_empty() {
        return Err(Error::arg("cannot attack an empty token sequence"));
    }
    if label >= model.class_count() {
        return Err(Error::arg(format!(
            "label {label} out of range for {} classes",
            model.class_count()
        )));
    }
    let n = input.len();
    let e_x = table.embed_sequence(input)?;
    let mut trace = AttackTrace::default();

    if model.predict(&e_x)? != label {
        let result = AttackResult {
            status: AttackStatus::SkippedAlreadyMisclassified,
            success: false,
            adversarial: input.clone(),
            iterations: 0,
            final_alpha: 0.0,
            final_lr: 0.0,
            adversarial_loss: adversarial_loss(model, &e_x, label)?.as_f64(),
            similarity: 1.0,
            token_error_rate: 0.0,
        };
        return Ok((result, trace));
    }

    let mut state = AttackState::new(input, e_x.clone());
    // Best fooling-but-dissimilar sentence seen, by similarity.
    let mut best_failure: Option<(TokenSequence, f64, f64, f64)> = None;
    let mut last_point = (0.0, 0.0);

    'schedule: for &lr in &cfg.lr_schedule {
        for &alpha_base in &cfg.alpha_schedule {
            let alpha = alpha_base / n as f64;
            last_point = (alpha, lr);
            state.reset_adam();
            // Each schedule point restarts the continuous search from the
            // best discrete iterate so far (the input on first entry); a
            // stalled point must not poison the next one with its drift.
            state.continuous = table.embed_sequence(&state.projected)?;
            let mut since_acceptance = 0usize;
            loop {
                if state.iterations >= cfg.max_iterations {
                    break 'schedule;
                }
                let accepted = attack_step(&mut state, model, table, &e_x, label, alpha, lr)?;
                if !accepted {
                    since_acceptance += 1;
                    if since_acceptance >= cfg.stall_patience {
                        // This setting is stuck cycling buffered sentences;
                        // count it as failed and escalate.
                        break;
                    }
                    continue;
                }
                since_acceptance = 0;
                trace.accepted.push(state.projected.ids.clone());
                let e_p = table.embed_sequence(&state.projected)?;
                if model.predict(&e_p)? == label {
                    continue;
                }
                let sim = similarity_proxy(input, &state.projected, table)?;
                if sim >= cfg.similarity_threshold {
                    // Success gate: re-verify with a fresh forward pass.
                    if model.predict(&table.embed_sequence(&state.projected)?)? == label {
                        return Err(Error::arg(
                            "success re-verification failed; model forward is not deterministic",
                        ));
                    }
                    trace.steps = state.iterations;
                    let result = AttackResult {
                        status: AttackStatus::Succeeded,
                        success: true,
                        adversarial: state.projected.clone(),
                        iterations: state.iterations,
                        final_alpha: alpha,
                        final_lr: lr,
                        adversarial_loss: adversarial_loss(model, &e_p, label)?.as_f64(),
                        similarity: sim,
                        token_error_rate: token_error_rate(input, &state.projected)?,
                    };
                    return Ok((result, trace));
                }
                // Counted as a failed attack; remember it and move to the
                // next, more aggressive schedule point.
                if best_failure.as_ref().is_none_or(|b| sim > b.1) {
                    best_failure = Some((state.projected.clone(), sim, alpha, lr));
                }
                break;
            }
        }
    }

    trace.steps = state.iterations;
    let result = match best_failure {
        Some((candidate, sim, alpha, lr)) => {
            let e_c = table.embed_sequence(&candidate)?;
            AttackResult {
                status: AttackStatus::BelowSimilarityThreshold,
                success: false,
                token_error_rate: token_error_rate(input, &candidate)?,
                adversarial_loss: adversarial_loss(model, &e_c, label)?.as_f64(),
                adversarial: candidate,
                iterations: state.iterations,
                final_alpha: alpha,
                final_lr: lr,
                similarity: sim,
            }
        }
        None => AttackResult {
            status: AttackStatus::ExhaustedBudget,
            success: false,
            adversarial: input.clone(),
            iterations: state.iterations,
            final_alpha: last_point.0,
            final_lr: last_point.1,
            adversarial_loss: adversarial_loss(model, &e_x, label)?.as_f64(),
            similarity: 1.0,
            token_error_rate: 0.0,
        },
    };
    Ok((result, trace))
}
