//! Seeded mini-batch training for the transformer classifier.

use crate::error::{Error, Result};
use crate::model::argmax_lowest;
use crate::model::transformer::{ClassifierModel, GraphInput};
use crate::numerics::{adam_step, AdamState, Real, Tape, Tensor};
use crate::vocab::PAD_ID;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Per-epoch training trace.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// Train in place on `(token ids, label)` pairs. Batches are padded to the
/// batch maximum with PAD and attention-masked so padding cannot leak into
/// predictions. Deterministic for a fixed seed: same seed, same final weights.
pub fn train<T: Real>(
    model: &mut ClassifierModel<T>,
    examples: &[(Vec<usize>, usize)],
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    if examples.is_empty() {
        return Err(Error::arg("cannot train on an empty dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::arg("batch_size must be positive"));
    }
    if cfg.learning_rate <= 0.0 {
        return Err(Error::arg("learning rate must be positive"));
    }
    let classes = model.config().classes;
    let max_len = model.config().max_len;
    for (i, (ids, label)) in examples.iter().enumerate() {
        if *label >= classes {
            return Err(Error::arg(format!(
                "example {i}: label {label} out of range for {classes} classes"
            )));
        }
        if ids.is_empty() {
            return Err(Error::arg(format!("example {i}: empty token sequence")));
        }
        if ids.len() > max_len {
            return Err(Error::arg(format!(
                "example {i}: length {} exceeds max_len {max_len}",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= model.config().vocab_size) {
            return Err(Error::arg(format!(
                "example {i}: token id {bad} out of range"
            )));
        }
    }

    let lr = T::of(cfg.learning_rate);
    let shapes: Vec<Vec<usize>> = model
        .param_tensors()
        .iter()
        .map(|t| t.shape().to_vec())
        .collect();
    let mut adam: Vec<AdamState<T>> = shapes.iter().map(|s| AdamState::new(s)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            let width = batch
                .iter()
                .map(|&i| examples[i].0.len())
                .max()
                .expect("non-empty batch");
            let mut grad_acc: Vec<Tensor<T>> =
                shapes.iter().map(|s| Tensor::zeros(s.clone())).collect();
            let scale = T::of(1.0 / batch.len() as f64);

            for &idx in batch {
                let (ids, label) = &examples[idx];
                let mut padded = ids.clone();
                padded.resize(width, PAD_ID);
                let mask: Vec<bool> = (0..width).map(|p| p < ids.len()).collect();

                let mut tape = Tape::new();
                let params = model.bind_params(&mut tape, true);
                let logits = model.graph_logits(
                    &mut tape,
                    GraphInput::Ids(&padded),
                    &params,
                    Some(&mask),
                )?;
                let loss = tape.cross_entropy(logits, *label)?;

                let loss_value = tape.value(loss).item();
                if !loss_value.is_finite() {
                    return Err(Error::NonFinite { op: "train-loss" });
                }
                loss_sum += loss_value.as_f64();
                if argmax_lowest(tape.value(logits).data()) == *label {
                    correct += 1;
                }

                let grads = tape.backward(loss)?;
                for (acc, (&var, shape)) in grad_acc.iter_mut().zip(params.iter().zip(&shapes)) {
                    if let Some(g) = grads.wrt(var) {
                        debug_assert_eq!(g.shape(), shape.as_slice());
                        for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a = *a + b * scale;
                        }
                    }
                }
            }

            for ((param, grad), state) in model
                .param_tensors_mut()
                .into_iter()
                .zip(&grad_acc)
                .zip(adam.iter_mut())
            {
                adam_step(param, grad, state, lr)?;
            }
        }

        history.push(EpochStats {
            epoch,
            mean_loss: loss_sum / examples.len() as f64,
            accuracy: correct as f64 / examples.len() as f64,
        });
    }
    Ok(history)
}

/// Accuracy of the model on `(token ids, label)` pairs, without training.
pub fn evaluate_accuracy<T: Real>(
    model: &ClassifierModel<T>,
    examples: &[(Vec<usize>, usize)],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty dataset"));
    }
    let mut correct = 0usize;
    for (ids, label) in examples {
        let mut tape = Tape::new();
        let params = model.bind_params(&mut tape, false);
        let logits = model.graph_logits(&mut tape, GraphInput::Ids(ids), &params, None)?;
        if argmax_lowest(tape.value(logits).data()) == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::transformer::ModelConfig;

    fn keyword_examples() -> Vec<(Vec<usize>, usize)> {
        // Tokens 2 and 3 decide the class; 4..10 are filler.
        let mut out = Vec::new();
        for i in 0..40 {
            let filler = 4 + (i % 6);
            let other = 4 + ((i + 3) % 6);
            if i % 2 == 0 {
                out.push((vec![filler, 2, other], 0));
            } else {
                out.push((vec![other, 3, filler], 1));
            }
        }
        out
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            dim: 16,
            layers: 1,
            heads: 2,
            max_len: 8,
            classes: 2,
        }
    }

    #[test]
    fn separable_keyword_dataset_trains_above_99() {
        let mut model = ClassifierModel::<f32>::new(small_config(), 1).unwrap();
        let examples = keyword_examples();
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 8,
            learning_rate: 5e-3,
            seed: 1,
        };
        let history = train(&mut model, &examples, &cfg).unwrap();
        let last = history.last().unwrap();
        assert!(
            last.accuracy >= 0.99,
            "expected ≥0.99 train accuracy within 10 epochs, got {}",
            last.accuracy
        );
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let mut model = ClassifierModel::<f32>::new(small_config(), 2).unwrap();
        let before = model.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &keyword_examples(), &cfg).unwrap();
        assert!(history.is_empty());
        for (a, b) in model.param_tensors().iter().zip(before.param_tensors()) {
            assert_eq!(*a, b);
        }
    }

    #[test]
    fn same_seed_is_bit_reproducible() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 5e-3,
            seed: 9,
        };
        let examples = keyword_examples();
        let mut a = ClassifierModel::<f32>::new(small_config(), 5).unwrap();
        let mut b = ClassifierModel::<f32>::new(small_config(), 5).unwrap();
        let ha = train(&mut a, &examples, &cfg).unwrap();
        let hb = train(&mut b, &examples, &cfg).unwrap();
        assert_eq!(ha, hb);
        for (x, y) in a.param_tensors().iter().zip(b.param_tensors()) {
            assert_eq!(*x, y);
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut model = ClassifierModel::<f32>::new(small_config(), 3).unwrap();
        assert!(train(&mut model, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn out_of_range_label_rejected() {
        let mut model = ClassifierModel::<f32>::new(small_config(), 4).unwrap();
        let examples = vec![(vec![2, 3], 2usize)];
        assert!(train(&mut model, &examples, &TrainConfig::default()).is_err());
    }
}
