//! A small trainable transformer encoder classifier: learned token and
//! positional embeddings, pre-norm attention/MLP blocks, masked mean pooling,
//! and a linear classification head.

use crate::error::{Error, Result};
use crate::model::argmax_lowest;
use crate::numerics::{Real, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const LAYER_NORM_EPS: f64 = 1e-5;
const MASKED_SCORE: f64 = -1e9;
const INIT_STD: f64 = 0.02;
// Token embeddings start at the attack's step scale (lr ≈ 0.15): one
// projected gradient step must be able to cross a cosine cell without
// scrambling every row, which needs coordinate std comparable to lr.
const EMBED_INIT_STD: f64 = 0.35;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub classes: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::arg(format!(
                "model dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.classes < 2 {
            return Err(Error::arg("classifier needs at least 2 classes"));
        }
        if self.max_len == 0 {
            return Err(Error::arg("max_len must be positive"));
        }
        if self.vocab_size == 0 {
            return Err(Error::arg("vocab_size must be positive"));
        }
        Ok(())
    }

    pub fn mlp_hidden(&self) -> usize {
        4 * self.dim
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerParams<T> {
    pub ln1_gamma: Tensor<T>,
    pub ln1_beta: Tensor<T>,
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
    pub ln2_gamma: Tensor<T>,
    pub ln2_beta: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

/// Transformer text classifier. Parameters are plain tensors; every forward
/// pass is recorded on a fresh [`Tape`], which is also how input gradients
/// and training gradients are obtained.
#[derive(Clone, Debug)]
pub struct ClassifierModel<T> {
    config: ModelConfig,
    token_embedding: Tensor<T>,
    positional: Tensor<T>,
    layers: Vec<LayerParams<T>>,
    final_ln_gamma: Tensor<T>,
    final_ln_beta: Tensor<T>,
    head_w: Tensor<T>,
    head_b: Tensor<T>,
}

/// How the forward graph receives its input sequence.
pub enum GraphInput<'a> {
    /// Token ids, embedded by gathering rows of the token-embedding parameter
    /// (the training path).
    Ids(&'a [usize]),
    /// An already-recorded `n × d` embedding variable (the attack path, where
    /// the caller decides whether it is differentiable).
    Embeddings(Var),
}

impl<T: Real> ClassifierModel<T> {
    /// Random initialization: N(0, 0.02²) weights, N(0, 0.15²) token
    /// embeddings, unit layer-norm gains, zero biases, and a zero
    /// classification head.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal_std = |shape: Vec<usize>, std: f64| -> Tensor<T> {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::of(z * std)
                })
                .collect();
            Tensor::new(shape, data).expect("init shape")
        };
        let token_embedding = normal_std(vec![config.vocab_size, config.dim], EMBED_INIT_STD);
        let mut normal = |shape: Vec<usize>| normal_std(shape, INIT_STD);
        let d = config.dim;
        let hidden = config.mlp_hidden();
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                ln1_gamma: ones(d),
                ln1_beta: Tensor::zeros(vec![d]),
                wq: normal(vec![d, d]),
                bq: Tensor::zeros(vec![d]),
                wk: normal(vec![d, d]),
                bk: Tensor::zeros(vec![d]),
                wv: normal(vec![d, d]),
                bv: Tensor::zeros(vec![d]),
                wo: normal(vec![d, d]),
                bo: Tensor::zeros(vec![d]),
                ln2_gamma: ones(d),
                ln2_beta: Tensor::zeros(vec![d]),
                w1: normal(vec![d, hidden]),
                b1: Tensor::zeros(vec![hidden]),
                w2: normal(vec![hidden, d]),
                b2: Tensor::zeros(vec![d]),
            })
            .collect();
        Ok(ClassifierModel {
            token_embedding,
            positional: normal(vec![config.max_len, d]),
            layers,
            final_ln_gamma: ones(d),
            final_ln_beta: Tensor::zeros(vec![d]),
            head_w: Tensor::zeros(vec![d, config.classes]),
            head_b: Tensor::zeros(vec![config.classes]),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn token_embedding(&self) -> &Tensor<T> {
        &self.token_embedding
    }

    /// Parameter names in canonical (checkpoint) order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["token_embedding".to_string(), "positional".to_string()];
        for i in 0..self.layers.len() {
            for field in [
                "ln1_gamma",
                "ln1_beta",
                "wq",
                "bq",
                "wk",
                "bk",
                "wv",
                "bv",
                "wo",
                "bo",
                "ln2_gamma",
                "ln2_beta",
                "w1",
                "b1",
                "w2",
                "b2",
            ] {
                names.push(format!("layer{i}.{field}"));
            }
        }
        names.push("final_ln_gamma".to_string());
        names.push("final_ln_beta".to_string());
        names.push("head_w".to_string());
        names.push("head_b".to_string());
        names
    }

    /// Parameter tensors in canonical order, matching [`Self::param_names`].
    pub fn param_tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.token_embedding, &self.positional];
        for layer in &self.layers {
            out.extend([
                &layer.ln1_gamma,
                &layer.ln1_beta,
                &layer.wq,
                &layer.bq,
                &layer.wk,
                &layer.bk,
                &layer.wv,
                &layer.bv,
                &layer.wo,
                &layer.bo,
                &layer.ln2_gamma,
                &layer.ln2_beta,
                &layer.w1,
                &layer.b1,
                &layer.w2,
                &layer.b2,
            ]);
        }
        out.extend([
            &self.final_ln_gamma,
            &self.final_ln_beta,
            &self.head_w,
            &self.head_b,
        ]);
        out
    }

    /// Mutable parameter tensors in canonical order (optimizers, surgery).
    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = vec![&mut self.token_embedding, &mut self.positional];
        for layer in &mut self.layers {
            let LayerParams {
                ln1_gamma,
                ln1_beta,
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln2_gamma,
                ln2_beta,
                w1,
                b1,
                w2,
                b2,
            } = layer;
            out.extend([
                ln1_gamma, ln1_beta, wq, bq, wk, bk, wv, bv, wo, bo, ln2_gamma, ln2_beta, w1, b1,
                w2, b2,
            ]);
        }
        out.extend([
            &mut self.final_ln_gamma,
            &mut self.final_ln_beta,
            &mut self.head_w,
            &mut self.head_b,
        ]);
        out
    }

    /// Bind every parameter onto `tape`, as differentiable inputs (training,
    /// gradient verification) or constants (inference, attacks).
    pub fn bind_params(&self, tape: &mut Tape<T>, as_inputs: bool) -> Vec<Var> {
        self.param_tensors()
            .into_iter()
            .map(|t| {
                if as_inputs {
                    tape.input(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Record the logits computation on `tape` using externally supplied
    /// parameter variables (canonical order). Returns the `[1, C]` logits var.
    pub fn graph_logits(
        &self,
        tape: &mut Tape<T>,
        input: GraphInput<'_>,
        param_vars: &[Var],
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let expected = self.param_tensors().len();
        if param_vars.len() != expected {
            return Err(Error::arg(format!(
                "expected {expected} parameter vars, got {}",
                param_vars.len()
            )));
        }
        let n = match &input {
            GraphInput::Ids(ids) => ids.len(),
            GraphInput::Embeddings(v) => tape.value(*v).rows(),
        };
        if n == 0 {
            return Err(Error::arg("cannot run the classifier on an empty sequence"));
        }
        if n > self.config.max_len {
            return Err(Error::arg(format!(
                "sequence length {n} exceeds max_len {}",
                self.config.max_len
            )));
        }
        if let Some(m) = mask {
            if m.len() != n {
                return Err(Error::shape(
                    "attention-mask",
                    "mask length != sequence length",
                ));
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::arg("attention mask excludes every position"));
            }
        }

        let mut vars = param_vars.iter().copied();
        let mut next = || vars.next().expect("param var count checked above");
        let token_emb = next();
        let positional = next();

        let x0 = match input {
            GraphInput::Ids(ids) => tape.gather_rows(token_emb, ids)?,
            GraphInput::Embeddings(v) => {
                if tape.value(v).cols() != self.config.dim {
                    return Err(Error::shape(
                        "classifier-input",
                        format!(
                            "embedding width {} != model dim {}",
                            tape.value(v).cols(),
                            self.config.dim
                        ),
                    ));
                }
                v
            }
        };
        let pos_ids: Vec<usize> = (0..n).collect();
        let pos = tape.gather_rows(positional, &pos_ids)?;
        let mut x = tape.add(x0, pos)?;

        let eps = T::of(LAYER_NORM_EPS);
        let head_dim = self.config.dim / self.config.heads;
        let inv_sqrt = T::of(1.0 / (head_dim as f64).sqrt());
        let score_bias = mask.map(|m| {
            let data = (0..n * n)
                .map(|i| {
                    if m[i % n] {
                        T::zero()
                    } else {
                        T::of(MASKED_SCORE)
                    }
                })
                .collect();
            let bias = Tensor::new(vec![n, n], data).expect("mask bias shape");
            tape.constant(bias)
        });

        for _ in 0..self.config.layers {
            let (ln1_g, ln1_b) = (next(), next());
            let (wq, bq, wk, bk, wv, bv, wo, bo) = (
                next(),
                next(),
                next(),
                next(),
                next(),
                next(),
                next(),
                next(),
            );
            let (ln2_g, ln2_b) = (next(), next());
            let (w1, b1, w2, b2) = (next(), next(), next(), next());

            let h = tape.layer_norm(x, ln1_g, ln1_b, eps)?;
            let q = tape.matmul(h, wq)?;
            let q = tape.add_bias(q, bq)?;
            let k = tape.matmul(h, wk)?;
            let k = tape.add_bias(k, bk)?;
            let v = tape.matmul(h, wv)?;
            let v = tape.add_bias(v, bv)?;

            let mut heads = Vec::with_capacity(self.config.heads);
            for hd in 0..self.config.heads {
                let (lo, hi) = (hd * head_dim, (hd + 1) * head_dim);
                let qh = tape.slice_cols(q, lo, hi)?;
                let kh = tape.slice_cols(k, lo, hi)?;
                let vh = tape.slice_cols(v, lo, hi)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let mut scores = tape.scale(scores, inv_sqrt);
                if let Some(bias) = score_bias {
                    scores = tape.add(scores, bias)?;
                }
                let attn = tape.softmax(scores)?;
                heads.push(tape.matmul(attn, vh)?);
            }
            let merged = tape.concat_cols(&heads)?;
            let proj = tape.matmul(merged, wo)?;
            let proj = tape.add_bias(proj, bo)?;
            x = tape.add(x, proj)?;

            let h2 = tape.layer_norm(x, ln2_g, ln2_b, eps)?;
            let m1 = tape.matmul(h2, w1)?;
            let m1 = tape.add_bias(m1, b1)?;
            let act = tape.gelu(m1);
            let m2 = tape.matmul(act, w2)?;
            let m2 = tape.add_bias(m2, b2)?;
            x = tape.add(x, m2)?;
        }

        let (fg, fb) = (next(), next());
        let xf = tape.layer_norm(x, fg, fb, eps)?;

        // Masked mean pooling as a constant [1, n] weight row.
        let kept: Vec<usize> = match mask {
            Some(m) => (0..n).filter(|&i| m[i]).collect(),
            None => (0..n).collect(),
        };
        let w = T::of(1.0 / kept.len() as f64);
        let mut pool = vec![T::zero(); n];
        for i in kept {
            pool[i] = w;
        }
        let pool = tape.constant(Tensor::new(vec![1, n], pool).expect("pool shape"));
        let pooled = tape.matmul(pool, xf)?;

        let (head_w, head_b) = (next(), next());
        let logits = tape.matmul(pooled, head_w)?;
        tape.add_bias(logits, head_b)
    }

    /// Record logits followed by cross entropy against `label`.
    pub fn graph_loss(
        &self,
        tape: &mut Tape<T>,
        input: GraphInput<'_>,
        param_vars: &[Var],
        label: usize,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        if label >= self.config.classes {
            return Err(Error::arg(format!(
                "label {label} out of range for {} classes",
                self.config.classes
            )));
        }
        let logits = self.graph_logits(tape, input, param_vars, mask)?;
        tape.cross_entropy(logits, label)
    }

    /// Deterministic logits for an `n × d` embedding sequence.
    pub fn forward_logits(&self, embeddings: &Tensor<T>, mask: Option<&[bool]>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let params = self.bind_params(&mut tape, false);
        let e = tape.constant(embeddings.clone());
        let logits = self.graph_logits(&mut tape, GraphInput::Embeddings(e), &params, mask)?;
        let out = tape.value(logits);
        if !out.is_finite() {
            return Err(Error::NonFinite {
                op: "forward-logits",
            });
        }
        Ok(out.data().to_vec())
    }

    /// Predicted class: argmax logit, ties broken by lowest class id.
    pub fn predict(&self, embeddings: &Tensor<T>, mask: Option<&[bool]>) -> Result<usize> {
        Ok(argmax_lowest(&self.forward_logits(embeddings, mask)?))
    }

    /// Cross-entropy loss of softmax(logits) against `label`.
    pub fn loss(&self, embeddings: &Tensor<T>, label: usize, mask: Option<&[bool]>) -> Result<T> {
        let mut tape = Tape::new();
        let params = self.bind_params(&mut tape, false);
        let e = tape.constant(embeddings.clone());
        let loss = self.graph_loss(&mut tape, GraphInput::Embeddings(e), &params, label, mask)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "loss" });
        }
        Ok(value)
    }

    /// Loss and its `n × d` gradient with respect to the input embeddings
    /// only; parameter gradients are not computed or returned.
    pub fn input_gradient(
        &self,
        embeddings: &Tensor<T>,
        label: usize,
        mask: Option<&[bool]>,
    ) -> Result<(T, Tensor<T>)> {
        let mut tape = Tape::new();
        let params = self.bind_params(&mut tape, false);
        let e = tape.input(embeddings.clone());
        let loss = self.graph_loss(&mut tape, GraphInput::Embeddings(e), &params, label, mask)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let g = grads.wrt_or_zeros(e, embeddings.shape());
        if !value.is_finite() || !g.is_finite() {
            return Err(Error::NonFinite {
                op: "input-gradient",
            });
        }
        Ok((value, g))
    }

    /// Precision conversion for verification suites.
    pub fn cast<U: Real>(&self) -> ClassifierModel<U> {
        ClassifierModel {
            config: self.config.clone(),
            token_embedding: self.token_embedding.cast(),
            positional: self.positional.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_gamma: l.ln1_gamma.cast(),
                    ln1_beta: l.ln1_beta.cast(),
                    wq: l.wq.cast(),
                    bq: l.bq.cast(),
                    wk: l.wk.cast(),
                    bk: l.bk.cast(),
                    wv: l.wv.cast(),
                    bv: l.bv.cast(),
                    wo: l.wo.cast(),
                    bo: l.bo.cast(),
                    ln2_gamma: l.ln2_gamma.cast(),
                    ln2_beta: l.ln2_beta.cast(),
                    w1: l.w1.cast(),
                    b1: l.b1.cast(),
                    w2: l.w2.cast(),
                    b2: l.b2.cast(),
                })
                .collect(),
            final_ln_gamma: self.final_ln_gamma.cast(),
            final_ln_beta: self.final_ln_beta.cast(),
            head_w: self.head_w.cast(),
            head_b: self.head_b.cast(),
        }
    }
}

fn ones<T: Real>(n: usize) -> Tensor<T> {
    Tensor::new(vec![n], vec![T::one(); n]).expect("ones shape")
}
