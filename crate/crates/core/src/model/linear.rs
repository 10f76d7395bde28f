//! Mean-pool linear classifier: the attention-free baseline used for
//! closed-form attack analysis and small-instance oracles.

use crate::error::{Error, Result};
use crate::model::TargetModel;
use crate::numerics::{Real, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// `logits = mean(rows) · W + b`. Linear in the pooled embedding, so the
/// input-gradient direction is known in closed form.
#[derive(Clone, Debug)]
pub struct MeanPoolLinear<T> {
    weight: Tensor<T>,
    bias: Tensor<T>,
}

impl<T: Real> MeanPoolLinear<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let [d, c] = weight.shape() else {
            return Err(Error::shape("mean-pool-linear", "weight must be [d, C]"));
        };
        if bias.shape() != [*c] {
            return Err(Error::shape("mean-pool-linear", "bias must be [C]"));
        }
        if *c < 2 || *d == 0 {
            return Err(Error::arg("mean-pool-linear needs d ≥ 1 and C ≥ 2"));
        }
        Ok(MeanPoolLinear { weight, bias })
    }

    pub fn random(dim: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dim * classes)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::of(z)
            })
            .collect();
        MeanPoolLinear::new(
            Tensor::new(vec![dim, classes], data)?,
            Tensor::zeros(vec![classes]),
        )
    }

    pub fn weight(&self) -> &Tensor<T> {
        &self.weight
    }

    fn graph_loss(
        &self,
        e: &Tensor<T>,
        label: usize,
    ) -> Result<(Tape<T>, crate::numerics::Var, crate::numerics::Var)> {
        let n = e.rows();
        if n == 0 {
            return Err(Error::arg("cannot classify an empty sequence"));
        }
        if e.cols() != self.weight.rows() {
            return Err(Error::shape(
                "mean-pool-linear",
                format!(
                    "input width {} != weight rows {}",
                    e.cols(),
                    self.weight.rows()
                ),
            ));
        }
        let mut tape = Tape::new();
        let input = tape.input(e.clone());
        let w = tape.constant(self.weight.clone());
        let b = tape.constant(self.bias.clone());
        let inv = T::of(1.0 / n as f64);
        let pool = tape.constant(Tensor::new(vec![1, n], vec![inv; n])?);
        let pooled = tape.matmul(pool, input)?;
        let z = tape.matmul(pooled, w)?;
        let logits = tape.add_bias(z, b)?;
        let loss = tape.cross_entropy(logits, label)?;
        Ok((tape, input, loss))
    }
}

impl<T: Real> TargetModel<T> for MeanPoolLinear<T> {
    fn class_count(&self) -> usize {
        self.bias.numel()
    }

    fn logits(&self, embeddings: &Tensor<T>) -> Result<Vec<T>> {
        let n = embeddings.rows();
        if n == 0 {
            return Err(Error::arg("cannot classify an empty sequence"));
        }
        let d = self.weight.rows();
        let c = self.class_count();
        let inv = T::of(1.0 / n as f64);
        let mut pooled = vec![T::zero(); d];
        for i in 0..n {
            for (p, &x) in pooled.iter_mut().zip(embeddings.row(i)) {
                *p = *p + x * inv;
            }
        }
        let mut logits = self.bias.data().to_vec();
        for (j, p) in pooled.iter().enumerate() {
            let wrow = self.weight.row(j);
            for k in 0..c {
                logits[k] = logits[k] + *p * wrow[k];
            }
        }
        Ok(logits)
    }

    fn loss(&self, embeddings: &Tensor<T>, label: usize) -> Result<T> {
        let (tape, _, loss) = self.graph_loss(embeddings, label)?;
        Ok(tape.value(loss).item())
    }

    fn loss_and_input_gradient(
        &self,
        embeddings: &Tensor<T>,
        label: usize,
    ) -> Result<(T, Tensor<T>)> {
        let (tape, input, loss) = self.graph_loss(embeddings, label)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        Ok((value, grads.wrt_or_zeros(input, embeddings.shape())))
    }
}
