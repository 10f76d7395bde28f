//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::numerics::tensor::{Real, Tensor};

/// Per-parameter Adam state: first/second moment estimates and step count.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub first_moment: Tensor<T>,
    pub second_moment: Tensor<T>,
    pub step_count: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Real> AdamState<T> {
    /// Fresh state for a parameter of the given shape, with the conventional
    /// defaults β1=0.9, β2=0.999, ε=1e-8.
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            first_moment: Tensor::zeros(shape.to_vec()),
            second_moment: Tensor::zeros(shape.to_vec()),
            step_count: 0,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
        }
    }
}

/// One bias-corrected Adam update, in place. Rejects non-finite gradients (and
/// non-positive learning rates) without touching `params` or `state`.
pub fn adam_step<T: Real>(
    params: &mut Tensor<T>,
    grads: &Tensor<T>,
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    if params.shape() != grads.shape() || params.shape() != state.first_moment.shape() {
        return Err(Error::shape(
            "adam-step",
            format!(
                "params {:?}, grads {:?}, moments {:?}",
                params.shape(),
                grads.shape(),
                state.first_moment.shape()
            ),
        ));
    }
    if lr <= T::zero() {
        return Err(Error::arg("adam-step: learning rate must be positive"));
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient(
            "adam-step received NaN/Inf gradient entries; update rejected".into(),
        ));
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);

    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    let p = params.data_mut();
    let g = grads.data();
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (T::one() - b1) * g[i];
        v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
