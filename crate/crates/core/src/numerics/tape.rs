//! Reverse-mode automatic differentiation over a fixed primitive set.
//!
//! Operations are recorded eagerly on a [`Tape`]; replaying the tape backward
//! from a scalar output yields gradients for every input. The primitive set is
//! exactly what a transformer classifier and a block-sparse objective need:
//! matmul, add/sub/mul, scale, softmax, layer norm, GELU/ReLU, embedding
//! gather, cross entropy, row-wise ℓ2 norms, and reductions.

use crate::error::{Error, Result};
use crate::numerics::tensor::{slice_l2_norm, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Transpose {
        a: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    AddBias {
        a: Var,
        bias: Var,
    },
    Scale {
        a: Var,
        c: T,
    },
    Softmax {
        a: Var,
    },
    LayerNorm {
        a: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    },
    Gelu {
        a: Var,
    },
    Relu {
        a: Var,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
    },
    SumRowNorms {
        a: Var,
    },
    Sum {
        a: Var,
    },
    SliceCols {
        a: Var,
        start: usize,
        end: usize,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
}

impl<T> Op<T> {
    #[cfg(test)]
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Transpose { .. } => "transpose",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::AddBias { .. } => "add-bias",
            Op::Scale { .. } => "scale",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer-norm",
            Op::Gelu { .. } => "gelu",
            Op::Relu { .. } => "relu",
            Op::GatherRows { .. } => "gather-rows",
            Op::CrossEntropy { .. } => "cross-entropy",
            Op::SumRowNorms { .. } => "sum-row-norms",
            Op::Sum { .. } => "sum",
            Op::SliceCols { .. } => "slice-cols",
            Op::ConcatCols { .. } => "concat-cols",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Records primitive operations for one forward pass. Values are computed
/// eagerly, so `value(v)` is available as soon as an op is recorded. A tape is
/// confined to one logical thread; build a fresh one per evaluation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    #[cfg(test)]
    backward_fault: Option<(&'static str, T)>,
}

const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            #[cfg(test)]
            backward_fault: None,
        }
    }

    /// Scale the backward output of every op named `op` by `factor`; used to
    /// prove the gradient checker detects a corrupted primitive.
    #[cfg(test)]
    pub(crate) fn inject_backward_fault(&mut self, op: &'static str, factor: T) {
        self.backward_fault = Some((op, factor));
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Register a differentiable input.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Register a non-differentiable value (weights treated as fixed, masks,
    /// reference embeddings). Gradients still flow *through* ops that consume
    /// it, just not *into* it in any useful sense.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [m, k] => Ok((*m, *k)),
            other => Err(Error::shape(
                op,
                format!("expected 2D tensor, got {other:?}"),
            )),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.dims2(a, "matmul")?;
        let (kb, n) = self.dims2(b, "matmul")?;
        if ka != kb {
            return Err(Error::shape(
                "matmul",
                format!("inner dims disagree: [{m},{ka}] x [{kb},{n}]"),
            ));
        }
        let value = matmul_kernel(self.value(a), self.value(b));
        Ok(self.push(Op::MatMul { a, b }, value))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.dims2(a, "transpose")?;
        let value = transpose_kernel(self.value(a));
        Ok(self.push(Op::Transpose { a }, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = zip_kernel(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add { a, b }, value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = zip_kernel(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub { a, b }, value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = zip_kernel(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul { a, b }, value))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// `a` is `[m, k]`, `bias` is `[k]`; adds the bias to every row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, k) = self.dims2(a, "add-bias")?;
        if self.shape(bias) != [k] {
            return Err(Error::shape(
                "add-bias",
                format!("bias {:?} does not match row width {k}", self.shape(bias)),
            ));
        }
        let av = self.value(a);
        let bv = self.value(bias);
        let cols = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv.data()[i % cols])
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("add-bias shape");
        Ok(self.push(Op::AddBias { a, bias }, value))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = map_kernel(self.value(a), |x| x * c);
        self.push(Op::Scale { a, c }, value)
    }

    /// Row-wise softmax of a 1D or 2D tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() > 2 {
            return Err(Error::shape("softmax", "expected 1D or 2D tensor"));
        }
        let value = softmax_kernel(self.value(a));
        Ok(self.push(Op::Softmax { a }, value))
    }

    /// Row-wise layer normalization: `gamma ⊙ (x − μ)/√(σ² + eps) + beta`.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (_, d) = self.dims2(a, "layer-norm")?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(
                "layer-norm",
                format!(
                    "gamma {:?} / beta {:?} do not match row width {d}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let value = layer_norm_kernel(self.value(a), self.value(gamma), self.value(beta), eps);
        Ok(self.push(
            Op::LayerNorm {
                a,
                gamma,
                beta,
                eps,
            },
            value,
        ))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = map_kernel(self.value(a), gelu_scalar);
        self.push(Op::Gelu { a }, value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = map_kernel(self.value(a), |x| if x > T::zero() { x } else { T::zero() });
        self.push(Op::Relu { a }, value)
    }

    /// Embedding gather: selects rows of `table` (shape `[v, d]`) to build a
    /// `[ids.len(), d]` tensor. Backward scatter-adds into the table rows.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(table, "gather-rows")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::arg(format!(
                "gather-rows: id {bad} out of range for table with {v} rows"
            )));
        }
        let tv = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(tv.row(i));
        }
        let value = Tensor::new(vec![ids.len(), d], data).expect("gather shape");
        Ok(self.push(
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            value,
        ))
    }

    /// Cross entropy of softmax(logits) against an integer label; `logits` is
    /// a length-`C` vector (or `[1, C]`).
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let c = self.value(logits).numel();
        if self.value(logits).rows() != 1 {
            return Err(Error::shape("cross-entropy", "expected a single logit row"));
        }
        if label >= c {
            return Err(Error::arg(format!(
                "cross-entropy: label {label} out of range for {c} classes"
            )));
        }
        let z = self.value(logits).data();
        let loss = log_sum_exp(z) - z[label];
        let value = Tensor::scalar(loss);
        Ok(self.push(Op::CrossEntropy { logits, label }, value))
    }

    /// Σ over rows of the row ℓ2 norm — the ℓ1-of-ℓ2 block penalty. Rows with
    /// exactly zero norm use subgradient 0 in the backward pass.
    pub fn sum_row_norms(&mut self, a: Var) -> Result<Var> {
        self.dims2(a, "sum-row-norms")?;
        let av = self.value(a);
        let total = (0..av.rows()).fold(T::zero(), |acc, i| acc + slice_l2_norm(av.row(i)));
        Ok(self.push(Op::SumRowNorms { a }, Tensor::scalar(total)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self
            .value(a)
            .data()
            .iter()
            .fold(T::zero(), |acc, &x| acc + x);
        self.push(Op::Sum { a }, Tensor::scalar(total))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, k) = self.dims2(a, "slice-cols")?;
        if start >= end || end > k {
            return Err(Error::arg(format!(
                "slice-cols: range {start}..{end} invalid for width {k}"
            )));
        }
        let av = self.value(a);
        let mut data = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            data.extend_from_slice(&av.row(i)[start..end]);
        }
        let value = Tensor::new(vec![m, end - start], data).expect("slice shape");
        Ok(self.push(Op::SliceCols { a, start, end }, value))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::arg("concat-cols: no parts"));
        }
        let (m, _) = self.dims2(parts[0], "concat-cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (mp, kp) = self.dims2(p, "concat-cols")?;
            if mp != m {
                return Err(Error::shape("concat-cols", "row counts disagree"));
            }
            widths.push(kp);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(vec![m, total], data).expect("concat shape");
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            value,
        ))
    }

    /// Backpropagate from a scalar output. Returns one gradient slot per
    /// recorded node; query with [`Gradients::wrt`].
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if !self.value(output).is_scalar() {
            return Err(Error::arg(
                "backward requires a scalar output (use sum to reduce first)",
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..self.nodes.len()).rev() {
            let Some(g_out) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            #[allow(unused_mut)]
            let mut contribs = self.op_backward(&node.op, &node.value, &g_out);
            #[cfg(test)]
            if let Some((name, factor)) = self.backward_fault {
                if node.op.name() == name {
                    for (_, c) in contribs.iter_mut() {
                        for v in c.data_mut() {
                            *v = *v * factor;
                        }
                    }
                }
            }
            grads[idx] = Some(g_out);
            for (var, c) in contribs {
                match &mut grads[var.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(c.data()) {
                            *a = *a + *b;
                        }
                    }
                    slot => *slot = Some(c),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn op_backward(&self, op: &Op<T>, value: &Tensor<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul { a, b } => {
                let bt = transpose_kernel(self.value(*b));
                let at = transpose_kernel(self.value(*a));
                vec![(*a, matmul_kernel(g, &bt)), (*b, matmul_kernel(&at, g))]
            }
            Op::Transpose { a } => vec![(*a, transpose_kernel(g))],
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub { a, b } => vec![(*a, g.clone()), (*b, map_kernel(g, |x| -x))],
            Op::Mul { a, b } => vec![
                (*a, zip_kernel(g, self.value(*b), |x, y| x * y)),
                (*b, zip_kernel(g, self.value(*a), |x, y| x * y)),
            ],
            Op::AddBias { a, bias } => {
                let cols = self.value(*bias).numel();
                let mut gb = vec![T::zero(); cols];
                for (i, &gv) in g.data().iter().enumerate() {
                    gb[i % cols] = gb[i % cols] + gv;
                }
                vec![
                    (*a, g.clone()),
                    (*bias, Tensor::new(vec![cols], gb).expect("bias grad shape")),
                ]
            }
            Op::Scale { a, c } => vec![(*a, map_kernel(g, |x| x * *c))],
            Op::Softmax { a } => vec![(*a, softmax_backward(value, g))],
            Op::LayerNorm {
                a,
                gamma,
                beta,
                eps,
            } => {
                let (ga, gg, gb) = layer_norm_backward(self.value(*a), self.value(*gamma), *eps, g);
                vec![(*a, ga), (*gamma, gg), (*beta, gb)]
            }
            Op::Gelu { a } => vec![(
                *a,
                zip_kernel(g, self.value(*a), |gv, x| gv * gelu_grad_scalar(x)),
            )],
            Op::Relu { a } => vec![(
                *a,
                zip_kernel(g, self.value(*a), |gv, x| {
                    if x > T::zero() {
                        gv
                    } else {
                        T::zero()
                    }
                }),
            )],
            Op::GatherRows { table, ids } => {
                let tv = self.value(*table);
                let mut gt = Tensor::zeros(tv.shape().to_vec());
                let d = tv.cols();
                for (out_row, &id) in ids.iter().enumerate() {
                    let src = g.row(out_row);
                    let dst = &mut gt.row_mut(id)[..d];
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a = *a + *b;
                    }
                }
                vec![(*table, gt)]
            }
            Op::CrossEntropy { logits, label } => {
                let z = self.value(*logits).data();
                let p = softmax_row(z);
                let go = g.item();
                let data = p
                    .iter()
                    .enumerate()
                    .map(|(i, &pi)| {
                        let onehot = if i == *label { T::one() } else { T::zero() };
                        go * (pi - onehot)
                    })
                    .collect();
                vec![(
                    *logits,
                    Tensor::new(self.value(*logits).shape().to_vec(), data).expect("ce grad shape"),
                )]
            }
            Op::SumRowNorms { a } => {
                let av = self.value(*a);
                let go = g.item();
                let mut ga = Tensor::zeros(av.shape().to_vec());
                for i in 0..av.rows() {
                    let norm = slice_l2_norm(av.row(i));
                    if norm > T::zero() {
                        let dst = ga.row_mut(i);
                        for (d, &x) in dst.iter_mut().zip(av.row(i)) {
                            *d = go * x / norm;
                        }
                    }
                }
                vec![(*a, ga)]
            }
            Op::Sum { a } => {
                let go = g.item();
                let av = self.value(*a);
                vec![(
                    *a,
                    Tensor::new(av.shape().to_vec(), vec![go; av.numel()]).expect("sum grad shape"),
                )]
            }
            Op::SliceCols { a, start, end } => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.shape().to_vec());
                for i in 0..av.rows() {
                    let src = g.row(i);
                    let dst = &mut ga.row_mut(i)[*start..*end];
                    dst.copy_from_slice(src);
                }
                vec![(*a, ga)]
            }
            Op::ConcatCols { parts } => {
                let mut out = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    let mut gp = Tensor::zeros(pv.shape().to_vec());
                    for i in 0..pv.rows() {
                        gp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    out.push((p, gp));
                    offset += w;
                }
                out
            }
        }
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`, or `None` if `v` does not influence the
    /// output.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient with respect to `v`, zero-filled when `v` has no influence.
    pub fn wrt_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        match self.wrt(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

// ---------------------------------------------------------------------------
// forward kernels

fn matmul_kernel<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = a.row(i);
        for (p, &av) in arow.iter().enumerate().take(k) {
            if av == T::zero() {
                continue;
            }
            let brow = b.row(p);
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    Tensor::new(vec![m, n], out).expect("matmul shape")
}

fn transpose_kernel<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    let (m, k) = (a.rows(), a.cols());
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        for j in 0..k {
            out[j * m + i] = a.row(i)[j];
        }
    }
    Tensor::new(vec![k, m], out).expect("transpose shape")
}

fn map_kernel<T: Real>(a: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect()).expect("map shape")
}

fn zip_kernel<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip shape")
}

fn softmax_row<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&x| (x - max).exp()).collect();
    let total = exps.iter().fold(T::zero(), |acc, &e| acc + e);
    exps.into_iter().map(|e| e / total).collect()
}

fn softmax_kernel<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    let mut out = Vec::with_capacity(a.numel());
    for i in 0..a.rows() {
        out.extend(softmax_row(a.row(i)));
    }
    Tensor::new(a.shape().to_vec(), out).expect("softmax shape")
}

fn softmax_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let mut out = Vec::with_capacity(y.numel());
    for i in 0..y.rows() {
        let yr = y.row(i);
        let gr = g.row(i);
        let dot = yr
            .iter()
            .zip(gr)
            .fold(T::zero(), |acc, (&yv, &gv)| acc + yv * gv);
        out.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
    }
    Tensor::new(y.shape().to_vec(), out).expect("softmax grad shape")
}

fn log_sum_exp<T: Real>(z: &[T]) -> T {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let total = z.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp());
    max + total.ln()
}

fn layer_norm_kernel<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Tensor<T> {
    let d = x.cols();
    let dt = T::of(d as f64);
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / dt;
        let var = row
            .iter()
            .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
            / dt;
        let inv = (var + eps).sqrt().recip();
        for ((&x, &g), &b) in row.iter().zip(gamma.data()).zip(beta.data()) {
            out.push(g * (x - mean) * inv + b);
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("layer-norm shape")
}

fn layer_norm_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    eps: T,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = x.cols();
    let dt = T::of(d as f64);
    let mut gx = Tensor::zeros(x.shape().to_vec());
    let mut ggamma = vec![T::zero(); d];
    let mut gbeta = vec![T::zero(); d];
    for i in 0..x.rows() {
        let row = x.row(i);
        let gr = g.row(i);
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / dt;
        let var = row
            .iter()
            .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
            / dt;
        let inv = (var + eps).sqrt().recip();
        let xhat: Vec<T> = row.iter().map(|&v| (v - mean) * inv).collect();

        let mut gxhat = vec![T::zero(); d];
        for j in 0..d {
            ggamma[j] = ggamma[j] + gr[j] * xhat[j];
            gbeta[j] = gbeta[j] + gr[j];
            gxhat[j] = gr[j] * gamma.data()[j];
        }
        let mean_gxhat = gxhat.iter().fold(T::zero(), |a, &v| a + v) / dt;
        let mean_gxhat_xhat = gxhat
            .iter()
            .zip(&xhat)
            .fold(T::zero(), |a, (&gv, &xv)| a + gv * xv)
            / dt;
        let dst = gx.row_mut(i);
        for j in 0..d {
            dst[j] = inv * (gxhat[j] - mean_gxhat - xhat[j] * mean_gxhat_xhat);
        }
    }
    (
        gx,
        Tensor::new(vec![d], ggamma).expect("gamma grad shape"),
        Tensor::new(vec![d], gbeta).expect("beta grad shape"),
    )
}

fn gelu_scalar<T: Real>(x: T) -> T {
    let c = T::of(GELU_SQRT_2_OVER_PI);
    let k = T::of(GELU_CUBIC);
    let half = T::of(0.5);
    let u = c * (x + k * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let c = T::of(GELU_SQRT_2_OVER_PI);
    let k = T::of(GELU_CUBIC);
    let half = T::of(0.5);
    let three = T::of(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * k * x * x)
}

// ---------------------------------------------------------------------------
// functional entry points

/// Evaluate `f` without recording gradients and return the output value.
pub fn evaluate<T, F>(f: F, inputs: &[Tensor<T>]) -> Result<Tensor<T>>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).clone())
}

/// Evaluate a scalar-valued computation and return its value together with
/// the gradient for each input tensor, shape-matched to the inputs.
pub fn evaluate_with_gradients<T, F>(
    f: F,
    inputs: &[Tensor<T>],
) -> Result<(Tensor<T>, Vec<Tensor<T>>)>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_scalar() {
        return Err(Error::arg(
            "evaluate_with_gradients requires a scalar-valued computation",
        ));
    }
    let value = tape.value(out).clone();
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "forward" });
    }
    let grads = tape.backward(out)?;
    let mut out_grads = Vec::with_capacity(inputs.len());
    for (var, input) in vars.iter().zip(inputs) {
        let g = grads.wrt_or_zeros(*var, input.shape());
        if !g.is_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        out_grads.push(g);
    }
    Ok((value, out_grads))
}

/// Maximum relative error between analytic gradients and central finite
/// differences over `samples` randomly chosen coordinates:
/// `|analytic − fd| / max(1, |fd|)`.
///
/// Requires 64-bit precision and `h` within `[1e-6, 1e-2]`; rejects
/// computations that are not deterministic across two evaluations.
pub fn grad_check<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if T::BITS < 64 {
        return Err(Error::arg(
            "grad_check requires 64-bit precision; finite differences are noise in 32-bit",
        ));
    }
    if !(1e-6..=1e-2).contains(&h) {
        return Err(Error::arg(format!(
            "grad_check step h={h} outside [1e-6, 1e-2]"
        )));
    }

    let first = evaluate(&f, inputs)?;
    let second = evaluate(&f, inputs)?;
    if first.data() != second.data() {
        return Err(Error::NonDeterministic);
    }

    let (_, analytic) = evaluate_with_gradients(&f, inputs)?;

    let sizes: Vec<usize> = inputs.iter().map(Tensor::numel).collect();
    let total: usize = sizes.iter().sum();
    let mut coords: Vec<usize> = if samples >= total {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..samples).map(|_| rng.random_range(0..total)).collect()
    };
    coords.sort_unstable();
    coords.dedup();

    let step = T::of(h);
    let mut max_rel = 0.0_f64;
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for flat in coords {
        let (which, offset) = locate(&sizes, flat);
        let orig = work[which].data()[offset];

        work[which].data_mut()[offset] = orig + step;
        let plus = evaluate(&f, &work)?.item();
        work[which].data_mut()[offset] = orig - step;
        let minus = evaluate(&f, &work)?.item();
        work[which].data_mut()[offset] = orig;

        let fd = (plus - minus) / (step + step);
        let a = analytic[which].data()[offset];
        let rel = (a - fd).abs() / T::one().max(fd.abs());
        max_rel = max_rel.max(rel.as_f64());
    }
    Ok(max_rel)
}

fn locate(sizes: &[usize], mut flat: usize) -> (usize, usize) {
    for (i, &s) in sizes.iter().enumerate() {
        if flat < s {
            return (i, flat);
        }
        flat -= s;
    }
    unreachable!("coordinate out of range");
}
