use std::sync::Arc;

use super::kernels::{self, split_axis};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The primitive operations understood by the engine.
///
/// Shape rules (all tensors row-major):
/// - `MatMul`: `[m,k] · [k,n] → [m,n]`
/// - `Add`/`Sub`/`Mul`: equal shapes, or a right operand of shape `[c]`
///   broadcast over every row of a left operand whose last dim is `c`
/// - `Softmax`/`LayerNorm`: over the last dimension; `key_mask` excludes
///   columns from the softmax normalizer
/// - `EmbeddingLookup`: gathers rows of a `[v,d]` table
/// - `Mean`/`Sum`: reduce everything to `[1]`
/// - `CrossEntropy`: mean over rows of `[n,c]` logits against `n` targets
/// - `L2Distance`: row-wise euclidean distance of two `[n,d]` tensors → `[n]`
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Softmax { key_mask: Option<Vec<bool>> },
    LayerNorm { eps: f64 },
    Gelu,
    EmbeddingLookup { indices: Vec<usize> },
    Reshape { shape: Vec<usize> },
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Mean,
    Sum,
    CrossEntropy { targets: Vec<usize> },
    L2Distance,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Transpose => "transpose",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::Softmax { .. } => "softmax_lastdim",
            Primitive::LayerNorm { .. } => "layer_norm",
            Primitive::Gelu => "gelu",
            Primitive::EmbeddingLookup { .. } => "embedding_lookup",
            Primitive::Reshape { .. } => "reshape",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Mean => "mean",
            Primitive::Sum => "sum",
            Primitive::CrossEntropy { .. } => "cross_entropy",
            Primitive::L2Distance => "l2_distance",
        }
    }
}

struct Recorded<T> {
    prim: Primitive,
    inputs: Vec<Var>,
    // auxiliary forward state: softmax probs for CE, inverse std for LN,
    // row norms for L2
    saved: Vec<T>,
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    requires_grad: bool,
    op: Option<Recorded<T>>,
}

/// Ordered record of primitive applications. Entries only refer to earlier
/// entries, so the node order is already topological.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every leaf that requires one.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Broadcast {
    Same,
    Rows,
}

fn broadcast_kind(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::Same)
    } else if b.len() == 1 && a.last() == b.last() {
        Ok(Broadcast::Rows)
    } else {
        Err(shape_err(op, a, b))
    }
}

fn require_rank2(op: &'static str, t: &Tensor<impl Scalar>) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::contract(format!(
            "{op} expects a rank-2 tensor, got {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    /// Registers a leaf without copying its storage.
    pub fn leaf_shared(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Applies `prim` to `inputs`, recording a backward rule when any input
    /// requires a gradient.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let (value, saved) = {
            let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
            forward(&prim, &vals)?
        };
        if !value.is_finite() {
            return Err(Error::Numeric {
                op: prim.name(),
                context: String::new(),
            });
        }
        let requires_grad = inputs.iter().any(|v| self.requires_grad(*v));
        let op = requires_grad.then(|| Recorded {
            prim,
            inputs: inputs.to_vec(),
            saved,
        });
        self.nodes.push(Node {
            value: Arc::new(value),
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Primitive::Scale(s), &[a])
    }
    pub fn softmax(&mut self, a: Var, key_mask: Option<Vec<bool>>) -> Result<Var> {
        self.apply(Primitive::Softmax { key_mask }, &[a])
    }
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.apply(Primitive::LayerNorm { eps }, &[a])
    }
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Gelu, &[a])
    }
    pub fn embedding_lookup(&mut self, table: Var, indices: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::EmbeddingLookup { indices }, &[table])
    }
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::Reshape { shape }, &[a])
    }
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.apply(Primitive::Concat { axis }, parts)
    }
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.apply(Primitive::Slice { axis, start, len }, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[a])
    }
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::CrossEntropy { targets }, &[logits])
    }
    pub fn l2_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::L2Distance, &[a, b])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_val = self.value(loss);
        if loss_val.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_val.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(rec) = &node.op else { continue };
            let Some(g) = grads[idx].take() else { continue };
            let input_vals: Vec<&Tensor<T>> =
                rec.inputs.iter().map(|v| self.value(*v)).collect();
            let wants: Vec<bool> = rec.inputs.iter().map(|v| self.requires_grad(*v)).collect();
            let input_grads = backward_rule(rec, &input_vals, &node.value, &g, &wants);
            for ((var, want), ig) in rec.inputs.iter().zip(&wants).zip(input_grads) {
                let (true, Some(ig)) = (*want, ig) else { continue };
                match &mut grads[var.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&ig) {
                            *a = *a + *b;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }

        let out = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                if node.op.is_some() || !node.requires_grad {
                    return None;
                }
                let shape = node.value.shape().to_vec();
                Some(match grads[i].take() {
                    Some(g) => Tensor { shape, data: g },
                    None => Tensor::zeros(&shape),
                })
            })
            .collect();
        Ok(Gradients { grads: out })
    }
}

fn forward<T: Scalar>(prim: &Primitive, x: &[&Tensor<T>]) -> Result<(Tensor<T>, Vec<T>)> {
    let name = prim.name();
    let arity = match prim {
        Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::L2Distance => 2,
        Primitive::Concat { .. } => x.len().max(1),
        _ => 1,
    };
    if x.len() != arity {
        return Err(Error::contract(format!(
            "{name} expects {arity} inputs, got {}",
            x.len()
        )));
    }
    let none = Vec::new();
    Ok(match prim {
        Primitive::MatMul => {
            let (m, k) = require_rank2(name, x[0])?;
            let (k2, n) = require_rank2(name, x[1])?;
            if k != k2 {
                return Err(shape_err(name, x[0].shape(), x[1].shape()));
            }
            let data = kernels::matmul(x[0].data(), x[1].data(), m, k, n);
            (Tensor { shape: vec![m, n], data }, none)
        }
        Primitive::Transpose => {
            let (r, c) = require_rank2(name, x[0])?;
            let data = kernels::transpose(x[0].data(), r, c);
            (Tensor { shape: vec![c, r], data }, none)
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            let kind = broadcast_kind(name, x[0].shape(), x[1].shape())?;
            let b = x[1].data();
            let c = b.len();
            let f = |u: T, v: T| match prim {
                Primitive::Add => u + v,
                Primitive::Sub => u - v,
                _ => u * v,
            };
            let data = x[0]
                .data()
                .iter()
                .enumerate()
                .map(|(i, &u)| {
                    let v = if kind == Broadcast::Same { b[i] } else { b[i % c] };
                    f(u, v)
                })
                .collect();
            (Tensor { shape: x[0].shape().to_vec(), data }, none)
        }
        Primitive::Scale(s) => {
            let s = T::of(*s);
            let data = x[0].data().iter().map(|&v| v * s).collect();
            (Tensor { shape: x[0].shape().to_vec(), data }, none)
        }
        Primitive::Softmax { key_mask } => {
            let c = x[0].last_dim();
            if let Some(m) = key_mask {
                if m.len() != c {
                    return Err(shape_err(name, x[0].shape(), &[m.len()]));
                }
            }
            let mut data = vec![T::zero(); x[0].numel()];
            for (row, out) in x[0].data().chunks_exact(c).zip(data.chunks_exact_mut(c)) {
                if !kernels::softmax_row(row, key_mask.as_deref(), out) {
                    return Err(Error::contract("softmax row with every key masked"));
                }
            }
            (Tensor { shape: x[0].shape().to_vec(), data }, none)
        }
        Primitive::LayerNorm { eps } => {
            let c = x[0].last_dim();
            let eps = T::of(*eps);
            let n = T::of(c as f64);
            let mut data = vec![T::zero(); x[0].numel()];
            let mut inv_std = Vec::with_capacity(x[0].rows());
            for (row, out) in x[0].data().chunks_exact(c).zip(data.chunks_exact_mut(c)) {
                let mean = row.iter().copied().sum::<T>() / n;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                let inv = T::one() / (var + eps).sqrt();
                for (o, &v) in out.iter_mut().zip(row) {
                    *o = (v - mean) * inv;
                }
                inv_std.push(inv);
            }
            (Tensor { shape: x[0].shape().to_vec(), data }, inv_std)
        }
        Primitive::Gelu => {
            let data = x[0].data().iter().map(|&v| v * kernels::phi(v)).collect();
            (Tensor { shape: x[0].shape().to_vec(), data }, none)
        }
        Primitive::EmbeddingLookup { indices } => {
            let (v, d) = require_rank2(name, x[0])?;
            let mut data = Vec::with_capacity(indices.len() * d);
            for &i in indices {
                if i >= v {
                    return Err(Error::contract(format!(
                        "embedding_lookup index {i} out of range for table of {v} rows"
                    )));
                }
                data.extend_from_slice(x[0].row(i));
            }
            if indices.is_empty() {
                return Err(Error::contract("embedding_lookup with no indices"));
            }
            (Tensor { shape: vec![indices.len(), d], data }, none)
        }
        Primitive::Reshape { shape } => {
            if shape.iter().product::<usize>() != x[0].numel() || shape.contains(&0) {
                return Err(shape_err(name, x[0].shape(), shape));
            }
            (Tensor { shape: shape.clone(), data: x[0].data().to_vec() }, none)
        }
        Primitive::Concat { axis } => {
            let first = x[0].shape();
            if *axis >= first.len() {
                return Err(shape_err(name, first, &[*axis]));
            }
            for t in &x[1..] {
                let s = t.shape();
                let compatible = s.len() == first.len()
                    && s.iter().zip(first).enumerate().all(|(d, (a, b))| d == *axis || a == b);
                if !compatible {
                    return Err(shape_err(name, first, s));
                }
            }
            let (outer, _, inner) = split_axis(first, *axis);
            let total: usize = x.iter().map(|t| t.shape()[*axis]).sum();
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for t in x {
                    let chunk = t.shape()[*axis] * inner;
                    data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            let mut shape = first.to_vec();
            shape[*axis] = total;
            (Tensor { shape, data }, none)
        }
        Primitive::Slice { axis, start, len } => {
            let s = x[0].shape();
            if *axis >= s.len() || *len == 0 || start + len > s[*axis] {
                return Err(shape_err(name, s, &[*axis, *start, *len]));
            }
            let (outer, alen, inner) = split_axis(s, *axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * alen * inner + start * inner;
                data.extend_from_slice(&x[0].data()[base..base + len * inner]);
            }
            let mut shape = s.to_vec();
            shape[*axis] = *len;
            (Tensor { shape, data }, none)
        }
        Primitive::Mean => {
            let n = T::of(x[0].numel() as f64);
            (Tensor::scalar(x[0].data().iter().copied().sum::<T>() / n), none)
        }
        Primitive::Sum => (Tensor::scalar(x[0].data().iter().copied().sum::<T>()), none),
        Primitive::CrossEntropy { targets } => {
            let c = x[0].last_dim();
            let rows = x[0].rows();
            if targets.len() != rows {
                return Err(shape_err(name, x[0].shape(), &[targets.len()]));
            }
            let mut probs = vec![T::zero(); x[0].numel()];
            let mut total = T::zero();
            for ((row, p), &t) in x[0].data().chunks_exact(c).zip(probs.chunks_exact_mut(c)).zip(targets) {
                if t >= c {
                    return Err(Error::contract(format!(
                        "cross_entropy target {t} out of range for {c} classes"
                    )));
                }
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
                total = total + (lse - row[t]);
                for (pj, &v) in p.iter_mut().zip(row) {
                    *pj = (v - lse).exp();
                }
            }
            (Tensor::scalar(total / T::of(rows as f64)), probs)
        }
        Primitive::L2Distance => {
            if x[0].shape() != x[1].shape() {
                return Err(shape_err(name, x[0].shape(), x[1].shape()));
            }
            let c = x[0].last_dim();
            let norms: Vec<T> = x[0]
                .data()
                .chunks_exact(c)
                .zip(x[1].data().chunks_exact(c))
                .map(|(a, b)| a.iter().zip(b).map(|(&u, &v)| (u - v) * (u - v)).sum::<T>().sqrt())
                .collect();
            (Tensor::vector(norms.clone()), norms)
        }
    })
}

/// Returns one gradient per input (None where not needed).
fn backward_rule<T: Scalar>(
    rec: &Recorded<T>,
    x: &[&Tensor<T>],
    out: &Tensor<T>,
    g: &[T],
    wants: &[bool],
) -> Vec<Option<Vec<T>>> {
    let want = |i: usize| wants[i];
    match &rec.prim {
        Primitive::MatMul => {
            let (m, k) = (x[0].shape()[0], x[0].shape()[1]);
            let n = x[1].shape()[1];
            vec![
                want(0).then(|| kernels::matmul_nt(g, x[1].data(), m, n, k)),
                want(1).then(|| kernels::matmul_tn(x[0].data(), g, m, k, n)),
            ]
        }
        Primitive::Transpose => {
            let (r, c) = (x[0].shape()[0], x[0].shape()[1]);
            vec![Some(kernels::transpose(g, c, r))]
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            let same = x[0].shape() == x[1].shape();
            let c = x[1].numel();
            let ga: Option<Vec<T>> = want(0).then(|| match rec.prim {
                Primitive::Mul => g
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| gi * x[1].data()[if same { i } else { i % c }])
                    .collect(),
                _ => g.to_vec(),
            });
            let gb: Option<Vec<T>> = want(1).then(|| {
                let per: Vec<T> = match rec.prim {
                    Primitive::Add => g.to_vec(),
                    Primitive::Sub => g.iter().map(|&v| -v).collect(),
                    _ => g.iter().zip(x[0].data()).map(|(&gi, &a)| gi * a).collect(),
                };
                if same {
                    per
                } else {
                    let mut acc = vec![T::zero(); c];
                    for row in per.chunks_exact(c) {
                        for (a, &v) in acc.iter_mut().zip(row) {
                            *a = *a + v;
                        }
                    }
                    acc
                }
            });
            vec![ga, gb]
        }
        Primitive::Scale(s) => {
            let s = T::of(*s);
            vec![Some(g.iter().map(|&v| v * s).collect())]
        }
        Primitive::Softmax { .. } => {
            let c = out.last_dim();
            let mut dx = vec![T::zero(); g.len()];
            for ((y, gy), d) in out.data().chunks_exact(c).zip(g.chunks_exact(c)).zip(dx.chunks_exact_mut(c)) {
                let dot: T = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                for ((di, &yi), &gi) in d.iter_mut().zip(y).zip(gy) {
                    *di = yi * (gi - dot);
                }
            }
            vec![Some(dx)]
        }
        Primitive::LayerNorm { .. } => {
            let c = out.last_dim();
            let n = T::of(c as f64);
            let mut dx = vec![T::zero(); g.len()];
            for (((xh, gy), d), &inv) in out
                .data()
                .chunks_exact(c)
                .zip(g.chunks_exact(c))
                .zip(dx.chunks_exact_mut(c))
                .zip(&rec.saved)
            {
                let mean_g = gy.iter().copied().sum::<T>() / n;
                let mean_gx = gy.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
                for ((di, &gi), &xi) in d.iter_mut().zip(gy).zip(xh) {
                    *di = inv * (gi - mean_g - xi * mean_gx);
                }
            }
            vec![Some(dx)]
        }
        Primitive::Gelu => {
            let dx = x[0]
                .data()
                .iter()
                .zip(g)
                .map(|(&v, &gi)| gi * (kernels::phi(v) + v * kernels::gauss_pdf(v)))
                .collect();
            vec![Some(dx)]
        }
        Primitive::EmbeddingLookup { indices } => {
            let d = x[0].shape()[1];
            let mut dt = vec![T::zero(); x[0].numel()];
            for (&i, gr) in indices.iter().zip(g.chunks_exact(d)) {
                for (a, &v) in dt[i * d..(i + 1) * d].iter_mut().zip(gr) {
                    *a = *a + v;
                }
            }
            vec![Some(dt)]
        }
        Primitive::Reshape { .. } => vec![Some(g.to_vec())],
        Primitive::Concat { axis } => {
            let (outer, total, inner) = split_axis(out.shape(), *axis);
            let mut offset = 0;
            let mut result = Vec::with_capacity(x.len());
            for (i, t) in x.iter().enumerate() {
                let len = t.shape()[*axis];
                if want(i) {
                    let mut part = Vec::with_capacity(t.numel());
                    for o in 0..outer {
                        let base = o * total * inner + offset * inner;
                        part.extend_from_slice(&g[base..base + len * inner]);
                    }
                    result.push(Some(part));
                } else {
                    result.push(None);
                }
                offset += len;
            }
            result
        }
        Primitive::Slice { axis, start, len } => {
            let (outer, alen, inner) = split_axis(x[0].shape(), *axis);
            let mut dx = vec![T::zero(); x[0].numel()];
            for o in 0..outer {
                let src = &g[o * len * inner..(o + 1) * len * inner];
                let base = o * alen * inner + start * inner;
                dx[base..base + len * inner].copy_from_slice(src);
            }
            vec![Some(dx)]
        }
        Primitive::Mean => {
            let n = T::of(x[0].numel() as f64);
            vec![Some(vec![g[0] / n; x[0].numel()])]
        }
        Primitive::Sum => vec![Some(vec![g[0]; x[0].numel()])],
        Primitive::CrossEntropy { targets } => {
            let c = x[0].last_dim();
            let scale = g[0] / T::of(targets.len() as f64);
            let mut dx = rec.saved.clone();
            for (row, &t) in dx.chunks_exact_mut(c).zip(targets) {
                row[t] = row[t] - T::one();
                for v in row.iter_mut() {
                    *v = *v * scale;
                }
            }
            vec![Some(dx)]
        }
        Primitive::L2Distance => {
            let c = x[0].last_dim();
            let mut da = vec![T::zero(); x[0].numel()];
            for (i, (&norm, &gi)) in rec.saved.iter().zip(g).enumerate() {
                // subgradient 0 where the rows coincide
                if norm == T::zero() {
                    continue;
                }
                let k = gi / norm;
                for j in i * c..(i + 1) * c {
                    da[j] = k * (x[0].data()[j] - x[1].data()[j]);
                }
            }
            let db = want(1).then(|| da.iter().map(|&v| -v).collect());
            vec![want(0).then_some(da), db]
        }
    }
}
