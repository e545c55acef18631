use std::fmt;
use std::sync::Arc;

use super::broadcast::{broadcast_shape, index_map, numel, split_axis};
use super::gemm::gemm;
use super::graph::{Graph, Node};
use super::ops::{sigmoid, softplus, transpose_batched, Op, LAYER_NORM_EPS, NORM_EPS};
use crate::error::{Error, Result};

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub(crate) graph: Graph,
    pub(crate) id: usize,
}

/// Dense row-major `f32` array, optionally tracked by a [`Graph`].
///
/// Tensors are immutable; every operation returns a new tensor. Cloning is
/// cheap since the data buffer is reference counted.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
    node: Option<NodeRef>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f32> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::invalid(
            op,
            format!("axis {axis} out of range for shape {shape:?}"),
        ));
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!(
                    "shape {shape:?} needs {} values, got {}",
                    numel(&shape),
                    data.len()
                ),
            ));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn scalar(v: f32) -> Self {
        Self::new(vec![1], vec![v]).unwrap()
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::new(shape, vec![0.0; n]).unwrap()
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: f32) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::new(shape, vec![v; n]).unwrap()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data.as_ref().clone()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(
            self.numel(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    /// Same data, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: None,
        }
    }

    pub(crate) fn node(&self) -> Option<&NodeRef> {
        self.node.as_ref()
    }

    pub(crate) fn with_node(self, node: NodeRef) -> Tensor {
        Tensor {
            node: Some(node),
            ..self
        }
    }

    fn record(
        name: &'static str,
        shape: Vec<usize>,
        data: Arc<Vec<f32>>,
        inputs: &[&Tensor],
        op: impl FnOnce() -> Op,
    ) -> Result<Tensor> {
        if cfg!(debug_assertions)
            && data.iter().any(|v| !v.is_finite())
            && inputs.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
        {
            return Err(Error::Domain {
                op: name,
                reason: "non-finite output from finite inputs".into(),
            });
        }
        let mut graph: Option<&Graph> = None;
        for t in inputs {
            if let Some(n) = &t.node {
                match graph {
                    None => graph = Some(&n.graph),
                    Some(g) if g.same(&n.graph) => {}
                    Some(_) => {
                        return Err(Error::invalid(name, "inputs belong to different graphs"));
                    }
                }
            }
        }
        let node = match graph {
            None => None,
            Some(g) => {
                let id = g.push(Node {
                    op: op(),
                    inputs: inputs
                        .iter()
                        .map(|t| t.node.as_ref().map(|n| n.id))
                        .collect(),
                    numel: data.len(),
                })?;
                Some(NodeRef {
                    graph: g.clone(),
                    id,
                })
            }
        };
        Ok(Tensor { shape, data, node })
    }

    fn unary(
        &self,
        name: &'static str,
        f: impl Fn(f32) -> f32,
        op: impl FnOnce(Arc<Vec<f32>>, Arc<Vec<f32>>) -> Op,
    ) -> Result<Tensor> {
        let data: Vec<f32> = self.data.iter().map(|&v| f(v)).collect();
        let out = Arc::new(data);
        let input = self.data.clone();
        Self::record(name, self.shape.clone(), out.clone(), &[self], || {
            op(input, out)
        })
    }

    // ---- linear algebra ----

    /// `[.., n, k] x [k, m]` (shared right operand) or `[B.., n, k] x [B.., k, m]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: self.shape.clone(),
            rhs: rhs.shape.clone(),
        };
        if self.rank() < 2 || rhs.rank() < 2 {
            return Err(mismatch());
        }
        let (n, k) = (self.shape[self.rank() - 2], self.shape[self.rank() - 1]);
        let (k2, m) = (rhs.shape[rhs.rank() - 2], rhs.shape[rhs.rank() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let batch_dims = &self.shape[..self.rank() - 2];
        let batch = numel(batch_dims);
        let shared_rhs = rhs.rank() == 2;
        if !shared_rhs && rhs.shape[..rhs.rank() - 2] != *batch_dims {
            return Err(mismatch());
        }
        let mut out = vec![0.0; batch * n * m];
        if shared_rhs {
            gemm(
                batch * n,
                k,
                m,
                &self.data,
                false,
                &rhs.data,
                false,
                &mut out,
                false,
            );
        } else {
            for b in 0..batch {
                gemm(
                    n,
                    k,
                    m,
                    &self.data[b * n * k..(b + 1) * n * k],
                    false,
                    &rhs.data[b * k * m..(b + 1) * k * m],
                    false,
                    &mut out[b * n * m..(b + 1) * n * m],
                    false,
                );
            }
        }
        let mut shape = batch_dims.to_vec();
        shape.extend([n, m]);
        Self::record("matmul", shape, Arc::new(out), &[self, rhs], || {
            Op::MatMul {
                a: self.data.clone(),
                b: rhs.data.clone(),
                batch,
                n,
                k,
                m,
                shared_rhs,
            }
        })
    }

    /// Swap the last two axes.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(Error::invalid(
                "transpose",
                format!("needs rank >= 2, got {:?}", self.shape),
            ));
        }
        let r = self.rank();
        let (rows, cols) = (self.shape[r - 2], self.shape[r - 1]);
        let batch = numel(&self.shape[..r - 2]);
        let data = transpose_batched(&self.data, batch, rows, cols);
        let mut shape = self.shape.clone();
        shape.swap(r - 2, r - 1);
        Self::record("transpose", shape, Arc::new(data), &[self], || {
            Op::Transpose { batch, rows, cols }
        })
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        if numel(&shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(match &self.node {
            None => Tensor {
                shape,
                data: self.data.clone(),
                node: None,
            },
            Some(_) => Self::record("reshape", shape, self.data.clone(), &[self], || Op::Reshape)?,
        })
    }

    // ---- elementwise binary (broadcasting) ----

    fn binary(
        &self,
        rhs: &Tensor,
        name: &'static str,
        f: impl Fn(f32, f32) -> f32,
        op: impl FnOnce(super::broadcast::IndexMap, super::broadcast::IndexMap) -> Op,
    ) -> Result<Tensor> {
        let shape = broadcast_shape(name, &self.shape, &rhs.shape)?;
        let ma = index_map(&shape, &self.shape);
        let mb = index_map(&shape, &rhs.shape);
        let n = numel(&shape);
        let data: Vec<f32> = (0..n)
            .map(|i| f(self.data[ma.at(i)], rhs.data[mb.at(i)]))
            .collect();
        Self::record(name, shape, Arc::new(data), &[self, rhs], || op(ma, mb))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        let (na, nb) = (self.numel(), rhs.numel());
        self.binary(
            rhs,
            "add",
            |a, b| a + b,
            |ma, mb| Op::Add { ma, mb, na, nb },
        )
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        let (na, nb) = (self.numel(), rhs.numel());
        self.binary(
            rhs,
            "sub",
            |a, b| a - b,
            |ma, mb| Op::Sub { ma, mb, na, nb },
        )
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.data.clone(), rhs.data.clone());
        self.binary(rhs, "mul", |x, y| x * y, |ma, mb| Op::Mul { a, b, ma, mb })
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.data.clone(), rhs.data.clone());
        self.binary(rhs, "div", |x, y| x / y, |ma, mb| Op::Div { a, b, ma, mb })
    }

    // ---- elementwise unary ----

    pub fn scale(&self, c: f32) -> Result<Tensor> {
        let data = self.data.iter().map(|v| v * c).collect();
        Self::record("scale", self.shape.clone(), Arc::new(data), &[self], || {
            Op::Scale(c)
        })
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f32) -> Result<Tensor> {
        let data = self.data.iter().map(|v| v + c).collect();
        Self::record(
            "add_scalar",
            self.shape.clone(),
            Arc::new(data),
            &[self],
            || Op::AddScalar,
        )
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.unary("relu", |v| v.max(0.0), |x, _| Op::Relu(x))
    }

    pub fn softplus(&self) -> Result<Tensor> {
        self.unary("softplus", softplus, |x, _| Op::Softplus(x))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary("sigmoid", sigmoid, |_, y| Op::Sigmoid(y))
    }

    /// Overflow is an error in debug builds and saturates to `f32::MAX` otherwise.
    pub fn exp(&self) -> Result<Tensor> {
        if self.data.iter().any(|v| v.exp().is_infinite()) {
            if cfg!(debug_assertions) {
                return Err(Error::Domain {
                    op: "exp",
                    reason: "argument overflows f32".into(),
                });
            }
            return self.unary("exp", |v| v.exp().min(f32::MAX), |_, y| Op::Exp(y));
        }
        self.unary("exp", f32::exp, |_, y| Op::Exp(y))
    }

    /// Non-positive arguments are an error in debug builds and are clamped to
    /// the smallest positive normal otherwise.
    pub fn log(&self) -> Result<Tensor> {
        if self.data.iter().any(|&v| v <= 0.0) {
            if cfg!(debug_assertions) {
                return Err(Error::Domain {
                    op: "log",
                    reason: "non-positive argument".into(),
                });
            }
            let clamped: Vec<f32> = self.data.iter().map(|v| v.max(f32::MIN_POSITIVE)).collect();
            let saved = Arc::new(clamped);
            let data = saved.iter().map(|v| v.ln()).collect();
            return Self::record("log", self.shape.clone(), Arc::new(data), &[self], || {
                Op::Log(saved)
            });
        }
        self.unary("log", f32::ln, |x, _| Op::Log(x))
    }

    // ---- reductions and axis ops ----

    /// Sum over `axis`, removing it.
    pub fn sum(&self, axis: usize) -> Result<Tensor> {
        check_axis("sum", &self.shape, axis)?;
        let (outer, len, inner) = split_axis(&self.shape, axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = (o * len + l) * inner;
                for i in 0..inner {
                    data[o * inner + i] += self.data[src + i];
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Self::record("sum", shape, Arc::new(data), &[self], || Op::Sum {
            outer,
            len,
            inner,
        })
    }

    /// Sum of every element as a one-element tensor.
    pub fn sum_all(&self) -> Result<Tensor> {
        self.reshape(vec![1, self.numel()])?.sum(1)
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        let n = self.numel() as f32;
        self.sum_all()?.scale(1.0 / n)
    }

    /// Max over `axis`, removing it. The gradient goes to the first maximal
    /// element on ties.
    pub fn max(&self, axis: usize) -> Result<Tensor> {
        check_axis("max", &self.shape, axis)?;
        let (outer, len, inner) = split_axis(&self.shape, axis);
        if len == 0 {
            return Err(Error::invalid("max", "empty reduction axis"));
        }
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = (o * len) * inner + i;
                for l in 1..len {
                    let at = (o * len + l) * inner + i;
                    if self.data[at] > self.data[best] {
                        best = at;
                    }
                }
                data.push(self.data[best]);
                argmax.push(best);
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        let n_in = self.numel();
        Self::record("max", shape, Arc::new(data), &[self], || Op::Max {
            n_in,
            argmax,
        })
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        check_axis("concat", &first.shape, axis)?;
        for p in &parts[1..] {
            let same_rank = p.rank() == first.rank();
            let same_other = same_rank
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !same_other {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
        }
        let (outer, _, inner) = split_axis(&first.shape, axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                data.extend_from_slice(&p.data[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Self::record("concat", shape, Arc::new(data), parts, || Op::Concat {
            outer,
            inner,
            lens,
        })
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        check_axis("slice", &self.shape, axis)?;
        if start > end || end > self.shape[axis] {
            return Err(Error::invalid(
                "slice",
                format!(
                    "range {start}..{end} outside axis {axis} of {:?}",
                    self.shape
                ),
            ));
        }
        let (outer, len, inner) = split_axis(&self.shape, axis);
        let count = end - start;
        let mut data = Vec::with_capacity(outer * count * inner);
        for o in 0..outer {
            let src = (o * len + start) * inner;
            data.extend_from_slice(&self.data[src..src + count * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = count;
        Self::record("slice", shape, Arc::new(data), &[self], || Op::Slice {
            outer,
            len,
            inner,
            start,
            count,
        })
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis("softmax", &self.shape, axis)?;
        let (outer, len, inner) = split_axis(&self.shape, axis);
        let mut data = vec![0.0; self.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let mx = (0..len)
                    .map(|l| self.data[at(l)])
                    .fold(f32::NEG_INFINITY, f32::max);
                let mut z = 0.0;
                for l in 0..len {
                    let e = (self.data[at(l)] - mx).exp();
                    data[at(l)] = e;
                    z += e;
                }
                for l in 0..len {
                    data[at(l)] /= z;
                }
            }
        }
        let y = Arc::new(data);
        Self::record("softmax", self.shape.clone(), y.clone(), &[self], || {
            Op::Softmax {
                outer,
                len,
                inner,
                y,
            }
        })
    }

    /// Cosine similarity of `self` and `rhs` (same shape) along `axis`,
    /// removing it. Norm products below 1e-8 are clamped.
    pub fn cosine_similarity(&self, rhs: &Tensor, axis: usize) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(Error::ShapeMismatch {
                op: "cosine_similarity",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        check_axis("cosine_similarity", &self.shape, axis)?;
        let (outer, len, inner) = split_axis(&self.shape, axis);
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let (mut dot, mut aa, mut bb) = (0.0f32, 0.0f32, 0.0f32);
                for l in 0..len {
                    let (a, b) = (self.data[at(l)], rhs.data[at(l)]);
                    dot += a * b;
                    aa += a * a;
                    bb += b * b;
                }
                data.push(dot / (aa.sqrt() * bb.sqrt()).max(NORM_EPS));
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Self::record(
            "cosine_similarity",
            shape,
            Arc::new(data),
            &[self, rhs],
            || Op::Cosine {
                outer,
                len,
                inner,
                a: self.data.clone(),
                b: rhs.data.clone(),
            },
        )
    }

    /// Scale to unit Euclidean norm along `axis` (norms clamped at 1e-8).
    pub fn l2_normalize(&self, axis: usize) -> Result<Tensor> {
        check_axis("l2_normalize", &self.shape, axis)?;
        let (outer, len, inner) = split_axis(&self.shape, axis);
        let mut data = vec![0.0; self.numel()];
        let mut norms = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let norm = (0..len)
                    .map(|l| self.data[at(l)] * self.data[at(l)])
                    .sum::<f32>()
                    .sqrt();
                let d = norm.max(NORM_EPS);
                for l in 0..len {
                    data[at(l)] = self.data[at(l)] / d;
                }
                norms.push(norm);
            }
        }
        let y = Arc::new(data);
        Self::record(
            "l2_normalize",
            self.shape.clone(),
            y.clone(),
            &[self],
            || Op::L2Normalize {
                outer,
                len,
                inner,
                y,
                norms,
            },
        )
    }

    /// Zero-mean, unit-variance normalization over the last axis (no affine).
    pub fn layer_norm(&self) -> Result<Tensor> {
        let dim = *self
            .shape
            .last()
            .ok_or_else(|| Error::invalid("layer_norm", "rank-0 input"))?;
        let rows = self.numel() / dim.max(1);
        let mut data = vec![0.0; self.numel()];
        for r in 0..rows {
            let xs = &self.data[r * dim..(r + 1) * dim];
            let mean = xs.iter().sum::<f32>() / dim as f32;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f32>() / dim as f32;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (j, x) in xs.iter().enumerate() {
                data[r * dim + j] = (x - mean) * rs;
            }
        }
        Self::record(
            "layer_norm",
            self.shape.clone(),
            Arc::new(data),
            &[self],
            || Op::LayerNorm {
                dim,
                x: self.data.clone(),
            },
        )
    }

    /// Per-row gather: `out[o, j, ..] = self[o, index[o, j], ..]` where `o`
    /// ranges over the axes before `axis`. `index` holds `m` entries per row.
    pub fn take_along(&self, axis: usize, index: &[usize], m: usize) -> Result<Tensor> {
        check_axis("take_along", &self.shape, axis)?;
        let (outer, len, inner) = split_axis(&self.shape, axis);
        if index.len() != outer * m {
            return Err(Error::invalid(
                "take_along",
                format!("expected {} indices, got {}", outer * m, index.len()),
            ));
        }
        if let Some(bad) = index.iter().find(|&&i| i >= len) {
            return Err(Error::invalid(
                "take_along",
                format!("index {bad} out of range {len}"),
            ));
        }
        let mut data = Vec::with_capacity(outer * m * inner);
        for o in 0..outer {
            for j in 0..m {
                let src = (o * len + index[o * m + j]) * inner;
                data.extend_from_slice(&self.data[src..src + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = m;
        let index = index.to_vec();
        Self::record("take_along", shape, Arc::new(data), &[self], || {
            Op::TakeAlong {
                outer,
                len,
                inner,
                m,
                index,
            }
        })
    }

    /// Select the same positions `index` along `axis` for every outer row.
    pub fn index_select(&self, axis: usize, index: &[usize]) -> Result<Tensor> {
        check_axis("index_select", &self.shape, axis)?;
        let (outer, len, inner) = split_axis(&self.shape, axis);
        if let Some(bad) = index.iter().find(|&&i| i >= len) {
            return Err(Error::invalid(
                "index_select",
                format!("index {bad} out of range {len}"),
            ));
        }
        let mut data = Vec::with_capacity(outer * index.len() * inner);
        for o in 0..outer {
            for &j in index {
                let src = (o * len + j) * inner;
                data.extend_from_slice(&self.data[src..src + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = index.len();
        let index = index.to_vec();
        Self::record("index_select", shape, Arc::new(data), &[self], || {
            Op::IndexSelect {
                outer,
                len,
                inner,
                index,
            }
        })
    }

    /// Running sum along `axis`; `exclusive` shifts it so element `i` sums `0..i`.
    pub fn cumsum(&self, axis: usize, exclusive: bool) -> Result<Tensor> {
        check_axis("cumsum", &self.shape, axis)?;
        let (outer, len, inner) = split_axis(&self.shape, axis);
        let mut data = vec![0.0; self.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = 0.0f32;
                for l in 0..len {
                    let at = (o * len + l) * inner + i;
                    if exclusive {
                        data[at] = acc;
                        acc += self.data[at];
                    } else {
                        acc += self.data[at];
                        data[at] = acc;
                    }
                }
            }
        }
        Self::record(
            "cumsum",
            self.shape.clone(),
            Arc::new(data),
            &[self],
            || Op::Cumsum {
                outer,
                len,
                inner,
                exclusive,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_one_by_one() {
        let out = t(&[1, 1], &[2.0]).matmul(&t(&[1, 1], &[3.0])).unwrap();
        assert_eq!(out.data(), &[6.0]);
    }

    #[test]
    fn softmax_uniform_logits() {
        let out = t(&[3], &[0.0, 0.0, 0.0]).softmax(0).unwrap();
        for v in out.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn relu_definition() {
        let out = t(&[3], &[-1.0, 0.0, 2.0]).relu().unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn shape_errors_name_op_and_shapes() {
        let err = t(&[2, 3], &[0.0; 6])
            .matmul(&t(&[2, 3], &[0.0; 6]))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
        let err = t(&[2], &[0.0; 2]).add(&t(&[3], &[0.0; 3])).unwrap_err();
        assert!(err.to_string().contains("add"));
    }

    #[test]
    fn batched_matmul_and_transpose() {
        let a = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 2, 1], &[1.0, 1.0, 2.0, 0.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 6.0]);
        let at = a.transpose().unwrap();
        assert_eq!(at.shape(), &[2, 2, 1]);
    }

    #[test]
    fn max_reports_first_of_ties() {
        let g = Graph::new();
        let x = g.leaf(t(&[1, 3], &[1.0, 5.0, 5.0]));
        let m = x.max(1).unwrap();
        assert_eq!(m.data(), &[5.0]);
        let grads = g.backward(&m.sum_all().unwrap()).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    #[cfg(debug_assertions)]
    fn log_domain_rejected_in_debug() {
        assert!(t(&[1], &[0.0]).log().is_err());
        assert!(t(&[1], &[100.0]).exp().is_err());
    }

    #[test]
    fn cumsum_exclusive() {
        let out = t(&[4], &[1.0, 2.0, 3.0, 4.0]).cumsum(0, true).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0, 3.0, 6.0]);
    }

    #[test]
    fn take_along_rows() {
        let x = t(&[2, 3], &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        let out = x.take_along(1, &[2, 0, 1, 1], 2).unwrap();
        assert_eq!(out.data(), &[2.0, 0.0, 11.0, 11.0]);
    }
}
