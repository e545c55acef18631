use std::sync::Arc;

use super::broadcast::{reduce_grad, IndexMap};
use super::gemm::gemm;

pub(crate) const NORM_EPS: f32 = 1e-8;
pub(crate) const LAYER_NORM_EPS: f32 = 1e-5;

/// A recorded operation together with whatever its backward pass needs.
pub(crate) enum Op {
    Leaf,
    MatMul {
        a: Arc<Vec<f32>>,
        b: Arc<Vec<f32>>,
        batch: usize,
        n: usize,
        k: usize,
        m: usize,
        /// `b` is a single `[k, m]` matrix shared across the batch.
        shared_rhs: bool,
    },
    Add {
        ma: IndexMap,
        mb: IndexMap,
        na: usize,
        nb: usize,
    },
    Sub {
        ma: IndexMap,
        mb: IndexMap,
        na: usize,
        nb: usize,
    },
    Mul {
        a: Arc<Vec<f32>>,
        b: Arc<Vec<f32>>,
        ma: IndexMap,
        mb: IndexMap,
    },
    Div {
        a: Arc<Vec<f32>>,
        b: Arc<Vec<f32>>,
        ma: IndexMap,
        mb: IndexMap,
    },
    Scale(f32),
    AddScalar,
    Relu(Arc<Vec<f32>>),
    Softplus(Arc<Vec<f32>>),
    /// Saves the output.
    Sigmoid(Arc<Vec<f32>>),
    /// Saves the output.
    Exp(Arc<Vec<f32>>),
    Log(Arc<Vec<f32>>),
    Sum {
        outer: usize,
        len: usize,
        inner: usize,
    },
    Max {
        n_in: usize,
        argmax: Vec<usize>,
    },
    Concat {
        outer: usize,
        inner: usize,
        lens: Vec<usize>,
    },
    Slice {
        outer: usize,
        len: usize,
        inner: usize,
        start: usize,
        count: usize,
    },
    Softmax {
        outer: usize,
        len: usize,
        inner: usize,
        y: Arc<Vec<f32>>,
    },
    Cosine {
        outer: usize,
        len: usize,
        inner: usize,
        a: Arc<Vec<f32>>,
        b: Arc<Vec<f32>>,
    },
    L2Normalize {
        outer: usize,
        len: usize,
        inner: usize,
        y: Arc<Vec<f32>>,
        norms: Vec<f32>,
    },
    LayerNorm {
        dim: usize,
        x: Arc<Vec<f32>>,
    },
    Reshape,
    Transpose {
        batch: usize,
        rows: usize,
        cols: usize,
    },
    TakeAlong {
        outer: usize,
        len: usize,
        inner: usize,
        m: usize,
        index: Vec<usize>,
    },
    IndexSelect {
        outer: usize,
        len: usize,
        inner: usize,
        index: Vec<usize>,
    },
    Cumsum {
        outer: usize,
        len: usize,
        inner: usize,
        exclusive: bool,
    },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Div { .. } => "div",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::Relu(_) => "relu",
            Op::Softplus(_) => "softplus",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sum { .. } => "sum",
            Op::Max { .. } => "max",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Softmax { .. } => "softmax",
            Op::Cosine { .. } => "cosine_similarity",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Reshape => "reshape",
            Op::Transpose { .. } => "transpose",
            Op::TakeAlong { .. } => "take_along",
            Op::IndexSelect { .. } => "index_select",
            Op::Cumsum { .. } => "cumsum",
        }
    }

    /// Vector-Jacobian products for each input; `needs[i]` is false for
    /// inputs that are constants, whose gradient is skipped.
    pub(crate) fn backward(
        &self,
        g: &[f32],
        in_sizes: &[usize],
        needs: &[bool],
    ) -> Vec<Option<Vec<f32>>> {
        let want = |i: usize| needs.get(i).copied().unwrap_or(false);
        match self {
            Op::Leaf => vec![],
            Op::MatMul {
                a,
                b,
                batch,
                n,
                k,
                m,
                shared_rhs,
            } => {
                let (batch, n, k, m) = (*batch, *n, *k, *m);
                let mut ga = want(0).then(|| vec![0.0; batch * n * k]);
                let mut gb = want(1).then(|| vec![0.0; b.len()]);
                if *shared_rhs {
                    let rows = batch * n;
                    if let Some(ga) = ga.as_mut() {
                        gemm(rows, m, k, g, false, b, true, ga, false);
                    }
                    if let Some(gb) = gb.as_mut() {
                        gemm(k, rows, m, a, true, g, false, gb, false);
                    }
                } else {
                    for bi in 0..batch {
                        let gs = &g[bi * n * m..(bi + 1) * n * m];
                        let asl = &a[bi * n * k..(bi + 1) * n * k];
                        let bsl = &b[bi * k * m..(bi + 1) * k * m];
                        if let Some(ga) = ga.as_mut() {
                            gemm(
                                n,
                                m,
                                k,
                                gs,
                                false,
                                bsl,
                                true,
                                &mut ga[bi * n * k..(bi + 1) * n * k],
                                false,
                            );
                        }
                        if let Some(gb) = gb.as_mut() {
                            gemm(
                                k,
                                n,
                                m,
                                asl,
                                true,
                                gs,
                                false,
                                &mut gb[bi * k * m..(bi + 1) * k * m],
                                false,
                            );
                        }
                    }
                }
                vec![ga, gb]
            }
            Op::Add { ma, mb, na, nb } => vec![
                want(0).then(|| reduce_grad(ma, g, *na)),
                want(1).then(|| reduce_grad(mb, g, *nb)),
            ],
            Op::Sub { ma, mb, na, nb } => vec![
                want(0).then(|| reduce_grad(ma, g, *na)),
                want(1).then(|| {
                    let mut r = reduce_grad(mb, g, *nb);
                    r.iter_mut().for_each(|v| *v = -*v);
                    r
                }),
            ],
            Op::Mul { a, b, ma, mb } => {
                let ga = want(0).then(|| {
                    let mut out = vec![0.0; a.len()];
                    for (i, gi) in g.iter().enumerate() {
                        out[ma.at(i)] += gi * b[mb.at(i)];
                    }
                    out
                });
                let gb = want(1).then(|| {
                    let mut out = vec![0.0; b.len()];
                    for (i, gi) in g.iter().enumerate() {
                        out[mb.at(i)] += gi * a[ma.at(i)];
                    }
                    out
                });
                vec![ga, gb]
            }
            Op::Div { a, b, ma, mb } => {
                let ga = want(0).then(|| {
                    let mut out = vec![0.0; a.len()];
                    for (i, gi) in g.iter().enumerate() {
                        out[ma.at(i)] += gi / b[mb.at(i)];
                    }
                    out
                });
                let gb = want(1).then(|| {
                    let mut out = vec![0.0; b.len()];
                    for (i, gi) in g.iter().enumerate() {
                        let bv = b[mb.at(i)];
                        out[mb.at(i)] -= gi * a[ma.at(i)] / (bv * bv);
                    }
                    out
                });
                vec![ga, gb]
            }
            Op::Scale(c) => vec![Some(g.iter().map(|v| v * c).collect())],
            Op::AddScalar | Op::Reshape => vec![Some(g.to_vec())],
            Op::Relu(x) => vec![Some(
                g.iter()
                    .zip(x.iter())
                    .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                    .collect(),
            )],
            Op::Softplus(x) => vec![Some(
                g.iter()
                    .zip(x.iter())
                    .map(|(gi, xi)| gi * sigmoid(*xi))
                    .collect(),
            )],
            Op::Sigmoid(y) => vec![Some(
                g.iter()
                    .zip(y.iter())
                    .map(|(gi, yi)| gi * yi * (1.0 - yi))
                    .collect(),
            )],
            Op::Exp(y) => vec![Some(
                g.iter().zip(y.iter()).map(|(gi, yi)| gi * yi).collect(),
            )],
            Op::Log(x) => vec![Some(
                g.iter().zip(x.iter()).map(|(gi, xi)| gi / xi).collect(),
            )],
            Op::Sum { outer, len, inner } => {
                let mut out = vec![0.0; outer * len * inner];
                for o in 0..*outer {
                    for l in 0..*len {
                        let dst = (o * len + l) * inner;
                        out[dst..dst + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(out)]
            }
            Op::Max { n_in, argmax } => {
                let mut out = vec![0.0; *n_in];
                for (gi, &src) in g.iter().zip(argmax) {
                    out[src] += gi;
                }
                vec![Some(out)]
            }
            Op::Concat { outer, inner, lens } => {
                let total: usize = lens.iter().sum();
                let mut offset = 0;
                let mut grads = Vec::with_capacity(lens.len());
                for (idx, &len) in lens.iter().enumerate() {
                    if !want(idx) {
                        grads.push(None);
                        offset += len;
                        continue;
                    }
                    let mut out = Vec::with_capacity(outer * len * inner);
                    for o in 0..*outer {
                        let src = (o * total + offset) * inner;
                        out.extend_from_slice(&g[src..src + len * inner]);
                    }
                    grads.push(Some(out));
                    offset += len;
                }
                grads
            }
            Op::Slice {
                outer,
                len,
                inner,
                start,
                count,
            } => {
                let mut out = vec![0.0; outer * len * inner];
                for o in 0..*outer {
                    let dst = (o * len + start) * inner;
                    out[dst..dst + count * inner]
                        .copy_from_slice(&g[o * count * inner..(o + 1) * count * inner]);
                }
                vec![Some(out)]
            }
            Op::Softmax {
                outer,
                len,
                inner,
                y,
            } => {
                let mut out = vec![0.0; y.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let dot: f32 = (0..*len).map(|l| g[at(l)] * y[at(l)]).sum();
                        for l in 0..*len {
                            out[at(l)] = y[at(l)] * (g[at(l)] - dot);
                        }
                    }
                }
                vec![Some(out)]
            }
            Op::Cosine {
                outer,
                len,
                inner,
                a,
                b,
            } => {
                let mut ga = want(0).then(|| vec![0.0; a.len()]);
                let mut gb = want(1).then(|| vec![0.0; b.len()]);
                for o in 0..*outer {
                    for i in 0..*inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let (mut dot, mut aa, mut bb) = (0.0f32, 0.0f32, 0.0f32);
                        for l in 0..*len {
                            dot += a[at(l)] * b[at(l)];
                            aa += a[at(l)] * a[at(l)];
                            bb += b[at(l)] * b[at(l)];
                        }
                        let (na, nb) = (aa.sqrt(), bb.sqrt());
                        let denom = na * nb;
                        let gi = g[o * inner + i];
                        if denom > NORM_EPS {
                            let s = dot / denom;
                            for l in 0..*len {
                                if let Some(ga) = ga.as_mut() {
                                    ga[at(l)] += gi * (b[at(l)] / denom - s * a[at(l)] / aa);
                                }
                                if let Some(gb) = gb.as_mut() {
                                    gb[at(l)] += gi * (a[at(l)] / denom - s * b[at(l)] / bb);
                                }
                            }
                        } else {
                            for l in 0..*len {
                                if let Some(ga) = ga.as_mut() {
                                    ga[at(l)] += gi * b[at(l)] / NORM_EPS;
                                }
                                if let Some(gb) = gb.as_mut() {
                                    gb[at(l)] += gi * a[at(l)] / NORM_EPS;
                                }
                            }
                        }
                    }
                }
                vec![ga, gb]
            }
            Op::L2Normalize {
                outer,
                len,
                inner,
                y,
                norms,
            } => {
                let mut out = vec![0.0; y.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let norm = norms[o * inner + i];
                        if norm > NORM_EPS {
                            let dot: f32 = (0..*len).map(|l| y[at(l)] * g[at(l)]).sum();
                            for l in 0..*len {
                                out[at(l)] = (g[at(l)] - y[at(l)] * dot) / norm;
                            }
                        } else {
                            for l in 0..*len {
                                out[at(l)] = g[at(l)] / NORM_EPS;
                            }
                        }
                    }
                }
                vec![Some(out)]
            }
            Op::LayerNorm { dim, x } => {
                // Recomputed in f64: for nearly constant rows the result is a
                // small difference of order-one terms.
                let mut out = vec![0.0; x.len()];
                let d = *dim as f64;
                for row in 0..x.len() / dim.max(&1) {
                    let xs = &x[row * dim..(row + 1) * dim];
                    let gs = &g[row * dim..(row + 1) * dim];
                    let mean = xs.iter().map(|&v| v as f64).sum::<f64>() / d;
                    let var = xs.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d;
                    let rs = 1.0 / (var + LAYER_NORM_EPS as f64).sqrt();
                    let y = |j: usize| (xs[j] as f64 - mean) * rs;
                    let mean_g = gs.iter().map(|&v| v as f64).sum::<f64>() / d;
                    let mean_gy = (0..*dim).map(|j| gs[j] as f64 * y(j)).sum::<f64>() / d;
                    for j in 0..*dim {
                        out[row * dim + j] = (rs * (gs[j] as f64 - mean_g - y(j) * mean_gy)) as f32;
                    }
                }
                vec![Some(out)]
            }
            Op::Transpose { batch, rows, cols } => {
                // forward mapped [rows, cols] -> [cols, rows]; g is [cols, rows]
                vec![Some(transpose_batched(g, *batch, *cols, *rows))]
            }
            Op::TakeAlong {
                outer,
                len,
                inner,
                m,
                index,
            } => {
                let mut out = vec![0.0; outer * len * inner];
                for o in 0..*outer {
                    for j in 0..*m {
                        let src = index[o * m + j];
                        let gsrc = (o * m + j) * inner;
                        let dst = (o * len + src) * inner;
                        for i in 0..*inner {
                            out[dst + i] += g[gsrc + i];
                        }
                    }
                }
                vec![Some(out)]
            }
            Op::IndexSelect {
                outer,
                len,
                inner,
                index,
            } => {
                let m = index.len();
                let mut out = vec![0.0; outer * len * inner];
                for o in 0..*outer {
                    for (j, &src) in index.iter().enumerate() {
                        let gsrc = (o * m + j) * inner;
                        let dst = (o * len + src) * inner;
                        for i in 0..*inner {
                            out[dst + i] += g[gsrc + i];
                        }
                    }
                }
                vec![Some(out)]
            }
            Op::Cumsum {
                outer,
                len,
                inner,
                exclusive,
            } => {
                let mut out = vec![0.0; outer * len * inner];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let mut acc = 0.0f32;
                        for l in (0..*len).rev() {
                            let at = (o * len + l) * inner + i;
                            if *exclusive {
                                out[at] = acc;
                                acc += g[at];
                            } else {
                                acc += g[at];
                                out[at] = acc;
                            }
                        }
                    }
                }
                vec![Some(out)]
            }
        }
        .into_iter()
        .enumerate()
        .map(|(i, gr)| {
            debug_assert!(gr.as_ref().is_none_or(|v| v.len() == in_sizes[i]));
            gr
        })
        .collect()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `[batch, rows, cols] -> [batch, cols, rows]`.
pub(crate) fn transpose_batched(x: &[f32], batch: usize, rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        let base = b * rows * cols;
        for r in 0..rows {
            for c in 0..cols {
                out[base + c * rows + r] = x[base + r * cols + c];
            }
        }
    }
    out
}
