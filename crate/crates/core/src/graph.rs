//! Reverse-mode automatic differentiation over [`Array`] values.
//!
//! A [`Graph`] is an eager tape: every operation computes its result
//! immediately and records a backward closure. Gradients are obtained
//! by seeding the output node and walking the tape in reverse. Graphs
//! are rebuilt per forward pass; parameters enter as leaves.
//!
//! Batch normalization follows the desk-scale convention used across
//! this workspace: statistics are computed per channel over the
//! trailing axes of a single feature map (rank >= 2), or over the
//! whole vector as one group (rank 1), with per-element affine.

use crate::array::Array;
use crate::error::{CoreError, Result};
use crate::kernels;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(pub(crate) usize);

type BackFn = Box<dyn Fn(&Graph, &Array, &mut Vec<Option<Array>>)>;

struct Node {
    value: Array,
    backward: Option<BackFn>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by a backward pass.
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Array> {
        self.grads[id.0].as_ref()
    }
}

fn accum(grads: &mut Vec<Option<Array>>, id: NodeId, delta: Array) {
    match &mut grads[id.0] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                *a += *b;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

/// Batch statistics emitted by a train-mode batch norm, one entry per
/// statistics group (channel count, or 1 for rank-1 inputs).
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Statistic groups of a batch-norm input: `(group count, group size)`.
/// Rank 1 treats the whole vector as one group; higher ranks use the
/// leading axis as the channel axis.
fn bn_groups(shape: &[usize]) -> (usize, usize) {
    if shape.len() == 1 {
        (1, shape[0])
    } else {
        (shape[0], shape[1..].iter().product())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Array, backward: Option<BackFn>) -> NodeId {
        self.nodes.push(Node { value, backward });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array) -> NodeId {
        self.push(value, None)
    }

    /// Backward pass from a scalar output, seeded with 1.
    pub fn backward(&self, out: NodeId) -> Result<Gradients> {
        let v = self.value(out);
        if v.len() != 1 {
            return Err(CoreError::Config(format!(
                "backward requires a scalar output, got shape {:?}",
                v.shape()
            )));
        }
        Ok(self.backward_seeded(out, Array::from_vec(v.shape(), vec![1.0])))
    }

    /// Backward pass seeded with an explicit output gradient.
    pub fn backward_seeded(&self, out: NodeId, seed: Array) -> Gradients {
        assert!(
            seed.same_shape(self.value(out)),
            "seed shape {:?} != output shape {:?}",
            seed.shape(),
            self.value(out).shape()
        );
        let mut grads: Vec<Option<Array>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Some(back) = &self.nodes[i].backward {
                back(self, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    // ── Elementwise ─────────────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.add_n(&[a, b])
    }

    /// Elementwise sum of same-shaped nodes (branch fusion).
    pub fn add_n(&mut self, ids: &[NodeId]) -> NodeId {
        assert!(!ids.is_empty());
        let mut value = self.value(ids[0]).clone();
        for &id in &ids[1..] {
            let v = self.value(id);
            assert!(v.same_shape(&value), "add_n shape mismatch");
            for (a, b) in value.data_mut().iter_mut().zip(v.data()) {
                *a += *b;
            }
        }
        let parents = ids.to_vec();
        self.push(
            value,
            Some(Box::new(move |_g, grad, sink| {
                for &p in &parents {
                    accum(sink, p, grad.clone());
                }
            })),
        )
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.same_shape(vb), "sub shape mismatch");
        let value = Array::from_vec(
            va.shape(),
            va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect(),
        );
        self.push(
            value,
            Some(Box::new(move |_g, grad, sink| {
                accum(sink, a, grad.clone());
                accum(sink, b, grad.map(|v| -v));
            })),
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.same_shape(vb), "mul shape mismatch");
        let value = Array::from_vec(
            va.shape(),
            va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect(),
        );
        self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let (va, vb) = (g.value(a), g.value(b));
                let da = Array::from_vec(
                    grad.shape(),
                    grad.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect(),
                );
                let db = Array::from_vec(
                    grad.shape(),
                    grad.data().iter().zip(va.data()).map(|(x, y)| x * y).collect(),
                );
                accum(sink, a, da);
                accum(sink, b, db);
            })),
        )
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let value = self.value(x).map(|v| v * k);
        self.push(
            value,
            Some(Box::new(move |_g, grad, sink| {
                accum(sink, x, grad.map(|v| v * k));
            })),
        )
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.value(x).map(|v| v + c);
        self.push(
            value,
            Some(Box::new(move |_g, grad, sink| {
                accum(sink, x, grad.clone());
            })),
        )
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let vx = g.value(x);
                let dx = Array::from_vec(
                    grad.shape(),
                    grad.data()
                        .iter()
                        .zip(vx.data())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect(),
                );
                accum(sink, x, dx);
            })),
        )
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        let id = self.push(value, None);
        let out = id;
        self.nodes[id.0].backward = Some(Box::new(move |g, grad, sink| {
            let y = g.value(out);
            let dx = Array::from_vec(
                grad.shape(),
                grad.data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| gv * yv * (1.0 - yv))
                    .collect(),
            );
            accum(sink, x, dx);
        }));
        id
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v.tanh());
        let id = self.push(value, None);
        let out = id;
        self.nodes[id.0].backward = Some(Box::new(move |g, grad, sink| {
            let y = g.value(out);
            let dx = Array::from_vec(
                grad.shape(),
                grad.data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| gv * (1.0 - yv * yv))
                    .collect(),
            );
            accum(sink, x, dx);
        }));
        id
    }

    /// Elementwise square root; inputs must be positive (clamp first).
    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v.sqrt());
        let id = self.push(value, None);
        let out = id;
        self.nodes[id.0].backward = Some(Box::new(move |g, grad, sink| {
            let y = g.value(out);
            let dx = Array::from_vec(
                grad.shape(),
                grad.data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| gv / (2.0 * yv))
                    .collect(),
            );
            accum(sink, x, dx);
        }));
        id
    }

    pub fn clamp_min(&mut self, x: NodeId, floor: f64) -> NodeId {
        let value = self.value(x).map(|v| v.max(floor));
        self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let vx = g.value(x);
                let dx = Array::from_vec(
                    grad.shape(),
                    grad.data()
                        .iter()
                        .zip(vx.data())
                        .map(|(gv, xv)| if *xv > floor { *gv } else { 0.0 })
                        .collect(),
                );
                accum(sink, x, dx);
            })),
        )
    }

    // ── Shape ───────────────────────────────────────────────────

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let value = self.value(x).reshaped(shape);
        let old_shape = self.value(x).shape().to_vec();
        self.push(
            value,
            Some(Box::new(move |_g, grad, sink| {
                accum(sink, x, grad.reshaped(&old_shape));
            })),
        )
    }

    pub fn concat_dim0(&mut self, ids: &[NodeId]) -> NodeId {
        assert!(!ids.is_empty());
        let first = self.value(ids[0]).shape().to_vec();
        let tail: Vec<usize> = first[1..].to_vec();
        let mut d0 = 0usize;
        let mut data = Vec::new();
        let mut spans = Vec::with_capacity(ids.len());
        for &id in ids {
            let v = self.value(id);
            assert_eq!(&v.shape()[1..], tail.as_slice(), "concat_dim0 trailing mismatch");
            spans.push((id, v.len()));
            d0 += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![d0];
        shape.extend_from_slice(&tail);
        self.push(
            Array::from_vec(&shape, data),
            Some(Box::new(move |g, grad, sink| {
                let mut off = 0usize;
                for &(id, len) in &spans {
                    let part = Array::from_vec(
                        g.value(id).shape(),
                        grad.data()[off..off + len].to_vec(),
                    );
                    accum(sink, id, part);
                    off += len;
                }
            })),
        )
    }

    pub fn slice_dim0(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(x);
        let stride: usize = v.shape()[1..].iter().product();
        let mut shape = v.shape().to_vec();
        shape[0] = len;
        let value = Array::from_vec(
            &shape,
            v.data()[start * stride..(start + len) * stride].to_vec(),
        );
        self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let full = g.value(x);
                let mut dx = Array::zeros(full.shape());
                dx.data_mut()[start * stride..(start + len) * stride]
                    .copy_from_slice(grad.data());
                accum(sink, x, dx);
            })),
        )
    }

    // ── Reductions and broadcasts ───────────────────────────────

    /// Mean along every axis except `kept`, producing a vector.
    pub fn mean_over_others(&mut self, x: NodeId, kept: usize) -> NodeId {
        let v = self.value(x);
        let count = (v.len() / v.shape()[kept]) as f64;
        let value = kernels::mean_over_others(v, kept);
        self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let full = g.value(x);
                let dx = broadcast_vector(grad, full.shape(), kept).map(|v| v / count);
                accum(sink, x, dx);
            })),
        )
    }

    /// Sum along every axis except `kept`.
    pub fn sum_over_others(&mut self, x: NodeId, kept: usize) -> NodeId {
        let value = kernels::sum_over_others(self.value(x), kept);
        self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let full = g.value(x);
                accum(sink, x, broadcast_vector(grad, full.shape(), kept));
            })),
        )
    }

    /// Expand vector `v` to `shape`, aligned with axis `dim`.
    pub fn broadcast_along(&mut self, v: NodeId, shape: &[usize], dim: usize) -> NodeId {
        let vec = self.value(v);
        assert_eq!(vec.len(), shape[dim], "broadcast length mismatch");
        let value = broadcast_vector(vec, shape, dim);
        self.push(
            value,
            Some(Box::new(move |_g, grad, sink| {
                accum(sink, v, kernels::sum_over_others(grad, dim));
            })),
        )
    }

    /// `x * v` with `v` broadcast along axis `dim` of `x`.
    pub fn mul_broadcast(&mut self, x: NodeId, v: NodeId, dim: usize) -> NodeId {
        let (vx, vv) = (self.value(x), self.value(v));
        assert_eq!(vv.len(), vx.shape()[dim], "mul_broadcast length mismatch");
        let bc = broadcast_vector(vv, vx.shape(), dim);
        let value = Array::from_vec(
            vx.shape(),
            vx.data().iter().zip(bc.data()).map(|(a, b)| a * b).collect(),
        );
        self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let (vx, vv) = (g.value(x), g.value(v));
                let bc = broadcast_vector(vv, vx.shape(), dim);
                let dx = Array::from_vec(
                    grad.shape(),
                    grad.data().iter().zip(bc.data()).map(|(a, b)| a * b).collect(),
                );
                let gx = Array::from_vec(
                    grad.shape(),
                    grad.data().iter().zip(vx.data()).map(|(a, b)| a * b).collect(),
                );
                accum(sink, x, dx);
                accum(sink, v, kernels::sum_over_others(&gx, dim));
            })),
        )
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let n = v.len() as f64;
        let value = Array::scalar(v.data().iter().sum::<f64>() / n);
        self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let full = g.value(x);
                let gv = grad.item() / n;
                accum(sink, x, Array::filled(full.shape(), gv));
            })),
        )
    }

    /// Multiply every element by a one-element node.
    pub fn mul_scalar_node(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let sv = self.value(s).item();
        let value = self.value(x).map(|v| v * sv);
        self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let sv = g.value(s).item();
                let vx = g.value(x);
                accum(sink, x, grad.map(|v| v * sv));
                let ds: f64 = grad.data().iter().zip(vx.data()).map(|(a, b)| a * b).sum();
                accum(sink, s, Array::scalar(ds));
            })),
        )
    }

    /// Add a one-element node to every element.
    pub fn add_scalar_node(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let sv = self.value(s).item();
        let value = self.value(x).map(|v| v + sv);
        self.push(
            value,
            Some(Box::new(move |_g, grad, sink| {
                accum(sink, x, grad.clone());
                accum(sink, s, Array::scalar(grad.data().iter().sum()));
            })),
        )
    }

    // ── Linear algebra ─────────────────────────────────────────

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let value = kernels::matvec(self.value(w), self.value(x));
        self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let (vw, vx) = (g.value(w), g.value(x));
                let (rows, cols) = (vw.shape()[0], vw.shape()[1]);
                let mut dw = Array::zeros(&[rows, cols]);
                for r in 0..rows {
                    let gv = grad.data()[r];
                    for c in 0..cols {
                        dw.set2(r, c, gv * vx.data()[c]);
                    }
                }
                let mut dx = Array::zeros(&[cols]);
                for r in 0..rows {
                    let gv = grad.data()[r];
                    for c in 0..cols {
                        dx.data_mut()[c] += gv * vw.at2(r, c);
                    }
                }
                accum(sink, w, dw);
                accum(sink, x, dx);
            })),
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = kernels::matmul(self.value(a), self.value(b));
        self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let (va, vb) = (g.value(a), g.value(b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                // dA = g B^T
                let mut da = Array::zeros(&[m, k]);
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += grad.at2(i, j) * vb.at2(p, j);
                        }
                        da.set2(i, p, acc);
                    }
                }
                // dB = A^T g
                let mut db = Array::zeros(&[k, n]);
                for p in 0..k {
                    for i in 0..m {
                        let av = va.at2(i, p);
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db.data_mut()[p * n + j] += av * grad.at2(i, j);
                        }
                    }
                }
                accum(sink, a, da);
                accum(sink, b, db);
            })),
        )
    }

    // ── Convolutions ────────────────────────────────────────────

    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        dilation: usize,
    ) -> NodeId {
        let value = kernels::conv1d(
            self.value(x),
            self.value(w),
            bias.map(|b| self.value(b)),
            dilation,
        );
        self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let (dx, dw, db) =
                    kernels::conv1d_backward(g.value(x), g.value(w), grad, dilation);
                accum(sink, x, dx);
                accum(sink, w, dw);
                if let Some(b) = bias {
                    accum(sink, b, db);
                }
            })),
        )
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride_f: usize,
    ) -> NodeId {
        let value = kernels::conv2d(
            self.value(x),
            self.value(w),
            bias.map(|b| self.value(b)),
            stride_f,
        );
        self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let (dx, dw, db) =
                    kernels::conv2d_backward(g.value(x), g.value(w), grad, stride_f);
                accum(sink, x, dx);
                accum(sink, w, dw);
                if let Some(b) = bias {
                    accum(sink, b, db);
                }
            })),
        )
    }

    // ── Softmax and losses ──────────────────────────────────────

    pub fn softmax_axis(&mut self, x: NodeId, axis: usize) -> NodeId {
        let value = kernels::softmax(self.value(x), axis);
        let id = self.push(value, None);
        let out = id;
        self.nodes[id.0].backward = Some(Box::new(move |g, grad, sink| {
            let y = g.value(out);
            let shape = y.shape();
            let n = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let outer: usize = shape[..axis].iter().product();
            let mut dx = Array::zeros(shape);
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * n + j) * inner + i;
                    let mut dot = 0.0;
                    for j in 0..n {
                        dot += grad.data()[idx(j)] * y.data()[idx(j)];
                    }
                    for j in 0..n {
                        dx.data_mut()[idx(j)] =
                            y.data()[idx(j)] * (grad.data()[idx(j)] - dot);
                    }
                }
            }
            accum(sink, x, dx);
        }));
        id
    }

    /// L2-normalize a vector (norm clamped at 1e-12).
    pub fn l2_normalize(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let r = v.norm().max(1e-12);
        let value = v.map(|t| t / r);
        let id = self.push(value, None);
        let out = id;
        self.nodes[id.0].backward = Some(Box::new(move |g, grad, sink| {
            let y = g.value(out);
            let r = g.value(x).norm().max(1e-12);
            let dot: f64 = grad.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let dx = Array::from_vec(
                grad.shape(),
                grad.data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| (gv - yv * dot) / r)
                    .collect(),
            );
            accum(sink, x, dx);
        }));
        id
    }

    /// Row-wise L2 normalization of a rank-2 array.
    pub fn l2_normalize_rows(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let (rows, cols) = (v.shape()[0], v.shape()[1]);
        let mut value = Array::zeros(&[rows, cols]);
        for r in 0..rows {
            let nrm = v.row(r).iter().map(|t| t * t).sum::<f64>().sqrt().max(1e-12);
            for c in 0..cols {
                value.set2(r, c, v.at2(r, c) / nrm);
            }
        }
        let id = self.push(value, None);
        let out = id;
        self.nodes[id.0].backward = Some(Box::new(move |g, grad, sink| {
            let y = g.value(out);
            let vx = g.value(x);
            let (rows, cols) = (vx.shape()[0], vx.shape()[1]);
            let mut dx = Array::zeros(&[rows, cols]);
            for r in 0..rows {
                let nrm = vx.row(r).iter().map(|t| t * t).sum::<f64>().sqrt().max(1e-12);
                let dot: f64 = grad.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                for c in 0..cols {
                    dx.set2(r, c, (grad.at2(r, c) - y.at2(r, c) * dot) / nrm);
                }
            }
            accum(sink, x, dx);
        }));
        id
    }

    /// Stable softmax cross-entropy of a logit vector against `target`.
    pub fn cross_entropy_logits(&mut self, logits: NodeId, target: usize) -> NodeId {
        let v = self.value(logits);
        let m = v.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + v.data().iter().map(|t| (t - m).exp()).sum::<f64>().ln();
        let value = Array::scalar(lse - v.data()[target]);
        self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let v = g.value(logits);
                let p = kernels::softmax(v, 0);
                let gv = grad.item();
                let mut dl = p.map(|t| t * gv);
                dl.data_mut()[target] -= gv;
                accum(sink, logits, dl);
            })),
        )
    }

    /// Mean softmax cross-entropy over rows of a square score matrix
    /// with diagonal targets.
    pub fn cross_entropy_diagonal(&mut self, scores: NodeId) -> NodeId {
        let v = self.value(scores);
        let s = v.shape()[0];
        assert_eq!(v.shape()[1], s, "cross_entropy_diagonal requires a square matrix");
        let mut total = 0.0;
        for i in 0..s {
            let row = v.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
            total += lse - row[i];
        }
        let value = Array::scalar(total / s as f64);
        self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let v = g.value(scores);
                let s = v.shape()[0];
                let gv = grad.item() / s as f64;
                let p = kernels::softmax(v, 1);
                let mut dm = p.map(|t| t * gv);
                for i in 0..s {
                    let idx = i * s + i;
                    dm.data_mut()[idx] -= gv;
                }
                accum(sink, scores, dm);
            })),
        )
    }

    /// Additive-angular-margin transform of a cosine vector: scales all
    /// entries by `scale` and replaces the target entry with
    /// `cos(theta + margin)`, guarded near theta = pi.
    pub fn aam_margin(&mut self, cos: NodeId, target: usize, margin: f64, scale: f64) -> NodeId {
        let (cos_m, sin_m) = (margin.cos(), margin.sin());
        let th = (std::f64::consts::PI - margin).cos();
        let mm = (std::f64::consts::PI - margin).sin() * margin;
        let v = self.value(cos);
        let mut out = v.map(|t| t * scale);
        let ct = v.data()[target];
        let phi = if ct > th {
            let st = (1.0 - ct * ct).max(0.0).sqrt();
            ct * cos_m - st * sin_m
        } else {
            ct - mm
        };
        out.data_mut()[target] = phi * scale;
        self.push(
            out,
            Some(Box::new(move |g, grad, sink| {
                let v = g.value(cos);
                let mut dc = grad.map(|t| t * scale);
                let ct = v.data()[target];
                let dphi = if ct > th {
                    let st = (1.0 - ct * ct).max(0.0).sqrt().max(1e-12);
                    cos_m + sin_m * ct / st
                } else {
                    1.0
                };
                dc.data_mut()[target] = grad.data()[target] * scale * dphi;
                accum(sink, cos, dc);
            })),
        )
    }

    // ── Batch normalization ─────────────────────────────────────

    /// Train-mode batch norm: normalizes with the statistics of `x`
    /// itself and reports them so the caller can update running
    /// buffers. `gamma`/`beta` have one entry per leading-axis channel
    /// (or per element for rank-1 inputs).
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> (NodeId, BatchStats) {
        let v = self.value(x);
        let (groups, gsize) = bn_groups(v.shape());
        let mut mean = vec![0.0; groups];
        let mut var = vec![0.0; groups];
        for gi in 0..groups {
            let s = &v.data()[gi * gsize..(gi + 1) * gsize];
            let mu = s.iter().sum::<f64>() / gsize as f64;
            let vv = s.iter().map(|t| (t - mu) * (t - mu)).sum::<f64>() / gsize as f64;
            mean[gi] = mu;
            var[gi] = vv;
        }
        let stats = BatchStats {
            mean: mean.clone(),
            var: var.clone(),
        };
        let value = bn_apply(v, self.value(gamma), self.value(beta), &mean, &var, eps);
        let id = self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let v = g.value(x);
                let (groups, gsize) = bn_groups(v.shape());
                let vgamma = g.value(gamma);
                let rank1 = v.rank() == 1;
                let mut dx = Array::zeros(v.shape());
                let mut dgamma = Array::zeros(vgamma.shape());
                let mut dbeta = Array::zeros(vgamma.shape());
                for gi in 0..groups {
                    let lo = gi * gsize;
                    let inv = 1.0 / (var[gi] + eps).sqrt();
                    // h = dL/dxhat, then the standard batch-norm input grad
                    let mut mean_h = 0.0;
                    let mut mean_hx = 0.0;
                    for j in 0..gsize {
                        let gamma_j = if rank1 { vgamma.data()[j] } else { vgamma.data()[gi] };
                        let xhat = (v.data()[lo + j] - mean[gi]) * inv;
                        let h = grad.data()[lo + j] * gamma_j;
                        mean_h += h;
                        mean_hx += h * xhat;
                        let slot = if rank1 { j } else { gi };
                        dgamma.data_mut()[slot] += grad.data()[lo + j] * xhat;
                        dbeta.data_mut()[slot] += grad.data()[lo + j];
                    }
                    mean_h /= gsize as f64;
                    mean_hx /= gsize as f64;
                    for j in 0..gsize {
                        let gamma_j = if rank1 { vgamma.data()[j] } else { vgamma.data()[gi] };
                        let xhat = (v.data()[lo + j] - mean[gi]) * inv;
                        let h = grad.data()[lo + j] * gamma_j;
                        dx.data_mut()[lo + j] = (h - mean_h - xhat * mean_hx) * inv;
                    }
                }
                accum(sink, x, dx);
                accum(sink, gamma, dgamma);
                accum(sink, beta, dbeta);
            })),
        );
        (id, stats)
    }

    /// Eval-mode batch norm using fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        mean: &[f64],
        var: &[f64],
    ) -> NodeId {
        let v = self.value(x);
        let (groups, _) = bn_groups(v.shape());
        assert_eq!(mean.len(), groups, "running stats length mismatch");
        let value = bn_apply(v, self.value(gamma), self.value(beta), mean, var, eps);
        let mean = mean.to_vec();
        let var = var.to_vec();
        self.push(
            value,
            Some(Box::new(move |g, grad, sink| {
                let v = g.value(x);
                let (groups, gsize) = bn_groups(v.shape());
                let vgamma = g.value(gamma);
                let rank1 = v.rank() == 1;
                let mut dx = Array::zeros(v.shape());
                let mut dgamma = Array::zeros(vgamma.shape());
                let mut dbeta = Array::zeros(vgamma.shape());
                for gi in 0..groups {
                    let lo = gi * gsize;
                    let inv = 1.0 / (var[gi] + eps).sqrt();
                    for j in 0..gsize {
                        let gamma_j = if rank1 { vgamma.data()[j] } else { vgamma.data()[gi] };
                        let xhat = (v.data()[lo + j] - mean[gi]) * inv;
                        let slot = if rank1 { j } else { gi };
                        dgamma.data_mut()[slot] += grad.data()[lo + j] * xhat;
                        dbeta.data_mut()[slot] += grad.data()[lo + j];
                        dx.data_mut()[lo + j] = grad.data()[lo + j] * gamma_j * inv;
                    }
                }
                accum(sink, x, dx);
                accum(sink, gamma, dgamma);
                accum(sink, beta, dbeta);
            })),
        )
    }
}

fn bn_apply(
    x: &Array,
    gamma: &Array,
    beta: &Array,
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Array {
    let (groups, gsize) = bn_groups(x.shape());
    let rank1 = x.rank() == 1;
    let mut out = Array::zeros(x.shape());
    for gi in 0..groups {
        let lo = gi * gsize;
        let inv = 1.0 / (var[gi] + eps).sqrt();
        for j in 0..gsize {
            let (gv, bv) = if rank1 {
                (gamma.data()[j], beta.data()[j])
            } else {
                (gamma.data()[gi], beta.data()[gi])
            };
            out.data_mut()[lo + j] = (x.data()[lo + j] - mean[gi]) * inv * gv + bv;
        }
    }
    out
}

/// Expand a vector to `shape`, repeating along every axis except `dim`.
fn broadcast_vector(v: &Array, shape: &[usize], dim: usize) -> Array {
    let n = shape[dim];
    let inner: usize = shape[dim + 1..].iter().product();
    let outer: usize = shape[..dim].iter().product();
    let mut out = Array::zeros(shape);
    for o in 0..outer {
        for j in 0..n {
            let base = (o * n + j) * inner;
            out.data_mut()[base..base + inner].fill(v.data()[j]);
        }
    }
    out
}
