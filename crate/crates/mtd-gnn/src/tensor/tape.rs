//! Gradient tape: records primitive operations in topological order and
//! replays them in reverse to accumulate gradients.

use std::sync::atomic::{AtomicU64, Ordering};

use super::fault::{self, Fault};
use super::{Tensor, TapeRef};
use crate::error::{Error, Result};

static NEXT_TAPE_UID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { lhs: usize, rhs: usize },
    Add { lhs: usize, rhs: usize },
    Sub { lhs: usize, rhs: usize },
    Mul { lhs: usize, rhs: usize },
    Scale { input: usize, factor: f64 },
    ConcatCols { lhs: usize, rhs: usize },
    Sigmoid { input: usize },
    LeakyRelu { input: usize },
    Exp { input: usize },
    Log { input: usize },
    MeanAxis { input: usize, axis: usize },
    SegmentSoftmax { input: usize, segments: Vec<Vec<usize>> },
    GatherRows { input: usize, indices: Vec<usize> },
    ScatterAddRows { input: usize, indices: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    needs_grad: bool,
}

/// Records every primitive of one forward pass. One tape per sample, one
/// thread per tape; `backward` may be called exactly once.
#[derive(Debug)]
pub struct Tape {
    uid: u64,
    nodes: Vec<Node>,
    consumed: bool,
}

/// Negative slope used by the leaky-relu primitive.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Lower clamp applied inside the log primitive.
pub const LOG_CLAMP: f64 = 1e-12;

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            uid: NEXT_TAPE_UID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a tensor as a leaf and returns the taped copy.
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        self.record(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    /// Registers a non-learnable constant.
    pub fn constant(&mut self, t: &Tensor) -> Tensor {
        self.record(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), false)
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::new(shape, data)?;
        Ok(self.constant(&t))
    }

    fn record(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>, needs_grad: bool) -> Tensor {
        let node = self.nodes.len();
        self.nodes.push(Node {
            op,
            shape: shape.clone(),
            value: value.clone(),
            needs_grad,
        });
        let mut out = Tensor::new(shape, value).expect("recorded node shape is consistent");
        out.tape_id = Some(TapeRef {
            tape_uid: self.uid,
            node,
        });
        out
    }

    fn node_of(&self, t: &Tensor, op: &'static str) -> Result<usize> {
        match t.tape_id {
            Some(r) if r.tape_uid == self.uid => Ok(r.node),
            _ => Err(Error::DetachedTensor { op }),
        }
    }

    fn needs(&self, node: usize) -> bool {
        self.nodes[node].needs_grad
    }

    // ── primitives ──────────────────────────────────────────────────

    /// `[m,k] @ [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = (self.node_of(a, "matmul")?, self.node_of(b, "matmul")?);
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let c = matmul_raw(a.data(), b.data(), m, k, n);
        let needs = self.needs(ia) || self.needs(ib);
        Ok(self.record(Op::MatMul { lhs: ia, rhs: ib }, vec![m, n], c, needs))
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise_binary(a, b, "add")
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise_binary(a, b, "sub")
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise_binary(a, b, "mul")
    }

    fn elementwise_binary(&mut self, a: &Tensor, b: &Tensor, op: &'static str) -> Result<Tensor> {
        let (ia, ib) = (self.node_of(a, op)?, self.node_of(b, op)?);
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let value: Vec<f64> = match op {
            "add" => a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
            "sub" => a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect(),
            _ => a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
        };
        let node_op = match op {
            "add" => Op::Add { lhs: ia, rhs: ib },
            "sub" => Op::Sub { lhs: ia, rhs: ib },
            _ => Op::Mul { lhs: ia, rhs: ib },
        };
        let needs = self.needs(ia) || self.needs(ib);
        Ok(self.record(node_op, a.shape().to_vec(), value, needs))
    }

    pub fn scale(&mut self, a: &Tensor, factor: f64) -> Result<Tensor> {
        let ia = self.node_of(a, "scale")?;
        let value = a.data().iter().map(|x| x * factor).collect();
        let needs = self.needs(ia);
        Ok(self.record(Op::Scale { input: ia, factor }, a.shape().to_vec(), value, needs))
    }

    /// Concatenates along the last axis. Rank-1 vectors or rank-2 matrices
    /// with equal leading extent.
    pub fn concat_cols(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = (self.node_of(a, "concat")?, self.node_of(b, "concat")?);
        let mismatch = || Error::ShapeMismatch {
            op: "concat",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        let (shape, value) = match (a.rank(), b.rank()) {
            (1, 1) => {
                let mut v = a.data().to_vec();
                v.extend_from_slice(b.data());
                (vec![a.shape()[0] + b.shape()[0]], v)
            }
            (2, 2) => {
                if a.shape()[0] != b.shape()[0] {
                    return Err(mismatch());
                }
                let rows = a.shape()[0];
                let (ca, cb) = (a.shape()[1], b.shape()[1]);
                let mut v = Vec::with_capacity(rows * (ca + cb));
                for r in 0..rows {
                    v.extend_from_slice(&a.data()[r * ca..(r + 1) * ca]);
                    v.extend_from_slice(&b.data()[r * cb..(r + 1) * cb]);
                }
                (vec![rows, ca + cb], v)
            }
            _ => return Err(mismatch()),
        };
        let needs = self.needs(ia) || self.needs(ib);
        Ok(self.record(Op::ConcatCols { lhs: ia, rhs: ib }, shape, value, needs))
    }

    pub fn sigmoid(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.node_of(a, "sigmoid")?;
        let value = a.data().iter().map(|&x| stable_sigmoid(x)).collect();
        let needs = self.needs(ia);
        Ok(self.record(Op::Sigmoid { input: ia }, a.shape().to_vec(), value, needs))
    }

    pub fn leaky_relu(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.node_of(a, "leaky_relu")?;
        let value = a
            .data()
            .iter()
            .map(|&x| if x >= 0.0 { x } else { LEAKY_SLOPE * x })
            .collect();
        let needs = self.needs(ia);
        Ok(self.record(Op::LeakyRelu { input: ia }, a.shape().to_vec(), value, needs))
    }

    pub fn exp(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.node_of(a, "exp")?;
        let value = a.data().iter().map(|x| x.exp()).collect();
        let needs = self.needs(ia);
        Ok(self.record(Op::Exp { input: ia }, a.shape().to_vec(), value, needs))
    }

    /// Natural log with the input clamped to `LOG_CLAMP` from below.
    pub fn log(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.node_of(a, "log")?;
        let value = a.data().iter().map(|&x| x.max(LOG_CLAMP).ln()).collect();
        let needs = self.needs(ia);
        Ok(self.record(Op::Log { input: ia }, a.shape().to_vec(), value, needs))
    }

    /// Mean over one axis; the axis is removed from the output shape.
    pub fn mean_axis(&mut self, a: &Tensor, axis: usize) -> Result<Tensor> {
        let ia = self.node_of(a, "mean_axis")?;
        if axis >= a.rank() {
            return Err(Error::InvalidShape {
                op: "mean_axis",
                shape: a.shape().to_vec(),
                reason: format!("axis {axis} out of range"),
            });
        }
        let (outer, extent, inner) = axis_split(a.shape(), axis);
        let mut value = vec![0.0; outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let base = (o * extent + e) * inner;
                let dst = o * inner;
                for i in 0..inner {
                    value[dst + i] += a.data()[base + i];
                }
            }
        }
        let inv = 1.0 / extent as f64;
        for v in &mut value {
            *v *= inv;
        }
        let mut shape = a.shape().to_vec();
        shape.remove(axis);
        let needs = self.needs(ia);
        Ok(self.record(Op::MeanAxis { input: ia, axis }, shape, value, needs))
    }

    /// Softmax restricted to index subsets of a vector (rank-1, or a rank-2
    /// column). Every segment is normalized independently with max
    /// subtraction; indices not covered by any segment yield 0. Segments
    /// must be non-empty and disjoint.
    pub fn segment_softmax(&mut self, a: &Tensor, segments: &[Vec<usize>]) -> Result<Tensor> {
        let ia = self.node_of(a, "segment_softmax")?;
        let is_vector = a.rank() == 1 || (a.rank() == 2 && a.shape()[1] == 1);
        if !is_vector {
            return Err(Error::InvalidShape {
                op: "segment_softmax",
                shape: a.shape().to_vec(),
                reason: "expects a vector or single-column matrix".into(),
            });
        }
        let n = a.numel();
        let mut seen = vec![false; n];
        for (s, seg) in segments.iter().enumerate() {
            if seg.is_empty() {
                return Err(Error::EmptySegment { segment: s });
            }
            for &i in seg {
                if i >= n {
                    return Err(Error::IndexOutOfBounds {
                        op: "segment_softmax",
                        index: i,
                        len: n,
                    });
                }
                if seen[i] {
                    return Err(Error::OverlappingSegments { index: i });
                }
                seen[i] = true;
            }
        }
        let mut value = vec![0.0; n];
        for seg in segments {
            let max = seg.iter().map(|&i| a.data()[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &i in seg {
                let e = (a.data()[i] - max).exp();
                value[i] = e;
                denom += e;
            }
            for &i in seg {
                value[i] /= denom;
            }
        }
        let needs = self.needs(ia);
        Ok(self.record(
            Op::SegmentSoftmax {
                input: ia,
                segments: segments.to_vec(),
            },
            a.shape().to_vec(),
            value,
            needs,
        ))
    }

    /// `out[e] = input[indices[e]]` over the leading axis.
    pub fn gather_rows(&mut self, a: &Tensor, indices: &[usize]) -> Result<Tensor> {
        let ia = self.node_of(a, "gather_rows")?;
        let (rows, cols) = gather_dims(a)?;
        for &i in indices {
            if i >= rows {
                return Err(Error::IndexOutOfBounds {
                    op: "gather_rows",
                    index: i,
                    len: rows,
                });
            }
        }
        let mut value = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            value.extend_from_slice(&a.data()[i * cols..(i + 1) * cols]);
        }
        let shape = if a.rank() == 1 {
            vec![indices.len()]
        } else {
            vec![indices.len(), cols]
        };
        let needs = self.needs(ia);
        Ok(self.record(
            Op::GatherRows {
                input: ia,
                indices: indices.to_vec(),
            },
            shape,
            value,
            needs,
        ))
    }

    /// `out[indices[e]] += input[e]` into `rows` output rows.
    pub fn scatter_add_rows(&mut self, a: &Tensor, indices: &[usize], rows: usize) -> Result<Tensor> {
        let ia = self.node_of(a, "scatter_add_rows")?;
        let (in_rows, cols) = gather_dims(a)?;
        if indices.len() != in_rows {
            return Err(Error::InvalidShape {
                op: "scatter_add_rows",
                shape: a.shape().to_vec(),
                reason: format!("{} indices for {} rows", indices.len(), in_rows),
            });
        }
        for &i in indices {
            if i >= rows {
                return Err(Error::IndexOutOfBounds {
                    op: "scatter_add_rows",
                    index: i,
                    len: rows,
                });
            }
        }
        let mut value = vec![0.0; rows * cols];
        for (e, &i) in indices.iter().enumerate() {
            let src = &a.data()[e * cols..(e + 1) * cols];
            let dst = &mut value[i * cols..(i + 1) * cols];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        let shape = if a.rank() == 1 { vec![rows] } else { vec![rows, cols] };
        let needs = self.needs(ia);
        Ok(self.record(
            Op::ScatterAddRows {
                input: ia,
                indices: indices.to_vec(),
            },
            shape,
            value,
            needs,
        ))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Rejects a second call on the same
    /// tape so gradients cannot silently double-accumulate.
    pub fn backward(&mut self, loss: &Tensor) -> Result<GradientMap> {
        let root = self.node_of(loss, "backward")?;
        if !loss.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(vec![1.0]);

        for idx in (0..=root).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.apply_backward(idx, &g, &mut grads);
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        Ok(GradientMap {
            tape_uid: self.uid,
            grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], node: usize, delta: &[f64]) {
        if !self.nodes[node].needs_grad {
            return;
        }
        match &mut grads[node] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta.to_vec()),
        }
    }

    fn apply_backward(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul { lhs, rhs } => {
                let a = &self.nodes[*lhs];
                let b = &self.nodes[*rhs];
                let (m, k) = (a.shape[0], a.shape[1]);
                let n = b.shape[1];
                if self.nodes[*lhs].needs_grad {
                    // dA[i][p] = sum_j g[i][j] * B[p][j]
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &b.value[p * n..(p + 1) * n];
                            let mut s = 0.0;
                            for j in 0..n {
                                s += grow[j] * brow[j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    self.accumulate(grads, *lhs, &da);
                }
                if self.nodes[*rhs].needs_grad {
                    // dB[p][j] = sum_i A[i][p] * g[i][j]
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aval = a.value[i * k + p];
                            let dst = &mut db[p * n..(p + 1) * n];
                            for j in 0..n {
                                dst[j] += aval * grow[j];
                            }
                        }
                    }
                    self.accumulate(grads, *rhs, &db);
                }
            }
            Op::Add { lhs, rhs } => {
                self.accumulate(grads, *lhs, g);
                self.accumulate(grads, *rhs, g);
            }
            Op::Sub { lhs, rhs } => {
                self.accumulate(grads, *lhs, g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                self.accumulate(grads, *rhs, &neg);
            }
            Op::Mul { lhs, rhs } => {
                let a = &self.nodes[*lhs].value;
                let b = &self.nodes[*rhs].value;
                let da: Vec<f64> = g.iter().zip(b).map(|(x, y)| x * y).collect();
                self.accumulate(grads, *lhs, &da);
                if fault::active() != Fault::MulBackwardDropRhs {
                    let db: Vec<f64> = g.iter().zip(a).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *rhs, &db);
                }
            }
            Op::Scale { input, factor } => {
                let d: Vec<f64> = g.iter().map(|x| x * factor).collect();
                self.accumulate(grads, *input, &d);
            }
            Op::ConcatCols { lhs, rhs } => {
                let a = &self.nodes[*lhs];
                let b = &self.nodes[*rhs];
                if a.shape.len() == 1 {
                    self.accumulate(grads, *lhs, &g[..a.value.len()]);
                    self.accumulate(grads, *rhs, &g[a.value.len()..]);
                } else {
                    let rows = a.shape[0];
                    let (ca, cb) = (a.shape[1], b.shape[1]);
                    let mut da = vec![0.0; rows * ca];
                    let mut db = vec![0.0; rows * cb];
                    for r in 0..rows {
                        let src = &g[r * (ca + cb)..(r + 1) * (ca + cb)];
                        da[r * ca..(r + 1) * ca].copy_from_slice(&src[..ca]);
                        db[r * cb..(r + 1) * cb].copy_from_slice(&src[ca..]);
                    }
                    self.accumulate(grads, *lhs, &da);
                    self.accumulate(grads, *rhs, &db);
                }
            }
            Op::Sigmoid { input } => {
                let y = &self.nodes[idx].value;
                let sign = if fault::active() == Fault::SigmoidBackwardSign {
                    -1.0
                } else {
                    1.0
                };
                let d: Vec<f64> = g
                    .iter()
                    .zip(y)
                    .map(|(gi, yi)| sign * gi * yi * (1.0 - yi))
                    .collect();
                self.accumulate(grads, *input, &d);
            }
            Op::LeakyRelu { input } => {
                let x = &self.nodes[*input].value;
                let d: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(gi, xi)| if *xi >= 0.0 { *gi } else { gi * LEAKY_SLOPE })
                    .collect();
                self.accumulate(grads, *input, &d);
            }
            Op::Exp { input } => {
                let y = &self.nodes[idx].value;
                let d: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| gi * yi).collect();
                self.accumulate(grads, *input, &d);
            }
            Op::Log { input } => {
                let x = &self.nodes[*input].value;
                let d: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(gi, xi)| gi / xi.max(LOG_CLAMP))
                    .collect();
                self.accumulate(grads, *input, &d);
            }
            Op::MeanAxis { input, axis } => {
                let in_shape = &self.nodes[*input].shape;
                let (outer, extent, inner) = axis_split(in_shape, *axis);
                let inv = 1.0 / extent as f64;
                let mut d = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    for e in 0..extent {
                        let dst = (o * extent + e) * inner;
                        let src = o * inner;
                        for i in 0..inner {
                            d[dst + i] = g[src + i] * inv;
                        }
                    }
                }
                self.accumulate(grads, *input, &d);
            }
            Op::SegmentSoftmax { input, segments } => {
                let y = &self.nodes[idx].value;
                let mut d = vec![0.0; y.len()];
                for seg in segments {
                    let mut dot = 0.0;
                    for &i in seg {
                        dot += g[i] * y[i];
                    }
                    for &i in seg {
                        d[i] = y[i] * (g[i] - dot);
                    }
                }
                self.accumulate(grads, *input, &d);
            }
            Op::GatherRows { input, indices } => {
                let in_node = &self.nodes[*input];
                let cols = in_node.value.len() / leading_extent(&in_node.shape);
                let mut d = vec![0.0; in_node.value.len()];
                for (e, &i) in indices.iter().enumerate() {
                    let src = &g[e * cols..(e + 1) * cols];
                    let dst = &mut d[i * cols..(i + 1) * cols];
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a += b;
                    }
                }
                self.accumulate(grads, *input, &d);
            }
            Op::ScatterAddRows { input, indices } => {
                let in_node = &self.nodes[*input];
                let cols = in_node.value.len() / leading_extent(&in_node.shape);
                let mut d = vec![0.0; in_node.value.len()];
                for (e, &i) in indices.iter().enumerate() {
                    d[e * cols..(e + 1) * cols].copy_from_slice(&g[i * cols..(i + 1) * cols]);
                }
                self.accumulate(grads, *input, &d);
            }
        }
    }
}

/// Gradients keyed by tape node, produced by [`Tape::backward`].
#[derive(Debug)]
pub struct GradientMap {
    tape_uid: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl GradientMap {
    /// Gradient of the loss with respect to a taped tensor, if one was
    /// accumulated (leaves only; intermediates are freed during the sweep).
    pub fn of(&self, t: &Tensor) -> Option<&[f64]> {
        match t.tape_id {
            Some(r) if r.tape_uid == self.tape_uid => {
                self.grads.get(r.node).and_then(|g| g.as_deref())
            }
            _ => None,
        }
    }
}

/// Overflow-free logistic function.
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Splits a shape at `axis` into (outer, extent, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, extent, inner)
}

fn leading_extent(shape: &[usize]) -> usize {
    if shape.is_empty() {
        1
    } else {
        shape[0]
    }
}

fn gather_dims(a: &Tensor) -> Result<(usize, usize)> {
    match a.rank() {
        1 => Ok((a.shape()[0], 1)),
        2 => Ok((a.shape()[0], a.shape()[1])),
        _ => Err(Error::InvalidShape {
            op: "gather_rows",
            shape: a.shape().to_vec(),
            reason: "expects rank 1 or 2".into(),
        }),
    }
}

/// Cache-friendly `[m,k] @ [k,n]` used by the matmul primitive.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aval = a[i * k + p];
            if aval == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aval * brow[j];
            }
        }
    }
    c
}
