//! The learnable models: factorized spatio-temporal graph attention with
//! per-relation symmetric edge heads, and a padded recurrent baseline.

mod baseline;
mod checkpoint;
mod gnn;

pub use baseline::{RnnHyper, RnnModel};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gnn::{EdgeLists, GnnHyper, GnnModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{enumerate_pairs, DynamicGraph};
use crate::loss::RelationSpec;
use crate::rng::Rng;
use crate::tensor::{GradientMap, Tape, Tensor};

/// Flat, named parameter storage. Entry order is the canonical declaration
/// order used by the optimizer and the checkpoint format.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    data: Vec<Vec<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            shapes: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.names.push(name.into());
        self.shapes.push(shape);
        self.data.push(data);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn values(&self, i: usize) -> &[f64] {
        &self.data[i]
    }

    pub fn data_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.data
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.data.iter().map(Vec::len).collect()
    }

    pub fn n_scalars(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }

    /// Interns every parameter on `tape` as a gradient-tracked leaf, in
    /// declaration order.
    pub fn leaves_on(&self, tape: &mut Tape) -> Vec<Tensor> {
        self.names
            .iter()
            .zip(&self.shapes)
            .zip(&self.data)
            .map(|((_, shape), data)| {
                let t = Tensor::param(shape.clone(), data.clone())
                    .expect("stored parameter shapes are consistent");
                tape.leaf(&t)
            })
            .collect()
    }

    /// Gradient vectors aligned with declaration order (None where a
    /// parameter did not participate in the loss).
    pub fn align_gradients(&self, leaves: &[Tensor], grads: &GradientMap) -> Vec<Option<Vec<f64>>> {
        leaves
            .iter()
            .map(|l| grads.of(l).map(|g| g.to_vec()))
            .collect()
    }

    /// Euclidean norm per parameter, for diagnostics.
    pub fn l2_norms(&self) -> Vec<(String, f64)> {
        self.names
            .iter()
            .zip(&self.data)
            .map(|(n, d)| (n.clone(), d.iter().map(|x| x * x).sum::<f64>().sqrt()))
            .collect()
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Uniform init in ±sqrt(6 / (fan_in + fan_out)).
pub(crate) fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize, len: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.range_f64(-bound, bound)).collect()
}

/// Appends one relation's edge-head parameters: the pair bias added to the
/// averaged representation, a hidden layer, and the class output layer.
pub(crate) fn push_edge_head(
    params: &mut ParamSet,
    rng: &mut Rng,
    relation: &str,
    hidden_dim: usize,
    class_count: usize,
) {
    let d = hidden_dim;
    let c = class_count;
    params.push(format!("edge.{relation}.b_pair"), vec![1, d], vec![0.0; d]);
    params.push(
        format!("edge.{relation}.w1"),
        vec![d, d],
        glorot(rng, d, d, d * d),
    );
    params.push(format!("edge.{relation}.b1"), vec![1, d], vec![0.0; d]);
    params.push(
        format!("edge.{relation}.w2"),
        vec![d, c],
        glorot(rng, d, c, d * c),
    );
    params.push(format!("edge.{relation}.b2"), vec![1, c], vec![0.0; c]);
}

pub(crate) const EDGE_HEAD_PARAMS: usize = 5;

/// Per-relation class logits for every unordered pair of final-frame nodes,
/// in canonical pair order. Scores are symmetric in the pair by
/// construction: each unordered pair is computed exactly once from the
/// order-invariant mean of its endpoint representations.
#[derive(Debug)]
pub struct EdgePredictions {
    /// Within-frame index pairs `(i, j)`, `i < j`, canonical order.
    pub pairs: Vec<(usize, usize)>,
    /// Node count of the final frame.
    pub n_last: usize,
    /// Per relation (model declaration order): `[n_pairs, class_count]`
    /// logits on the forward tape.
    pub scores: Vec<Tensor>,
}

/// Applies the per-relation edge heads to final node representations.
///
/// `node_repr` is `[rows, hidden_dim]`; `last_frame_rows` maps each
/// final-frame node to its row. Every unordered pair feeds
/// `psi_r((h_i + h_j) / 2 + b)` where `psi_r` is a leaky-relu hidden layer
/// followed by a linear class layer.
pub(crate) fn predict_edges(
    tape: &mut Tape,
    node_repr: &Tensor,
    last_frame_rows: &[usize],
    relations: &[RelationSpec],
    leaves: &[Tensor],
    head_base: impl Fn(usize) -> usize,
) -> Result<EdgePredictions> {
    let n = last_frame_rows.len();
    let pairs: Vec<(usize, usize)> = enumerate_pairs(n).collect();
    let mut scores = Vec::with_capacity(relations.len());
    if pairs.is_empty() {
        return Ok(EdgePredictions {
            pairs,
            n_last: n,
            scores,
        });
    }

    let left: Vec<usize> = pairs.iter().map(|&(i, _)| last_frame_rows[i]).collect();
    let right: Vec<usize> = pairs.iter().map(|&(_, j)| last_frame_rows[j]).collect();
    let hi = tape.gather_rows(node_repr, &left)?;
    let hj = tape.gather_rows(node_repr, &right)?;
    let sum = tape.add(&hi, &hj)?;
    let mean = tape.scale(&sum, 0.5)?; // [P, D']
    let p = pairs.len();
    let ones_col = tape.constant_from(vec![p, 1], vec![1.0; p])?;

    for (r, _spec) in relations.iter().enumerate() {
        let base = head_base(r);
        let b_pair = &leaves[base];
        let w1 = &leaves[base + 1];
        let b1 = &leaves[base + 2];
        let w2 = &leaves[base + 3];
        let b2 = &leaves[base + 4];

        let b_spread = tape.matmul(&ones_col, b_pair)?;
        let x = tape.add(&mean, &b_spread)?;
        let z1 = tape.matmul(&x, w1)?;
        let b1_spread = tape.matmul(&ones_col, b1)?;
        let z1b = tape.add(&z1, &b1_spread)?;
        let h = tape.leaky_relu(&z1b)?;
        let z2 = tape.matmul(&h, w2)?;
        let b2_spread = tape.matmul(&ones_col, b2)?;
        scores.push(tape.add(&z2, &b2_spread)?);
    }

    Ok(EdgePredictions {
        pairs,
        n_last: n,
        scores,
    })
}

/// Node features of the whole graph as one `[n_nodes, feature_dim]`
/// constant, rows in global node order.
pub(crate) fn features_matrix(tape: &mut Tape, graph: &DynamicGraph) -> Result<Tensor> {
    let n = graph.n_nodes();
    let d = graph.feature_dim;
    let mut data = Vec::with_capacity(n * d);
    for frame in &graph.frames {
        for node in &frame.nodes {
            if node.features.len() != d {
                return Err(Error::FeatureDimMismatch {
                    expected: d,
                    got: node.features.len(),
                });
            }
            data.extend_from_slice(&node.features);
        }
    }
    tape.constant_from(vec![n, d], data)
}

/// Which model a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "mtd-gnn")]
    Gnn,
    #[serde(rename = "baseline-rnn")]
    BaselineRnn,
}

/// A trained or initialized model of either kind, with a uniform surface
/// for the trainer and evaluator.
#[derive(Debug, Clone)]
pub enum Model {
    Gnn(GnnModel),
    Rnn(RnnModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Gnn(_) => ModelKind::Gnn,
            Model::Rnn(_) => ModelKind::BaselineRnn,
        }
    }

    pub fn relations(&self) -> &[RelationSpec] {
        match self {
            Model::Gnn(m) => &m.relations,
            Model::Rnn(m) => &m.relations,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Model::Gnn(m) => &m.params,
            Model::Rnn(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Model::Gnn(m) => &mut m.params,
            Model::Rnn(m) => &mut m.params,
        }
    }

    /// Full forward pass: graph in, per-relation pair logits out.
    pub fn forward(&self, tape: &mut Tape, graph: &DynamicGraph) -> Result<EdgePredictions> {
        match self {
            Model::Gnn(m) => {
                let adj = graph.adjacency();
                let leaves = m.params.leaves_on(tape);
                m.forward_with(tape, graph, &adj, &leaves)
            }
            Model::Rnn(m) => {
                let leaves = m.params.leaves_on(tape);
                m.forward_with(tape, graph, &leaves)
            }
        }
    }

    /// Forward pass on pre-interned leaves (for training, where the same
    /// leaves feed the loss and the gradient map).
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        graph: &DynamicGraph,
        leaves: &[Tensor],
    ) -> Result<EdgePredictions> {
        match self {
            Model::Gnn(m) => {
                let adj = graph.adjacency();
                m.forward_with(tape, graph, &adj, leaves)
            }
            Model::Rnn(m) => m.forward_with(tape, graph, leaves),
        }
    }
}
