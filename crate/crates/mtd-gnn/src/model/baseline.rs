//! Slot-padded recurrent baseline: every frame is flattened into a fixed
//! slot layout (slot = node index within the frame), a single tanh
//! recurrence consumes the frames, and the final-frame slots feed the same
//! pairwise edge heads as the attention model.

use serde::{Deserialize, Serialize};

use super::{predict_edges, push_edge_head, EdgePredictions, ParamSet};
use crate::error::{Error, Result};
use crate::graph::DynamicGraph;
use crate::loss::RelationSpec;
use crate::model::glorot;
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};

/// Baseline hyperparameters. The hidden state is `max_nodes * slot_dim`
/// wide, so `slot_dim` plays the role the attention model's hidden width
/// plays downstream (the edge heads see one `slot_dim` vector per node).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RnnHyper {
    pub feature_dim: usize,
    pub slot_dim: usize,
    pub max_nodes: usize,
}

impl RnnHyper {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.slot_dim == 0 || self.max_nodes == 0 {
            return Err(Error::Config(format!(
                "baseline dimensions must be positive, got d={} slot={} max_nodes={}",
                self.feature_dim, self.slot_dim, self.max_nodes
            )));
        }
        Ok(())
    }

    fn state_dim(&self) -> usize {
        self.max_nodes * self.slot_dim
    }
}

/// The recurrent baseline model.
///
/// Parameter order: `rnn.w_in`, `rnn.w_h`, `rnn.b_h`, then each relation's
/// edge head.
#[derive(Debug, Clone)]
pub struct RnnModel {
    pub hyper: RnnHyper,
    pub relations: Vec<RelationSpec>,
    pub params: ParamSet,
}

const CORE_PARAMS: usize = 3;

impl RnnModel {
    pub fn init(hyper: RnnHyper, relations: Vec<RelationSpec>, seed: u64) -> Result<Self> {
        hyper.validate()?;
        if relations.is_empty() {
            return Err(Error::Config("a model needs at least one relation".into()));
        }
        for r in &relations {
            r.validate()?;
        }
        let mut rng = Rng::new(seed);
        let mut params = ParamSet::new();
        let input = hyper.max_nodes * hyper.feature_dim;
        let state = hyper.state_dim();
        params.push(
            "rnn.w_in",
            vec![input, state],
            glorot(&mut rng, input, state, input * state),
        );
        params.push(
            "rnn.w_h",
            vec![state, state],
            glorot(&mut rng, state, state, state * state),
        );
        params.push("rnn.b_h", vec![1, state], vec![0.0; state]);
        for r in &relations {
            push_edge_head(&mut params, &mut rng, &r.name, hyper.slot_dim, r.class_count);
        }
        Ok(RnnModel {
            hyper,
            relations,
            params,
        })
    }

    fn edge_head_base(&self, relation: usize) -> usize {
        CORE_PARAMS + relation * super::EDGE_HEAD_PARAMS
    }

    /// tanh through the sigmoid primitive: tanh(z) = 2*sigmoid(2z) - 1.
    fn tanh(tape: &mut Tape, z: &Tensor, ones: &Tensor) -> Result<Tensor> {
        let doubled = tape.scale(z, 2.0)?;
        let sig = tape.sigmoid(&doubled)?;
        let stretched = tape.scale(&sig, 2.0)?;
        tape.sub(&stretched, ones)
    }

    /// Final-frame node representations `[n_last, slot_dim]`: run the
    /// recurrence over all frames, then read each final-frame node's slot
    /// out of the hidden state.
    pub fn node_states(
        &self,
        tape: &mut Tape,
        graph: &DynamicGraph,
        leaves: &[Tensor],
    ) -> Result<Tensor> {
        if graph.feature_dim != self.hyper.feature_dim {
            return Err(Error::FeatureDimMismatch {
                expected: self.hyper.feature_dim,
                got: graph.feature_dim,
            });
        }
        let (d, dp, mn) = (
            self.hyper.feature_dim,
            self.hyper.slot_dim,
            self.hyper.max_nodes,
        );
        let state_dim = self.hyper.state_dim();
        let w_in = &leaves[0];
        let w_h = &leaves[1];
        let b_h = &leaves[2];
        let ones = tape.constant_from(vec![1, state_dim], vec![1.0; state_dim])?;

        let mut state = tape.constant_from(vec![1, state_dim], vec![0.0; state_dim])?;
        for (f, frame) in graph.frames.iter().enumerate() {
            if frame.nodes.len() > mn {
                return Err(Error::TooManyNodes {
                    frame: f,
                    got: frame.nodes.len(),
                    max: mn,
                });
            }
            let mut x = vec![0.0; mn * d];
            for (slot, node) in frame.nodes.iter().enumerate() {
                x[slot * d..(slot + 1) * d].copy_from_slice(&node.features);
            }
            let x = tape.constant_from(vec![1, mn * d], x)?;
            let from_input = tape.matmul(&x, w_in)?;
            let from_state = tape.matmul(&state, w_h)?;
            let pre = tape.add(&from_input, &from_state)?;
            let pre = tape.add(&pre, b_h)?;
            state = Self::tanh(tape, &pre, &ones)?;
        }

        // Slot readout: replicate the state per node, zero everything
        // outside the node's slot block, then fold the blocks down to
        // slot_dim columns (each state column h lands in column h % slot_dim,
        // and after masking only block i survives in row i).
        let n_last = graph.last_frame().len();
        if n_last == 0 {
            return tape.constant_from(vec![0, dp], Vec::new());
        }
        let ones_col = tape.constant_from(vec![n_last, 1], vec![1.0; n_last])?;
        let replicated = tape.matmul(&ones_col, &state)?; // [n_last, state_dim]
        let mut mask = vec![0.0; n_last * state_dim];
        for i in 0..n_last {
            for c in 0..dp {
                mask[i * state_dim + i * dp + c] = 1.0;
            }
        }
        let mask = tape.constant_from(vec![n_last, state_dim], mask)?;
        let masked = tape.mul(&replicated, &mask)?;
        let mut collapse = vec![0.0; state_dim * dp];
        for h in 0..state_dim {
            collapse[h * dp + h % dp] = 1.0;
        }
        let collapse = tape.constant_from(vec![state_dim, dp], collapse)?;
        tape.matmul(&masked, &collapse)
    }

    /// Full forward pass on pre-interned parameter leaves.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        graph: &DynamicGraph,
        leaves: &[Tensor],
    ) -> Result<EdgePredictions> {
        let h = self.node_states(tape, graph, leaves)?;
        let rows: Vec<usize> = (0..graph.last_frame().len()).collect();
        predict_edges(tape, &h, &rows, &self.relations, leaves, |r| {
            self.edge_head_base(r)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, FrameNodes, LabelKind, NodeData};
    use crate::loss::LossMode;

    fn spec(name: &str) -> RelationSpec {
        RelationSpec {
            name: name.into(),
            class_count: 1,
            kind: LabelKind::Binary,
            loss_mode: LossMode::Bce,
            weight: 1.0,
        }
    }

    fn hyper() -> RnnHyper {
        RnnHyper {
            feature_dim: 2,
            slot_dim: 3,
            max_nodes: 2,
        }
    }

    fn node(id: u64, f: Vec<f64>) -> NodeData {
        NodeData {
            node_id: id,
            track_id: None,
            features: f,
        }
    }

    fn two_frame_graph() -> DynamicGraph {
        let frames = vec![
            FrameNodes {
                nodes: vec![node(0, vec![0.3, -0.1]), node(1, vec![0.8, 0.2])],
            },
            FrameNodes {
                nodes: vec![node(2, vec![0.25, -0.05]), node(3, vec![0.75, 0.3])],
            },
        ];
        build_graph(frames, 100.0).unwrap().0
    }

    #[test]
    fn recurrence_matches_naive_loops() {
        let g = two_frame_graph();
        let m = RnnModel::init(hyper(), vec![spec("r")], 17).unwrap();
        let mut tape = Tape::new();
        let leaves = m.params.leaves_on(&mut tape);
        let got = m.node_states(&mut tape, &g, &leaves).unwrap();

        let (d, dp, mn) = (2, 3, 2);
        let sd = mn * dp;
        let w_in = m.params.values(0);
        let w_h = m.params.values(1);
        let b_h = m.params.values(2);
        let mut state = vec![0.0; sd];
        for frame in &g.frames {
            let mut x = vec![0.0; mn * d];
            for (slot, node) in frame.nodes.iter().enumerate() {
                x[slot * d..(slot + 1) * d].copy_from_slice(&node.features);
            }
            let next: Vec<f64> = (0..sd)
                .map(|c| {
                    let inp: f64 = (0..mn * d).map(|p| x[p] * w_in[p * sd + c]).sum();
                    let rec: f64 = (0..sd).map(|p| state[p] * w_h[p * sd + c]).sum();
                    (inp + rec + b_h[c]).tanh()
                })
                .collect();
            state = next;
        }
        assert_eq!(got.shape(), &[2, 3]);
        for i in 0..2 {
            for c in 0..dp {
                let want = state[i * dp + c];
                let have = got.data()[i * dp + c];
                assert!((have - want).abs() < 1e-12, "slot {i},{c}: {have} vs {want}");
            }
        }
    }

    #[test]
    fn too_many_nodes_is_an_error() {
        let frames = vec![FrameNodes {
            nodes: (0..3).map(|i| node(i, vec![0.1, 0.2])).collect(),
        }];
        let (g, _) = build_graph(frames, 1.0).unwrap();
        let m = RnnModel::init(hyper(), vec![spec("r")], 1).unwrap();
        let mut tape = Tape::new();
        let leaves = m.params.leaves_on(&mut tape);
        let err = m.node_states(&mut tape, &g, &leaves).unwrap_err();
        assert!(matches!(
            err,
            Error::TooManyNodes {
                frame: 0,
                got: 3,
                max: 2
            }
        ));
    }

    #[test]
    fn forward_emits_one_score_per_final_pair() {
        let g = two_frame_graph();
        let m = RnnModel::init(hyper(), vec![spec("a"), spec("b")], 7).unwrap();
        let mut tape = Tape::new();
        let leaves = m.params.leaves_on(&mut tape);
        let preds = m.forward_with(&mut tape, &g, &leaves).unwrap();
        assert_eq!(preds.pairs, vec![(0, 1)]);
        assert_eq!(preds.scores.len(), 2);
        assert_eq!(preds.scores[0].shape(), &[1, 1]);
    }

    #[test]
    fn missing_nodes_leave_their_slots_out() {
        // second frame has one node: its repr must only read slot 0
        let frames = vec![
            FrameNodes {
                nodes: vec![node(0, vec![0.3, -0.1]), node(1, vec![0.8, 0.2])],
            },
            FrameNodes {
                nodes: vec![node(2, vec![0.25, -0.05])],
            },
        ];
        let (g, _) = build_graph(frames, 100.0).unwrap();
        let m = RnnModel::init(hyper(), vec![spec("r")], 23).unwrap();
        let mut tape = Tape::new();
        let leaves = m.params.leaves_on(&mut tape);
        let states = m.node_states(&mut tape, &g, &leaves).unwrap();
        assert_eq!(states.shape(), &[1, 3]);
        let preds = m.forward_with(&mut tape, &g, &leaves).unwrap();
        assert!(preds.pairs.is_empty());
    }

    #[test]
    fn gradients_flow_to_all_core_params() {
        let g = two_frame_graph();
        let m = RnnModel::init(hyper(), vec![spec("r")], 3).unwrap();
        let mut tape = Tape::new();
        let leaves = m.params.leaves_on(&mut tape);
        let preds = m.forward_with(&mut tape, &g, &leaves).unwrap();
        let loss = tape.mean_axis(&preds.scores[0], 0).unwrap();
        let loss = tape.mean_axis(&loss, 0).unwrap();
        let grads = tape.backward(&loss).unwrap();
        for (i, leaf) in leaves.iter().enumerate() {
            let g = grads.of(leaf).unwrap();
            let nonzero = g.iter().any(|&v| v != 0.0);
            // b2 of the edge head has gradient 1; all core params feed the
            // score through the recurrence
            if i < 3 {
                assert!(nonzero, "no gradient reached param {}", m.params.name(i));
            }
        }
    }
}
