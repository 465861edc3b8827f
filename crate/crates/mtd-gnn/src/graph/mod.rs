//! Dynamic graphs over detection frames: per-frame node sets, implicit
//! fully-connected spatial edges, optimal appearance-based temporal links,
//! pair-label targets for the final input frame, and JSON serialization.

mod hungarian;
mod serial;

pub use hungarian::{hungarian_match, Matching};
pub use serial::{load_sequence, save_sequence};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One detection: a globally unique id, the underlying object's track id
/// when known (generator metadata, absent for false positives), and the
/// feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeData {
    pub node_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
    pub features: Vec<f64>,
}

/// The detections of one frame, in index order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameNodes {
    pub nodes: Vec<NodeData>,
}

impl FrameNodes {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// How a relation's labels are classified and scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelKind {
    #[serde(rename = "binary")]
    Binary,
    #[serde(rename = "multi-label")]
    MultiLabel,
    #[serde(rename = "categorical")]
    Categorical,
}

/// A pair label: a class index for binary/categorical relations, a 0/1
/// vector for multi-label ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelValue {
    Scalar(u32),
    Vector(Vec<u8>),
}

/// Label for the unordered node pair `(i, j)`, `i < j`, indices within the
/// final input frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLabel {
    pub i: usize,
    pub j: usize,
    pub y: LabelValue,
}

/// Ground-truth labels for one relation over the final input frame's node
/// pairs. `mask` runs over the canonical pair order (see [`pair_index`]);
/// `labels` holds exactly the pairs whose mask entry is true.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeTargets {
    pub relation: String,
    pub class_count: usize,
    pub kind: LabelKind,
    pub labels: Vec<PairLabel>,
    pub mask: Vec<bool>,
}

/// A sequence of detection frames with temporal links and prediction
/// targets. Spatial edges are implicit: every frame is fully connected.
/// `temporal_edges[k] = [frame, i, j]` links node `i` of `frame` to node
/// `j` of `frame + 1` (within-frame indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicGraph {
    pub feature_dim: usize,
    pub frames: Vec<FrameNodes>,
    pub temporal_edges: Vec<[usize; 3]>,
    pub targets: Vec<EdgeTargets>,
}

/// Per-node neighbor lists over global node indices, split by edge kind.
/// Global index = frame offset + within-frame index.
#[derive(Debug, Clone)]
pub struct Adjacency {
    spatial: Vec<Vec<usize>>,
    temporal: Vec<Vec<usize>>,
    frame_offsets: Vec<usize>,
    n_nodes: usize,
}

impl Adjacency {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn spatial_neighbors(&self, node: usize) -> &[usize] {
        &self.spatial[node]
    }

    pub fn temporal_neighbors(&self, node: usize) -> &[usize] {
        &self.temporal[node]
    }

    /// Global index of node `i` in `frame`.
    pub fn global_index(&self, frame: usize, i: usize) -> usize {
        self.frame_offsets[frame] + i
    }

    pub fn frame_offset(&self, frame: usize) -> usize {
        self.frame_offsets[frame]
    }
}

/// Canonical index of the unordered pair `(i, j)`, `i < j`, among all
/// pairs of `n` nodes, ordered lexicographically.
pub fn pair_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// All unordered pairs of `n` nodes in canonical order.
pub fn enumerate_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

/// Number of unordered pairs of `n` nodes.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Default temporal-link rejection cost for feature dimension `d` and
/// feature noise `sigma_feat`. The expected squared distance between two
/// noisy views of the same object is about `2 d sigma^2`; the default sits
/// at twice that, plus a flat allowance for one frame of state drift. The
/// drift term is sized for the worst single-frame jump an object makes in
/// feature space (a wall bounce flips a velocity component), measured well
/// below the separation between distinct objects, so true links survive
/// bounces while unrelated detections are left unmatched.
pub fn default_max_cost(d: usize, sigma_feat: f64) -> f64 {
    4.0 * d as f64 * sigma_feat * sigma_feat + 0.9
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Matches detections of two consecutive frames by feature distance.
/// Cost is squared Euclidean distance; rows or columns are left unmatched
/// at `max_cost` each. Returns matched `(prev_index, next_index)` pairs.
pub fn link_temporal(
    prev: &FrameNodes,
    next: &FrameNodes,
    max_cost: f64,
) -> Result<Vec<(usize, usize)>> {
    let d_prev = prev.nodes.first().map(|n| n.features.len());
    let d_next = next.nodes.first().map(|n| n.features.len());
    if let (Some(a), Some(b)) = (d_prev, d_next) {
        if a != b {
            return Err(Error::FeatureDimMismatch {
                expected: a,
                got: b,
            });
        }
    }
    let (n, m) = (prev.len(), next.len());
    let mut cost = Vec::with_capacity(n * m);
    for a in &prev.nodes {
        for b in &next.nodes {
            cost.push(squared_distance(&a.features, &b.features));
        }
    }
    Ok(hungarian_match(&cost, n, m, max_cost)?.pairs)
}

/// Builds a dynamic graph from per-frame detections: spatial edges are all
/// within-frame pairs (implicit), temporal edges come from
/// [`link_temporal`] over consecutive frames. Targets start empty.
pub fn build_graph(frames: Vec<FrameNodes>, max_cost: f64) -> Result<(DynamicGraph, Adjacency)> {
    if frames.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let feature_dim = frames
        .iter()
        .flat_map(|f| f.nodes.first())
        .map(|n| n.features.len())
        .next()
        .unwrap_or(0);
    for f in &frames {
        for node in &f.nodes {
            if node.features.len() != feature_dim {
                return Err(Error::FeatureDimMismatch {
                    expected: feature_dim,
                    got: node.features.len(),
                });
            }
        }
    }
    let mut temporal_edges = Vec::new();
    for f in 0..frames.len().saturating_sub(1) {
        for (i, j) in link_temporal(&frames[f], &frames[f + 1], max_cost)? {
            temporal_edges.push([f, i, j]);
        }
    }
    let graph = DynamicGraph {
        feature_dim,
        frames,
        temporal_edges,
        targets: Vec::new(),
    };
    let adj = graph.adjacency();
    Ok((graph, adj))
}

impl DynamicGraph {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.frames.iter().map(FrameNodes::len).sum()
    }

    pub fn last_frame(&self) -> &FrameNodes {
        self.frames.last().expect("graphs have at least one frame")
    }

    /// Assembles the split neighbor lists. Spatial: all within-frame pairs.
    /// Temporal: the stored matched pairs, symmetric.
    pub fn adjacency(&self) -> Adjacency {
        let mut frame_offsets = Vec::with_capacity(self.frames.len());
        let mut total = 0;
        for f in &self.frames {
            frame_offsets.push(total);
            total += f.len();
        }
        let mut spatial = vec![Vec::new(); total];
        let mut temporal = vec![Vec::new(); total];
        for (f, frame) in self.frames.iter().enumerate() {
            let off = frame_offsets[f];
            for (i, j) in enumerate_pairs(frame.len()) {
                spatial[off + i].push(off + j);
                spatial[off + j].push(off + i);
            }
        }
        for &[f, i, j] in &self.temporal_edges {
            let a = frame_offsets[f] + i;
            let b = frame_offsets[f + 1] + j;
            temporal[a].push(b);
            temporal[b].push(a);
        }
        for list in spatial.iter_mut().chain(temporal.iter_mut()) {
            list.sort_unstable();
        }
        Adjacency {
            spatial,
            temporal,
            frame_offsets,
            n_nodes: total,
        }
    }

    /// Structural validation: run after deserialization or construction
    /// from untrusted inputs.
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let mut ids = std::collections::BTreeSet::new();
        for frame in &self.frames {
            for node in &frame.nodes {
                if node.features.len() != self.feature_dim {
                    return Err(Error::FeatureDimMismatch {
                        expected: self.feature_dim,
                        got: node.features.len(),
                    });
                }
                if !ids.insert(node.node_id) {
                    return Err(Error::Config(format!(
                        "duplicate node_id {}",
                        node.node_id
                    )));
                }
            }
        }
        let mut seen_prev = std::collections::BTreeSet::new();
        let mut seen_next = std::collections::BTreeSet::new();
        for &[f, i, j] in &self.temporal_edges {
            if f + 1 >= self.frames.len() {
                return Err(Error::Config(format!(
                    "temporal edge [{f}, {i}, {j}] references frame {} of {}",
                    f + 1,
                    self.frames.len()
                )));
            }
            if i >= self.frames[f].len() || j >= self.frames[f + 1].len() {
                return Err(Error::Config(format!(
                    "temporal edge [{f}, {i}, {j}] node index out of range"
                )));
            }
            if !seen_prev.insert((f, i)) || !seen_next.insert((f, j)) {
                return Err(Error::Config(format!(
                    "temporal edge [{f}, {i}, {j}] violates one-to-one matching"
                )));
            }
        }
        let n_last = self.last_frame().len();
        for t in &self.targets {
            validate_targets(t, n_last)?;
        }
        Ok(())
    }
}

fn validate_targets(t: &EdgeTargets, n_last: usize) -> Result<()> {
    let bad = |reason: String| Error::InvalidRelation {
        name: t.relation.clone(),
        reason,
    };
    match t.kind {
        LabelKind::Binary if t.class_count != 1 => {
            return Err(bad(format!(
                "binary relations have class_count 1, got {}",
                t.class_count
            )));
        }
        LabelKind::Categorical if t.class_count < 2 => {
            return Err(bad(format!(
                "categorical relations need class_count >= 2, got {}",
                t.class_count
            )));
        }
        LabelKind::MultiLabel if t.class_count == 0 => {
            return Err(bad("multi-label relations need class_count >= 1".into()));
        }
        _ => {}
    }
    if t.mask.len() != pair_count(n_last) {
        return Err(bad(format!(
            "mask has {} entries for {} final-frame nodes ({} pairs)",
            t.mask.len(),
            n_last,
            pair_count(n_last)
        )));
    }
    let mut labeled = vec![false; t.mask.len()];
    for l in &t.labels {
        if l.i >= l.j || l.j >= n_last {
            return Err(bad(format!("label pair ({}, {}) is not canonical", l.i, l.j)));
        }
        let p = pair_index(l.i, l.j, n_last);
        if labeled[p] {
            return Err(bad(format!("duplicate label for pair ({}, {})", l.i, l.j)));
        }
        labeled[p] = true;
        if !t.mask[p] {
            return Err(bad(format!(
                "pair ({}, {}) is labeled but masked out",
                l.i, l.j
            )));
        }
        match (&l.y, t.kind) {
            (LabelValue::Scalar(v), LabelKind::Binary) if *v <= 1 => {}
            (LabelValue::Scalar(v), LabelKind::Categorical) if (*v as usize) < t.class_count => {}
            (LabelValue::Vector(v), LabelKind::MultiLabel)
                if v.len() == t.class_count && v.iter().all(|&b| b <= 1) => {}
            _ => {
                return Err(bad(format!(
                    "label value {:?} invalid for pair ({}, {})",
                    l.y, l.i, l.j
                )));
            }
        }
    }
    for (p, (&m, &l)) in t.mask.iter().zip(&labeled).enumerate() {
        if m && !l {
            return Err(bad(format!("pair index {p} is unmasked but unlabeled")));
        }
    }
    Ok(())
}

/// Matches final-frame detections to ground-truth tracks by appearance and
/// derives the evaluation mask over canonical node pairs: a pair is
/// evaluated only when both endpoints matched distinct tracks whose label
/// is defined (`gt_label_defined` is symmetric over track indices).
/// Unmatched detections (false positives) and unmatched tracks (misses)
/// contribute no evaluated pairs.
pub fn align_eval_mask(
    proposed: &FrameNodes,
    gt_features: &[Vec<f64>],
    gt_label_defined: &[Vec<bool>],
    max_cost: f64,
) -> Result<Vec<bool>> {
    let n = proposed.len();
    let node_track = align_tracks(proposed, gt_features, max_cost)?;
    let mut mask = Vec::with_capacity(pair_count(n));
    for (i, j) in enumerate_pairs(n) {
        let ok = match (node_track[i], node_track[j]) {
            (Some(a), Some(b)) => gt_label_defined[a][b],
            _ => false,
        };
        mask.push(ok);
    }
    Ok(mask)
}

/// Optimal detection-to-track assignment by feature distance: entry `i`
/// holds the ground-truth track index node `i` matched, or `None` when the
/// node stayed unmatched (distance above `max_cost`, or more nodes than
/// tracks).
pub fn align_tracks(
    proposed: &FrameNodes,
    gt_features: &[Vec<f64>],
    max_cost: f64,
) -> Result<Vec<Option<usize>>> {
    let n = proposed.len();
    let mut node_track: Vec<Option<usize>> = vec![None; n];
    let mut cost = Vec::with_capacity(n * gt_features.len());
    for node in &proposed.nodes {
        for gt in gt_features {
            cost.push(squared_distance(&node.features, gt));
        }
    }
    for (i, t) in hungarian_match(&cost, n, gt_features.len(), max_cost)?.pairs {
        node_track[i] = Some(t);
    }
    Ok(node_track)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: u64, features: Vec<f64>) -> NodeData {
        NodeData {
            node_id: id,
            track_id: None,
            features,
        }
    }

    fn frame(nodes: Vec<NodeData>) -> FrameNodes {
        FrameNodes { nodes }
    }

    #[test]
    fn pair_index_is_lexicographic() {
        let n = 5;
        for (expect, (i, j)) in enumerate_pairs(n).enumerate() {
            assert_eq!(pair_index(i, j, n), expect);
        }
        assert_eq!(pair_count(5), 10);
    }

    #[test]
    fn identical_features_link_as_identity() {
        let a = frame(vec![node(0, vec![0.0, 0.0]), node(1, vec![1.0, 1.0])]);
        let b = frame(vec![node(2, vec![0.0, 0.0]), node(3, vec![1.0, 1.0])]);
        let links = link_temporal(&a, &b, 0.1).unwrap();
        assert_eq!(links, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn distant_extra_node_left_unmatched() {
        let a = frame(vec![node(0, vec![0.0, 0.0])]);
        let b = frame(vec![node(1, vec![0.01, 0.0]), node(2, vec![50.0, 50.0])]);
        let links = link_temporal(&a, &b, 0.5).unwrap();
        assert_eq!(links, vec![(0, 0)]);
    }

    #[test]
    fn permuted_features_recover_permutation() {
        let feats: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let perm = [3usize, 0, 4, 1, 2];
        let a = frame((0..5).map(|i| node(i as u64, feats[i].clone())).collect());
        let b = frame(
            (0..5)
                .map(|p| node(10 + p as u64, feats[perm[p]].clone()))
                .collect(),
        );
        let links = link_temporal(&a, &b, 0.1).unwrap();
        for (i, j) in links {
            assert_eq!(perm[j], i);
        }
    }

    #[test]
    fn build_graph_counts_edges() {
        let f0 = frame(vec![
            node(0, vec![0.0]),
            node(1, vec![1.0]),
            node(2, vec![2.0]),
        ]);
        let (g, adj) = build_graph(vec![f0], 1.0).unwrap();
        assert_eq!(g.temporal_edges.len(), 0);
        let spatial_total: usize = (0..3).map(|i| adj.spatial_neighbors(i).len()).sum();
        assert_eq!(spatial_total, 6); // 3 undirected edges

        let f0 = frame(vec![node(0, vec![0.0]), node(1, vec![1.0])]);
        let f1 = frame(vec![node(2, vec![0.0]), node(3, vec![1.0])]);
        let (g, adj) = build_graph(vec![f0, f1], 0.5).unwrap();
        assert_eq!(g.temporal_edges.len(), 2);
        assert_eq!(adj.temporal_neighbors(0), &[2]);
        assert_eq!(adj.temporal_neighbors(3), &[1]);
    }

    #[test]
    fn zero_frames_is_an_error() {
        assert!(matches!(
            build_graph(Vec::new(), 1.0),
            Err(Error::EmptyGraph)
        ));
    }

    #[test]
    fn empty_frames_are_allowed() {
        let f0 = frame(vec![node(0, vec![0.5])]);
        let f1 = frame(vec![]);
        let f2 = frame(vec![node(1, vec![0.5])]);
        let (g, adj) = build_graph(vec![f0, f1, f2], 1.0).unwrap();
        assert_eq!(g.temporal_edges.len(), 0);
        assert!(adj.spatial_neighbors(0).is_empty());
        assert!(adj.temporal_neighbors(0).is_empty());
    }

    #[test]
    fn adjacency_is_symmetric_and_disjoint() {
        let frames = vec![
            frame(vec![node(0, vec![0.0]), node(1, vec![5.0]), node(2, vec![9.0])]),
            frame(vec![node(3, vec![5.1]), node(4, vec![0.2])]),
        ];
        let (_, adj) = build_graph(frames, 1.0).unwrap();
        for v in 0..adj.n_nodes() {
            for &w in adj.spatial_neighbors(v) {
                assert!(adj.spatial_neighbors(w).contains(&v));
                assert!(!adj.temporal_neighbors(v).contains(&w));
                assert_ne!(v, w);
            }
            for &w in adj.temporal_neighbors(v) {
                assert!(adj.temporal_neighbors(w).contains(&v));
            }
        }
    }

    #[test]
    fn within_frame_permutation_relabels_edges() {
        let feats: Vec<Vec<f64>> = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]];
        let next = frame(vec![node(10, feats[1].clone()), node(11, feats[2].clone())]);
        let base = frame((0..3).map(|i| node(i as u64, feats[i].clone())).collect());
        let (g1, _) = build_graph(vec![base, next.clone()], 0.1).unwrap();

        let perm = [2usize, 0, 1]; // permuted first frame
        let permuted = frame(perm.iter().map(|&p| node(p as u64, feats[p].clone())).collect());
        let (g2, _) = build_graph(vec![permuted, next], 0.1).unwrap();

        let mapped: Vec<[usize; 3]> = g1
            .temporal_edges
            .iter()
            .map(|&[f, i, j]| [f, perm.iter().position(|&p| p == i).unwrap(), j])
            .collect();
        let mut a = mapped;
        let mut b = g2.temporal_edges.clone();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn eval_mask_full_alignment() {
        let f = frame(vec![node(0, vec![0.0, 0.0]), node(1, vec![1.0, 0.0])]);
        let gt = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let defined = vec![vec![false, true], vec![true, false]];
        let mask = align_eval_mask(&f, &gt, &defined, 0.2).unwrap();
        assert_eq!(mask, vec![true]);
    }

    #[test]
    fn eval_mask_false_positive_masks_its_pairs() {
        let f = frame(vec![
            node(0, vec![0.0, 0.0]),
            node(1, vec![1.0, 0.0]),
            node(2, vec![40.0, 40.0]), // matches no track
        ]);
        let gt = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let defined = vec![vec![false, true], vec![true, false]];
        let mask = align_eval_mask(&f, &gt, &defined, 0.2).unwrap();
        // pairs in canonical order: (0,1), (0,2), (1,2)
        assert_eq!(mask, vec![true, false, false]);
    }

    #[test]
    fn eval_mask_miss_masks_track_pairs() {
        // two tracks, only one detected
        let f = frame(vec![node(0, vec![0.0, 0.0])]);
        let gt = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let defined = vec![vec![false, true], vec![true, false]];
        let mask = align_eval_mask(&f, &gt, &defined, 0.2).unwrap();
        assert!(mask.is_empty()); // single node has no pairs
    }

    #[test]
    fn validate_catches_mask_label_disagreement() {
        let g = DynamicGraph {
            feature_dim: 1,
            frames: vec![frame(vec![node(0, vec![0.0]), node(1, vec![1.0])])],
            temporal_edges: vec![],
            targets: vec![EdgeTargets {
                relation: "r".into(),
                class_count: 1,
                kind: LabelKind::Binary,
                labels: vec![],
                mask: vec![true], // unmasked but no label
            }],
        };
        assert!(matches!(
            g.validate(),
            Err(Error::InvalidRelation { .. })
        ));
    }

    #[test]
    fn validate_catches_double_temporal_use() {
        let g = DynamicGraph {
            feature_dim: 1,
            frames: vec![
                frame(vec![node(0, vec![0.0])]),
                frame(vec![node(1, vec![0.0]), node(2, vec![0.1])]),
            ],
            temporal_edges: vec![[0, 0, 0], [0, 0, 1]],
            targets: vec![],
        };
        assert!(g.validate().is_err());
    }
}
