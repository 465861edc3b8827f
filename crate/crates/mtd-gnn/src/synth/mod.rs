//! Synthetic benchmark generator: simulated 2D scenes rendered into noisy
//! detection features, labeled with future collision and relative-motion
//! relations, and written out as a seeded, split dataset.
//!
//! Everything downstream of (config, seed) is bit-deterministic, including
//! across worker counts: each sequence derives its own generator substream
//! and is a pure function of it.

mod scene;

pub use scene::{simulate, Scene, SceneSpec, Track, APPEARANCE_DIM, STATE_DIM};

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{
    align_tracks, build_graph, default_max_cost, enumerate_pairs, DynamicGraph, EdgeTargets,
    FrameNodes, LabelKind, LabelValue, NodeData, PairLabel,
};
use crate::loss::{LossMode, RelationSpec};
use crate::rng::{mix, Rng};

pub const COLLISION: &str = "collision";
pub const REL_MOTION: &str = "rel_motion";

// stream tags keep the per-purpose substreams independent of one another
const PROJ_TAG: u64 = 0x70726f6a_65637431;
const SPLIT_TAG: u64 = 0x73706c69_74733131;
const SCENE_TAG: u64 = 0x7363656e_65733031;
const RENDER_TAG: u64 = 0x72656e64_65723031;

/// Generation settings. Everything except `n_sequences` has a default, so
/// a config file only has to say how many sequences it wants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_sequences: usize,
    #[serde(default = "defaults::objects_min")]
    pub objects_min: usize,
    #[serde(default = "defaults::objects_max")]
    pub objects_max: usize,
    #[serde(default = "defaults::feature_dim")]
    pub feature_dim: usize,
    /// Gaussian noise added per feature dimension.
    #[serde(default = "defaults::feature_noise")]
    pub feature_noise: f64,
    /// Chance a present object goes undetected in a frame.
    #[serde(default = "defaults::miss_prob")]
    pub miss_prob: f64,
    /// Chance a frame gains one spurious detection.
    #[serde(default = "defaults::fp_rate")]
    pub fp_rate: f64,
    #[serde(default = "defaults::input_frames_min")]
    pub input_frames_min: usize,
    #[serde(default = "defaults::input_frames_max")]
    pub input_frames_max: usize,
    /// Hidden frames between the last observation and the label horizon.
    #[serde(default = "defaults::gap_min")]
    pub gap_min: usize,
    #[serde(default = "defaults::gap_max")]
    pub gap_max: usize,
    /// Relative speed above which a pair counts as "in relative motion".
    #[serde(default = "defaults::motion_threshold")]
    pub motion_threshold: f64,
}

mod defaults {
    pub fn objects_min() -> usize {
        2
    }
    pub fn objects_max() -> usize {
        6
    }
    pub fn feature_dim() -> usize {
        24
    }
    pub fn feature_noise() -> f64 {
        0.005
    }
    pub fn miss_prob() -> f64 {
        0.03
    }
    pub fn fp_rate() -> f64 {
        0.03
    }
    pub fn input_frames_min() -> usize {
        8
    }
    pub fn input_frames_max() -> usize {
        12
    }
    pub fn gap_min() -> usize {
        5
    }
    pub fn gap_max() -> usize {
        20
    }
    pub fn motion_threshold() -> f64 {
        0.05
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_sequences: 500,
            objects_min: defaults::objects_min(),
            objects_max: defaults::objects_max(),
            feature_dim: defaults::feature_dim(),
            feature_noise: defaults::feature_noise(),
            miss_prob: defaults::miss_prob(),
            fp_rate: defaults::fp_rate(),
            input_frames_min: defaults::input_frames_min(),
            input_frames_max: defaults::input_frames_max(),
            gap_min: defaults::gap_min(),
            gap_max: defaults::gap_max(),
            motion_threshold: defaults::motion_threshold(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_sequences == 0 {
            return bad("n_sequences must be at least 1".into());
        }
        if self.objects_min == 0 || self.objects_min > self.objects_max {
            return bad(format!(
                "objects range [{}, {}] is invalid",
                self.objects_min, self.objects_max
            ));
        }
        if self.feature_dim < 4 {
            return bad(format!("feature_dim must be at least 4, got {}", self.feature_dim));
        }
        for (name, p) in [
            ("feature_noise", self.feature_noise),
            ("miss_prob", self.miss_prob),
            ("fp_rate", self.fp_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.input_frames_min < 2 || self.input_frames_min > self.input_frames_max {
            return bad(format!(
                "input frame range [{}, {}] is invalid (min 2)",
                self.input_frames_min, self.input_frames_max
            ));
        }
        if self.gap_min < 1 || self.gap_min > self.gap_max {
            return bad(format!(
                "gap range [{}, {}] is invalid (min 1)",
                self.gap_min, self.gap_max
            ));
        }
        if !(self.motion_threshold.is_finite() && self.motion_threshold >= 0.0) {
            return bad(format!(
                "motion_threshold must be finite and non-negative, got {}",
                self.motion_threshold
            ));
        }
        Ok(())
    }

    fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            objects_min: self.objects_min,
            objects_max: self.objects_max,
            input_frames_min: self.input_frames_min,
            input_frames_max: self.input_frames_max,
            gap_min: self.gap_min,
            gap_max: self.gap_max,
        }
    }

    /// The two relations every generated dataset carries, with the loss
    /// modes training uses unless overridden.
    pub fn relations(&self) -> Vec<RelationSpec> {
        vec![
            RelationSpec {
                name: COLLISION.into(),
                class_count: 1,
                kind: LabelKind::Binary,
                loss_mode: LossMode::PrioritizedBce,
                weight: 1.0,
            },
            RelationSpec {
                name: REL_MOTION.into(),
                class_count: 1,
                kind: LabelKind::Binary,
                loss_mode: LossMode::Bce,
                weight: 1.0,
            },
        ]
    }
}

/// Fixed random map from object state to feature space, shared by every
/// sequence of a dataset.
#[derive(Debug, Clone)]
pub struct Projection {
    matrix: Vec<f64>, // [feature_dim, STATE_DIM] row-major
    feature_dim: usize,
}

impl Projection {
    pub fn sample(feature_dim: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let scale = 1.0 / (STATE_DIM as f64).sqrt();
        let matrix = (0..feature_dim * STATE_DIM)
            .map(|_| rng.gauss() * scale)
            .collect();
        Projection {
            matrix,
            feature_dim,
        }
    }

    pub fn apply(&self, state: &[f64; STATE_DIM]) -> Vec<f64> {
        (0..self.feature_dim)
            .map(|r| {
                state
                    .iter()
                    .enumerate()
                    .map(|(c, s)| self.matrix[r * STATE_DIM + c] * s)
                    .sum()
            })
            .collect()
    }
}

/// Renders one observed frame to detections: projected noisy features per
/// present track (minus misses), plus at most one false positive. The
/// `track_id` metadata records provenance and is never model input.
pub fn render_frame(
    scene: &Scene,
    frame: usize,
    proj: &Projection,
    config: &GeneratorConfig,
    rng: &mut Rng,
    next_node_id: &mut u64,
) -> FrameNodes {
    let mut nodes = Vec::new();
    for (t, track) in scene.tracks.iter().enumerate() {
        if !track.present_at(frame) {
            continue;
        }
        let missed = rng.bernoulli(config.miss_prob);
        let mut features = proj.apply(&track.state_at(frame));
        for f in features.iter_mut() {
            *f += config.feature_noise * rng.gauss();
        }
        if missed {
            continue;
        }
        let id = *next_node_id;
        *next_node_id += 1;
        nodes.push(NodeData {
            node_id: id,
            track_id: Some(t as u64),
            features,
        });
    }
    if rng.bernoulli(config.fp_rate) {
        let mut appearance = [0.0; APPEARANCE_DIM];
        let mut norm = 0.0;
        for a in appearance.iter_mut() {
            *a = rng.gauss();
            norm += *a * *a;
        }
        let norm = norm.sqrt().max(1e-6);
        for a in appearance.iter_mut() {
            *a /= norm;
        }
        let pos = (rng.range_f64(0.1, 0.9), rng.range_f64(0.1, 0.9));
        let speed = rng.range_f64(scene::SPEED_MIN, scene::SPEED_MAX);
        let angle = rng.range_f64(0.0, 2.0 * std::f64::consts::PI);
        let vel = (speed * angle.cos(), speed * angle.sin());
        let radius = rng.range_f64(scene::RADIUS_MIN, scene::RADIUS_MAX);
        let state = scene::model_state(&appearance, pos, vel, radius);
        let mut features = proj.apply(&state);
        for f in features.iter_mut() {
            *f += config.feature_noise * rng.gauss();
        }
        let id = *next_node_id;
        *next_node_id += 1;
        nodes.push(NodeData {
            node_id: id,
            track_id: None,
            features,
        });
    }
    FrameNodes { nodes }
}

/// Assignment gate for matching final-frame detections to ground-truth
/// tracks: covers the noise-only distance between a detection and its own
/// track's clean features with a wide margin, while staying far below the
/// distance between distinct objects (unit-norm appearance alone separates
/// those). Label masks stay exact even when temporal linking is lenient.
pub fn alignment_max_cost(d: usize, sigma_feat: f64) -> f64 {
    4.0 * d as f64 * sigma_feat * sigma_feat + 0.02
}

/// Builds one fully labeled sequence from its substream seeds.
pub fn build_sequence(config: &GeneratorConfig, dataset_seed: u64, index: usize) -> Result<DynamicGraph> {
    let seq = mix(dataset_seed ^ mix(index as u64 + 1));
    let scene = simulate(&config.scene_spec(), mix(seq ^ SCENE_TAG));
    let proj = Projection::sample(config.feature_dim, mix(dataset_seed ^ PROJ_TAG));
    let mut render_rng = Rng::new(mix(seq ^ RENDER_TAG));
    let mut next_node_id = 0;
    let frames: Vec<FrameNodes> = (0..scene.input_frames)
        .map(|f| {
            render_frame(
                &scene,
                f,
                &proj,
                config,
                &mut render_rng,
                &mut next_node_id,
            )
        })
        .collect();
    // temporal linking must tolerate one frame of state drift (including
    // wall-bounce velocity flips); label alignment compares same-frame
    // features where only the injected noise separates a detection from
    // its track, so it gets a much tighter gate
    let link_cost = default_max_cost(config.feature_dim, config.feature_noise);
    let align_cost = alignment_max_cost(config.feature_dim, config.feature_noise);
    let targets = label_sequence(
        &scene,
        &frames[scene.input_frames - 1],
        &proj,
        config,
        align_cost,
    )?;
    let (mut graph, _) = build_graph(frames, link_cost)?;
    graph.targets = targets;
    graph.validate()?;
    Ok(graph)
}

/// Ground-truth targets for the final observed frame: detections are
/// aligned to the tracks present there, and each aligned pair whose tracks
/// both survive to the horizon gets collision and relative-motion labels;
/// every other pair is masked out.
fn label_sequence(
    scene: &Scene,
    final_frame: &FrameNodes,
    proj: &Projection,
    config: &GeneratorConfig,
    max_cost: f64,
) -> Result<Vec<EdgeTargets>> {
    let last = scene.input_frames - 1;
    let labeled = scene.labeled_tracks();
    let gt_features: Vec<Vec<f64>> = labeled
        .iter()
        .map(|&t| proj.apply(&scene.tracks[t].state_at(last)))
        .collect();
    let assigned = align_tracks(final_frame, &gt_features, max_cost)?;

    let n = final_frame.len();
    let mut collision = EdgeTargets {
        relation: COLLISION.into(),
        class_count: 1,
        kind: LabelKind::Binary,
        labels: Vec::new(),
        mask: Vec::new(),
    };
    let mut motion = EdgeTargets {
        relation: REL_MOTION.into(),
        class_count: 1,
        kind: LabelKind::Binary,
        labels: Vec::new(),
        mask: Vec::new(),
    };
    for (i, j) in enumerate_pairs(n) {
        let pair = match (assigned[i], assigned[j]) {
            (Some(a), Some(b)) => {
                let (ta, tb) = (labeled[a], labeled[b]);
                let defined = scene.tracks[ta].exit == scene.horizon
                    && scene.tracks[tb].exit == scene.horizon;
                defined.then_some((ta, tb))
            }
            _ => None,
        };
        match pair {
            Some((ta, tb)) => {
                collision.mask.push(true);
                motion.mask.push(true);
                let hit = scene.collision_label(ta, tb, scene.horizon);
                collision.labels.push(PairLabel {
                    i,
                    j,
                    y: LabelValue::Scalar(hit as u32),
                });
                let moving = scene.motion_label(ta, tb, config.motion_threshold);
                motion.labels.push(PairLabel {
                    i,
                    j,
                    y: LabelValue::Scalar(moving as u32),
                });
            }
            None => {
                collision.mask.push(false);
                motion.mask.push(false);
            }
        }
    }
    Ok(vec![collision, motion])
}

/// Per-relation label tallies over evaluated pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub positives: usize,
    pub evaluated: usize,
    pub masked: usize,
}

impl LabelStats {
    pub fn positive_rate(&self) -> f64 {
        if self.evaluated == 0 {
            0.0
        } else {
            self.positives as f64 / self.evaluated as f64
        }
    }
}

/// Aggregate numbers recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_sequences: usize,
    pub collision: LabelStats,
    pub rel_motion: LabelStats,
    pub collision_positive_rate: f64,
    pub rel_motion_positive_rate: f64,
    pub mean_nodes_per_frame: f64,
}

/// Sequence index lists per split (indices into `seq_<idx>.json` files).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitLists {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitLists {
    pub fn of(&self, split: &str) -> Result<&[usize]> {
        match split {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!(
                "unknown split `{other}` (expected train, val, or test)"
            ))),
        }
    }
}

/// The dataset's self-description, written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator_version: String,
    pub seed: u64,
    pub config: GeneratorConfig,
    pub config_sha256: String,
    /// The PRNG family, spelled out so the determinism contract is auditable.
    pub prng: String,
    pub relations: Vec<RelationSpec>,
    pub splits: SplitLists,
    pub stats: DatasetStats,
}

const GENERATOR_VERSION: &str = "1";
const PRNG_SPEC: &str = "splitmix64-seeded xoshiro256++, 53-bit uniforms, polar Box-Muller";

/// Generates `config.n_sequences` labeled sequences under `out_dir` along
/// with `manifest.json`. Fully deterministic in (config, seed), independent
/// of the worker count.
pub fn generate_dataset(
    config: &GeneratorConfig,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let graphs: Vec<Result<(LabelStats, LabelStats, f64)>> = (0..config.n_sequences)
        .into_par_iter()
        .map(|idx| {
            let graph = build_sequence(config, seed, idx)?;
            let path = sequence_path(out_dir, idx);
            crate::graph::save_sequence(&path, &graph)?;
            let mut stats = (LabelStats::default(), LabelStats::default(), 0.0);
            for t in &graph.targets {
                let s = if t.relation == COLLISION {
                    &mut stats.0
                } else {
                    &mut stats.1
                };
                s.evaluated += t.labels.len();
                s.masked += t.mask.iter().filter(|&&m| !m).count();
                s.positives += t
                    .labels
                    .iter()
                    .filter(|l| matches!(l.y, LabelValue::Scalar(1)))
                    .count();
            }
            stats.2 = graph.n_nodes() as f64 / graph.n_frames() as f64;
            Ok(stats)
        })
        .collect();

    let mut collision = LabelStats::default();
    let mut rel_motion = LabelStats::default();
    let mut nodes_per_frame = 0.0;
    for s in graphs {
        let (c, m, npf) = s?;
        collision.positives += c.positives;
        collision.evaluated += c.evaluated;
        collision.masked += c.masked;
        rel_motion.positives += m.positives;
        rel_motion.evaluated += m.evaluated;
        rel_motion.masked += m.masked;
        nodes_per_frame += npf;
    }

    let mut order: Vec<usize> = (0..config.n_sequences).collect();
    let mut split_rng = Rng::new(mix(seed ^ SPLIT_TAG));
    split_rng.shuffle(&mut order);
    let n_train = config.n_sequences * 70 / 100;
    let n_val = config.n_sequences * 15 / 100;
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut val: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    let config_json = serde_json::to_vec(config).map_err(|e| Error::json(out_dir, e))?;
    let manifest = DatasetManifest {
        generator_version: GENERATOR_VERSION.into(),
        seed,
        config: config.clone(),
        config_sha256: hex(&Sha256::digest(&config_json)),
        prng: PRNG_SPEC.into(),
        relations: config.relations(),
        splits: SplitLists { train, val, test },
        stats: DatasetStats {
            n_sequences: config.n_sequences,
            collision,
            rel_motion,
            collision_positive_rate: collision.positive_rate(),
            rel_motion_positive_rate: rel_motion.positive_rate(),
            mean_nodes_per_frame: nodes_per_frame / config.n_sequences as f64,
        },
    };
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn sequence_path(dir: impl AsRef<Path>, idx: usize) -> PathBuf {
    dir.as_ref().join(format!("seq_{idx}.json"))
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = dir.as_ref().join("manifest.json");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(&path, e))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
