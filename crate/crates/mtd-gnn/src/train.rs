//! Training, evaluation and ablation drivers shared by the CLI and tests.
//!
//! A [`RunConfig`] is resolved from three layers: a named [`profile`]
//! supplies hyperparameter defaults, an optional JSON config file overrides
//! individual fields, and explicit flags (seed, output directory) win last.
//! Every run writes its resolved config next to its outputs so results can
//! be reproduced from the artifact directory alone.
//!
//! Training is deterministic for a fixed seed regardless of worker count:
//! per-sequence forward/backward passes run in parallel, but their gradients
//! are summed in sample-index order on the coordinator thread before each
//! optimizer step.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{load_sequence, DynamicGraph};
use crate::loss::{total_loss, LossMode, RelationSpec};
use crate::metrics::{MetricAccumulator, MetricReport};
use crate::model::{
    load_checkpoint, save_checkpoint, GnnHyper, GnnModel, Model, ModelKind, RnnHyper, RnnModel,
};
use crate::rng::{mix, Rng};
use crate::synth::{load_manifest, sequence_path, DatasetManifest};
use crate::tensor::{rate_for_epoch, AdamState, Tape};

/// Stream tag for the per-epoch shuffle of training sequence order.
const SHUFFLE_TAG: u64 = 0x7368_7566_666c_6531;

/// Hyperparameter defaults bundled under a name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile {
    pub hidden_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub eta0: f64,
    pub epochs: usize,
}

/// Looks up a named profile. `clevrer` mirrors the reference configuration
/// (D'=256, K=5, L=1, eta0=0.001, 100 epochs), `benchmark` shortens it to
/// 10 epochs for the seeded synthetic benchmark, and `ci` shrinks the model
/// for fast smoke runs.
pub fn profile(name: &str) -> Result<Profile> {
    match name {
        "clevrer" => Ok(Profile {
            hidden_dim: 256,
            heads: 5,
            layers: 1,
            eta0: 1e-3,
            epochs: 100,
        }),
        "benchmark" => Ok(Profile {
            hidden_dim: 256,
            heads: 5,
            layers: 1,
            eta0: 1e-3,
            epochs: 10,
        }),
        "ci" => Ok(Profile {
            hidden_dim: 64,
            heads: 3,
            layers: 1,
            eta0: 1e-3,
            epochs: 5,
        }),
        other => Err(Error::Config(format!(
            "unknown profile `{other}` (expected clevrer, benchmark, or ci)"
        ))),
    }
}

/// Learning method: one shared representation trained on all relations, or
/// on a single named relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    MultiTask,
    SingleTask(String),
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        if s == "multi-task" {
            return Ok(Method::MultiTask);
        }
        if let Some(rel) = s.strip_prefix("single-task:") {
            if rel.is_empty() {
                return Err("single-task method needs a relation name after the colon".into());
            }
            return Ok(Method::SingleTask(rel.to_string()));
        }
        Err(format!(
            "unknown method `{s}` (expected multi-task or single-task:<relation>)"
        ))
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        match m {
            Method::MultiTask => "multi-task".into(),
            Method::SingleTask(rel) => format!("single-task:{rel}"),
        }
    }
}

/// A fully resolved run: every knob pinned, ready to execute and to archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub model: ModelKind,
    pub method: Method,
    /// Restrict training to these dataset relations (default: all).
    pub relations: Option<Vec<String>>,
    /// Per-relation loss mode overrides, keyed by relation name.
    pub loss_overrides: BTreeMap<String, LossMode>,
    pub hidden_dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Baseline only: per-slot width of the padded hidden state.
    pub slot_dim: usize,
    /// Baseline only: padded node capacity per frame.
    pub max_nodes: usize,
    pub eta0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// A partial run config as read from a JSON file: unset fields fall back to
/// the active profile and the built-in defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub model: Option<ModelKind>,
    pub method: Option<Method>,
    pub relations: Option<Vec<String>>,
    pub loss_overrides: Option<BTreeMap<String, LossMode>>,
    pub hidden_dim: Option<usize>,
    pub heads: Option<usize>,
    pub layers: Option<usize>,
    pub slot_dim: Option<usize>,
    pub max_nodes: Option<usize>,
    pub eta0: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
}

impl RunConfig {
    /// Layers profile defaults, file overrides, and flag overrides into a
    /// validated config. `dataset` and an output directory must come from
    /// the file or the flags.
    pub fn resolve(
        file: Option<RunConfigFile>,
        profile_name: Option<&str>,
        seed: Option<u64>,
        out: Option<PathBuf>,
    ) -> Result<RunConfig> {
        let p = profile(profile_name.unwrap_or("clevrer"))?;
        let f = file.unwrap_or_default();
        let dataset = f
            .dataset
            .ok_or_else(|| Error::Config("config must set `dataset`".into()))?;
        let out_dir = out
            .or(f.out_dir)
            .ok_or_else(|| Error::Config("set `out_dir` in the config or pass --out".into()))?;
        let cfg = RunConfig {
            dataset,
            out_dir,
            model: f.model.unwrap_or(ModelKind::Gnn),
            method: f.method.unwrap_or(Method::MultiTask),
            relations: f.relations,
            loss_overrides: f.loss_overrides.unwrap_or_default(),
            hidden_dim: f.hidden_dim.unwrap_or(p.hidden_dim),
            heads: f.heads.unwrap_or(p.heads),
            layers: f.layers.unwrap_or(p.layers),
            slot_dim: f.slot_dim.unwrap_or(64),
            max_nodes: f.max_nodes.unwrap_or(16),
            eta0: f.eta0.unwrap_or(p.eta0),
            epochs: f.epochs.unwrap_or(p.epochs),
            batch_size: f.batch_size.unwrap_or(8),
            seed: seed.or(f.seed).unwrap_or(0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !self.eta0.is_finite() || self.eta0 <= 0.0 {
            return Err(Error::Config(format!(
                "eta0 must be positive and finite, got {}",
                self.eta0
            )));
        }
        Ok(())
    }
}

/// Reads a JSON config file of any shape, turning parse failures into
/// usage errors whose message names the offending field.
pub fn parse_json_config<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Applies relation selection, the single-task filter, and loss overrides
/// to the dataset's relation list, preserving dataset order.
pub fn resolve_relations(dataset: &[RelationSpec], cfg: &RunConfig) -> Result<Vec<RelationSpec>> {
    let mut selected: Vec<RelationSpec> = dataset.to_vec();
    if let Some(names) = &cfg.relations {
        for n in names {
            if !dataset.iter().any(|r| &r.name == n) {
                return Err(Error::InvalidRelation {
                    name: n.clone(),
                    reason: "not present in the dataset".into(),
                });
            }
        }
        selected.retain(|r| names.contains(&r.name));
    }
    if let Method::SingleTask(name) = &cfg.method {
        if !selected.iter().any(|r| &r.name == name) {
            return Err(Error::InvalidRelation {
                name: name.clone(),
                reason: "single-task target is not among the selected relations".into(),
            });
        }
        selected.retain(|r| &r.name == name);
    }
    for (name, mode) in &cfg.loss_overrides {
        match selected.iter_mut().find(|r| &r.name == name) {
            Some(r) => r.loss_mode = *mode,
            None => {
                return Err(Error::InvalidRelation {
                    name: name.clone(),
                    reason: "loss override targets an unselected relation".into(),
                })
            }
        }
    }
    if selected.is_empty() {
        return Err(Error::Config("no relations selected for training".into()));
    }
    Ok(selected)
}

fn build_model(cfg: &RunConfig, feature_dim: usize, relations: Vec<RelationSpec>) -> Result<Model> {
    match cfg.model {
        ModelKind::Gnn => Ok(Model::Gnn(GnnModel::init(
            GnnHyper {
                feature_dim,
                hidden_dim: cfg.hidden_dim,
                heads: cfg.heads,
                layers: cfg.layers,
            },
            relations,
            cfg.seed,
        )?)),
        ModelKind::BaselineRnn => Ok(Model::Rnn(RnnModel::init(
            RnnHyper {
                feature_dim,
                slot_dim: cfg.slot_dim,
                max_nodes: cfg.max_nodes,
            },
            relations,
            cfg.seed,
        )?)),
    }
}

fn model_feature_dim(model: &Model) -> usize {
    match model {
        Model::Gnn(m) => m.hyper.feature_dim,
        Model::Rnn(m) => m.hyper.feature_dim,
    }
}

/// Loads the sequences of one dataset split, in index order.
pub fn load_split(
    dir: impl AsRef<Path>,
    manifest: &DatasetManifest,
    split: &str,
) -> Result<Vec<DynamicGraph>> {
    let dir = dir.as_ref();
    let idxs = manifest.splits.of(split)?;
    idxs.par_iter()
        .map(|&i| load_sequence(sequence_path(dir, i)))
        .collect()
}

/// One forward pass and metric fold per sequence, parallel across
/// sequences, folded in index order.
pub fn evaluate(model: &Model, seqs: &[DynamicGraph]) -> Result<MetricReport> {
    let specs = model.relations();
    let evals: Vec<_> = seqs
        .par_iter()
        .map(|g| {
            let mut tape = Tape::new();
            let preds = model.forward(&mut tape, g)?;
            let losses = total_loss(&mut tape, &preds, &g.targets, specs)?;
            Ok((preds, losses))
        })
        .collect::<Result<_>>()?;
    let mut acc = MetricAccumulator::new(specs);
    for (g, (preds, losses)) in seqs.iter().zip(&evals) {
        acc.add_sequence(preds, &g.targets, losses)?;
    }
    acc.report()
}

/// Loss value and per-parameter gradients for one training sequence.
fn sequence_gradients(
    model: &Model,
    graph: &DynamicGraph,
) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let mut tape = Tape::new();
    let leaves = model.params().leaves_on(&mut tape);
    let preds = model.forward_with(&mut tape, graph, &leaves)?;
    let losses = total_loss(&mut tape, &preds, &graph.targets, model.relations())?;
    let loss_value = losses.total.data()[0];
    let grads = tape.backward(&losses.total)?;
    Ok((loss_value, model.params().align_gradients(&leaves, &grads)))
}

fn format_norms(norms: &[(String, f64)]) -> String {
    let parts: Vec<String> = norms
        .iter()
        .map(|(n, v)| format!("{n}={v:.3e}"))
        .collect();
    parts.join(", ")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn push_metric_rows(csv: &mut String, epoch: usize, split: &str, report: &MetricReport) {
    for m in report.relations.iter().chain([&report.overall]) {
        let _ = writeln!(
            csv,
            "{epoch},{split},{},{},{},{},{}",
            m.relation,
            fmt_opt(m.f1),
            fmt_opt(m.ap),
            fmt_opt(m.auc),
            m.loss
        );
    }
}

/// What a finished training run left on disk.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    pub resolved_config: PathBuf,
    /// Epoch whose checkpoint was kept (lowest selection loss).
    pub best_epoch: usize,
    /// The selection loss of the kept checkpoint (validation loss, or
    /// training loss when the validation split is empty).
    pub best_loss: f64,
    pub epochs_run: usize,
}

/// Trains per the config and returns the artifact paths. See
/// [`run_train_logged`] for progress reporting.
pub fn run_train(cfg: &RunConfig) -> Result<TrainSummary> {
    run_train_logged(cfg, &mut |_| {})
}

/// Full training loop: seeded shuffle each epoch, gradient sums over
/// mini-batches, one Adam step per batch with the per-epoch decayed rate,
/// per-epoch train/val metric rows, and a best-validation-loss checkpoint.
/// `log` receives one progress line per epoch.
pub fn run_train_logged(
    cfg: &RunConfig,
    log: &mut dyn FnMut(String),
) -> Result<TrainSummary> {
    cfg.validate()?;
    let manifest = load_manifest(&cfg.dataset)?;
    let relations = resolve_relations(&manifest.relations, cfg)?;
    let feature_dim = manifest.config.feature_dim;

    let train_seqs = load_split(&cfg.dataset, &manifest, "train")?;
    let val_seqs = load_split(&cfg.dataset, &manifest, "val")?;
    if train_seqs.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }

    let mut model = build_model(cfg, feature_dim, relations)?;

    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let resolved_config = cfg.out_dir.join("resolved_config.json");
    let cfg_json =
        serde_json::to_vec_pretty(cfg).map_err(|e| Error::json(&resolved_config, e))?;
    fs::write(&resolved_config, cfg_json).map_err(|e| Error::io(&resolved_config, e))?;
    let metrics_csv = cfg.out_dir.join("metrics.csv");
    let checkpoint = cfg.out_dir.join("model.ckpt");

    let sizes = model.params().sizes();
    let names: Vec<String> = model.params().names().to_vec();
    let mut adam = AdamState::new(&sizes);
    let mut shuffle_rng = Rng::new(mix(cfg.seed ^ SHUFFLE_TAG));
    let mut order: Vec<usize> = (0..train_seqs.len()).collect();

    let mut csv = String::from("epoch,split,relation,f1,ap,auc,loss\n");
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0usize;

    for epoch in 1..=cfg.epochs {
        let lr = rate_for_epoch(cfg.eta0, epoch as u64)?;
        shuffle_rng.shuffle(&mut order);

        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<(f64, Vec<Option<Vec<f64>>>)> = chunk
                .par_iter()
                .map(|&i| sequence_gradients(&model, &train_seqs[i]))
                .collect::<Result<_>>()?;
            let batch_loss: f64 = results.iter().map(|r| r.0).sum();
            let mut summed: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
            for (_, grads) in &results {
                for (slot, g) in summed.iter_mut().zip(grads) {
                    if let Some(g) = g {
                        for (a, b) in slot.iter_mut().zip(g) {
                            *a += b;
                        }
                    }
                }
            }
            let grads_finite = summed.iter().flatten().all(|g| g.is_finite());
            if !batch_loss.is_finite() || !grads_finite {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                    norms: format_norms(&model.params().l2_norms()),
                });
            }
            let grads: Vec<Option<Vec<f64>>> = summed.into_iter().map(Some).collect();
            adam.step(model.params_mut().data_mut(), &grads, &names, lr)?;
        }

        let train_report = evaluate(&model, &train_seqs)?;
        push_metric_rows(&mut csv, epoch, "train", &train_report);
        let val_report = if val_seqs.is_empty() {
            None
        } else {
            let r = evaluate(&model, &val_seqs)?;
            push_metric_rows(&mut csv, epoch, "val", &r);
            Some(r)
        };

        let selection = val_report
            .as_ref()
            .map(|r| r.overall.loss)
            .unwrap_or(train_report.overall.loss);
        let mut saved = "";
        if selection < best_loss {
            best_loss = selection;
            best_epoch = epoch;
            save_checkpoint(&checkpoint, &model)?;
            saved = " *";
        }
        fs::write(&metrics_csv, &csv).map_err(|e| Error::io(&metrics_csv, e))?;
        log(format!(
            "epoch {epoch}/{}: lr {lr:.3e} train loss {:.6} selection loss {selection:.6}{saved}",
            cfg.epochs, train_report.overall.loss
        ));
    }

    if best_epoch == 0 {
        return Err(Error::Checkpoint(
            "no epoch produced a finite selection loss; nothing was saved".into(),
        ));
    }
    Ok(TrainSummary {
        out_dir: cfg.out_dir.clone(),
        checkpoint,
        metrics_csv,
        resolved_config,
        best_epoch,
        best_loss,
        epochs_run: cfg.epochs,
    })
}

/// What `eval` needs: a checkpoint, a dataset, and a split name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    #[serde(default = "default_split")]
    pub split: String,
}

fn default_split() -> String {
    "test".into()
}

/// Deterministic single evaluation pass of a checkpoint over one split.
pub fn run_eval(
    checkpoint: impl AsRef<Path>,
    dataset: impl AsRef<Path>,
    split: &str,
) -> Result<MetricReport> {
    let model = load_checkpoint(checkpoint)?;
    let manifest = load_manifest(&dataset)?;
    let expected = manifest.config.feature_dim;
    let got = model_feature_dim(&model);
    if expected != got {
        return Err(Error::FeatureDimMismatch { expected, got });
    }
    for spec in model.relations() {
        if !manifest.relations.iter().any(|r| r.name == spec.name) {
            return Err(Error::InvalidRelation {
                name: spec.name.clone(),
                reason: "checkpoint relation is not present in the dataset".into(),
            });
        }
    }
    let idxs = manifest.splits.of(split)?;
    if idxs.is_empty() {
        return Err(Error::Config(format!("split `{split}` is empty")));
    }
    let seqs = load_split(&dataset, &manifest, split)?;
    evaluate(&model, &seqs)
}

/// An ablation sweep: a base run plus per-axis value lists. Each listed
/// value yields one cell with the other axes at their base values.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub run: RunConfigFile,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub heads: Vec<usize>,
    #[serde(default)]
    pub layers: Vec<usize>,
    #[serde(default)]
    pub methods: Vec<Method>,
}

/// One sweep cell's outcome: its test-split report, or the error that
/// stopped it (other cells keep running either way).
#[derive(Debug, Clone)]
pub struct CellResult {
    pub axis: String,
    pub value: String,
    pub out_dir: PathBuf,
    pub report: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub csv_path: PathBuf,
    pub cells: Vec<CellResult>,
}

fn dir_safe(value: &str) -> String {
    value.replace(':', "-")
}

/// Runs a per-axis sweep with a shared seed. Each cell trains into its own
/// subdirectory and is evaluated on the test split; failures are recorded
/// in the consolidated CSV and the sweep continues.
pub fn run_ablate(
    spec: &SweepSpec,
    profile_name: Option<&str>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    log: &mut dyn FnMut(String),
) -> Result<AblationOutcome> {
    let base = RunConfig::resolve(Some(spec.run.clone()), profile_name, seed, out)?;
    let mut cells: Vec<(String, String, RunConfig)> = Vec::new();
    for &v in &spec.hidden_dims {
        let mut c = base.clone();
        c.hidden_dim = v;
        cells.push(("hidden_dim".into(), v.to_string(), c));
    }
    for &v in &spec.heads {
        let mut c = base.clone();
        c.heads = v;
        cells.push(("heads".into(), v.to_string(), c));
    }
    for &v in &spec.layers {
        let mut c = base.clone();
        c.layers = v;
        cells.push(("layers".into(), v.to_string(), c));
    }
    for m in &spec.methods {
        let mut c = base.clone();
        c.method = m.clone();
        cells.push(("method".into(), String::from(m.clone()), c));
    }
    if cells.is_empty() {
        cells.push(("default".into(), "base".into(), base.clone()));
    }

    let mut csv = String::from("axis,value,relation,f1,ap,auc,loss,error\n");
    let mut results = Vec::with_capacity(cells.len());
    for (axis, value, mut cfg) in cells {
        cfg.out_dir = base
            .out_dir
            .join("cells")
            .join(format!("{axis}_{}", dir_safe(&value)));
        log(format!("cell {axis}={value}: training"));
        let outcome = run_train(&cfg)
            .and_then(|summary| run_eval(&summary.checkpoint, &cfg.dataset, "test"));
        match outcome {
            Ok(report) => {
                for m in report.relations.iter().chain([&report.overall]) {
                    let _ = writeln!(
                        csv,
                        "{axis},{value},{},{},{},{},{},",
                        m.relation,
                        fmt_opt(m.f1),
                        fmt_opt(m.ap),
                        fmt_opt(m.auc),
                        m.loss
                    );
                }
                results.push(CellResult {
                    axis: axis.clone(),
                    value: value.clone(),
                    out_dir: cfg.out_dir.clone(),
                    report: Some(report),
                    error: None,
                });
                log(format!("cell {axis}={value}: done"));
            }
            Err(e) => {
                let msg = e.to_string().replace([',', '\n'], ";");
                let _ = writeln!(csv, "{axis},{value},__error__,,,,,{msg}");
                results.push(CellResult {
                    axis: axis.clone(),
                    value: value.clone(),
                    out_dir: cfg.out_dir.clone(),
                    report: None,
                    error: Some(e.to_string()),
                });
                log(format!("cell {axis}={value}: failed: {e}"));
            }
        }
    }

    fs::create_dir_all(&base.out_dir).map_err(|e| Error::io(&base.out_dir, e))?;
    let csv_path = base.out_dir.join("ablation.csv");
    fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
    Ok(AblationOutcome {
        csv_path,
        cells: results,
    })
}
