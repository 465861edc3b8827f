//! Ranking and classification metrics over evaluated node pairs: F1 at a
//! 0.5 threshold, average precision as the area under the precision-recall
//! step curve, AUC by the Mann-Whitney midrank statistic, and per-sample
//! Recall@K. Multi-class relations are micro-averaged: every (pair, class)
//! becomes one binary instance.
//!
//! Metrics that need both classes present (AP, AUC) or any instance at all
//! come back as `None` rather than NaN, and render as empty CSV fields.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::{EdgeTargets, LabelKind, LabelValue};
use crate::loss::{label_vector, ordered_labels, LossBreakdown, RelationSpec};
use crate::model::EdgePredictions;
use crate::tensor::stable_sigmoid;

/// One relation's numbers in a [`MetricReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMetrics {
    pub relation: String,
    pub f1: Option<f64>,
    pub ap: Option<f64>,
    pub auc: Option<f64>,
    /// Mean per-sequence loss (task-weighted, summed over pairs).
    pub loss: f64,
    /// Evaluated (mask-true) pairs accumulated.
    pub n_pairs: usize,
    /// Masked-out pairs accumulated.
    pub n_masked: usize,
}

/// Evaluation summary: one entry per relation plus a pooled `__all__` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub relations: Vec<RelationMetrics>,
    pub overall: RelationMetrics,
}

impl MetricReport {
    /// CSV rendering: `relation,f1,ap,auc,loss,n_pairs,n_masked`, one row
    /// per relation, the `__all__` aggregate last. Undefined metrics are
    /// empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("relation,f1,ap,auc,loss,n_pairs,n_masked\n");
        for row in self.relations.iter().chain(std::iter::once(&self.overall)) {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.relation,
                opt(row.f1),
                opt(row.ap),
                opt(row.auc),
                row.loss,
                row.n_pairs,
                row.n_masked
            )
            .expect("string write");
        }
        out
    }
}

/// F1 at the 0.5 probability threshold over pooled binary instances.
/// `None` when there is nothing to score (no positives and no predicted
/// positives); an all-negative prediction against real positives scores 0.
pub fn f1_at_half(instances: &[(f64, bool)]) -> Option<f64> {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fnc = 0usize;
    for &(p, y) in instances {
        let pred = p > 0.5;
        match (pred, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnc += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fnc;
    if denom == 0 {
        None
    } else {
        Some(2.0 * tp as f64 / denom as f64)
    }
}

/// Area under the precision-recall step curve with descending-score
/// cutoffs; tied scores enter as one block. Needs both classes present.
pub fn average_precision(instances: &[(f64, bool)]) -> Option<f64> {
    let n_pos = instances.iter().filter(|&&(_, y)| y).count();
    let n_neg = instances.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut sorted: Vec<(f64, bool)> = instances.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut k = 0;
    while k < sorted.len() {
        let score = sorted[k].0;
        while k < sorted.len() && sorted[k].0.total_cmp(&score).is_eq() {
            seen += 1;
            if sorted[k].1 {
                tp += 1;
            }
            k += 1;
        }
        let precision = tp as f64 / seen as f64;
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

/// Mann-Whitney AUC with the midrank convention for ties. Needs both
/// classes present.
pub fn auc(instances: &[(f64, bool)]) -> Option<f64> {
    let n_pos = instances.iter().filter(|&&(_, y)| y).count();
    let n_neg = instances.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut sorted: Vec<(f64, bool)> = instances.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0; // sum of positive instances' midranks
    let mut k = 0;
    while k < sorted.len() {
        let score = sorted[k].0;
        let start = k;
        let mut pos_in_tie = 0usize;
        while k < sorted.len() && sorted[k].0.total_cmp(&score).is_eq() {
            if sorted[k].1 {
                pos_in_tie += 1;
            }
            k += 1;
        }
        // 1-based ranks start+1 ..= k share the midrank
        let midrank = (start + 1 + k) as f64 / 2.0;
        rank_sum += midrank * pos_in_tie as f64;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Fraction of a sample's positive labels ranked inside the top `k`
/// predictions by score (ties broken by input order). `None` when the
/// sample has no positives.
pub fn recall_at_k(scores: &[f64], labels: &[bool], k: usize) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let hits = order
        .iter()
        .take(k)
        .filter(|&&i| labels[i])
        .count();
    Some(hits as f64 / n_pos as f64)
}

/// Streaming metric state over many sequences for a fixed relation list.
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    specs: Vec<RelationSpec>,
    instances: Vec<Vec<(f64, bool)>>,
    loss_sums: Vec<f64>,
    pair_counts: Vec<usize>,
    masked_counts: Vec<usize>,
    total_loss_sum: f64,
    n_sequences: usize,
}

impl MetricAccumulator {
    pub fn new(specs: &[RelationSpec]) -> Self {
        MetricAccumulator {
            specs: specs.to_vec(),
            instances: vec![Vec::new(); specs.len()],
            loss_sums: vec![0.0; specs.len()],
            pair_counts: vec![0; specs.len()],
            masked_counts: vec![0; specs.len()],
            total_loss_sum: 0.0,
            n_sequences: 0,
        }
    }

    /// Folds one evaluated sequence in: per relation, every mask-true pair
    /// contributes its binary instances; the loss breakdown contributes
    /// this sequence's per-relation and total losses.
    pub fn add_sequence(
        &mut self,
        preds: &EdgePredictions,
        targets: &[EdgeTargets],
        losses: &LossBreakdown,
    ) -> Result<()> {
        for (r, spec) in self.specs.iter().enumerate() {
            let target = targets
                .iter()
                .find(|t| t.relation == spec.name)
                .ok_or_else(|| Error::PairSetMismatch {
                    relation: spec.name.clone(),
                })?;
            if target.mask.len() != preds.pairs.len()
                || target.kind != spec.kind
                || target.class_count != spec.class_count
            {
                return Err(Error::PairSetMismatch {
                    relation: spec.name.clone(),
                });
            }
            let rows: Vec<usize> =
                (0..target.mask.len()).filter(|&p| target.mask[p]).collect();
            self.masked_counts[r] += target.mask.len() - rows.len();
            self.loss_sums[r] += losses.per_relation[r];
            if rows.is_empty() {
                continue;
            }
            let labels = ordered_labels(target, preds.n_last, &rows)?;
            let logits = preds.scores[r].data();
            let c = spec.class_count;
            self.pair_counts[r] += rows.len();
            let sink = &mut self.instances[r];
            for (&p, label) in rows.iter().zip(&labels) {
                let row = &logits[p * c..(p + 1) * c];
                match spec.kind {
                    LabelKind::Binary | LabelKind::MultiLabel => {
                        let y = label_vector(label, c);
                        for (&z, &yv) in row.iter().zip(&y) {
                            sink.push((stable_sigmoid(z), yv > 0.5));
                        }
                    }
                    LabelKind::Categorical => {
                        let klass = match label {
                            LabelValue::Scalar(k) => *k as usize,
                            LabelValue::Vector(_) => {
                                return Err(Error::PairSetMismatch {
                                    relation: spec.name.clone(),
                                })
                            }
                        };
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|&z| (z - mx).exp()).collect();
                        let z: f64 = exps.iter().sum();
                        for (cls, &e) in exps.iter().enumerate() {
                            sink.push((e / z, cls == klass));
                        }
                    }
                }
            }
        }
        self.total_loss_sum += losses
            .per_relation
            .iter()
            .sum::<f64>();
        self.n_sequences += 1;
        Ok(())
    }

    /// Final report. Errors if nothing at all was evaluated.
    pub fn report(&self) -> Result<MetricReport> {
        if self.instances.iter().all(|v| v.is_empty()) {
            return Err(Error::EmptyPairSet);
        }
        let seq = self.n_sequences.max(1) as f64;
        let mut relations = Vec::with_capacity(self.specs.len());
        let mut pooled: Vec<(f64, bool)> = Vec::new();
        for (r, spec) in self.specs.iter().enumerate() {
            let inst = &self.instances[r];
            pooled.extend_from_slice(inst);
            relations.push(RelationMetrics {
                relation: spec.name.clone(),
                f1: f1_at_half(inst),
                ap: average_precision(inst),
                auc: auc(inst),
                loss: self.loss_sums[r] / seq,
                n_pairs: self.pair_counts[r],
                n_masked: self.masked_counts[r],
            });
        }
        let overall = RelationMetrics {
            relation: "__all__".into(),
            f1: f1_at_half(&pooled),
            ap: average_precision(&pooled),
            auc: auc(&pooled),
            loss: self.total_loss_sum / seq,
            n_pairs: self.pair_counts.iter().sum(),
            n_masked: self.masked_counts.iter().sum(),
        };
        Ok(MetricReport { relations, overall })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(scores: &[f64], labels: &[u8]) -> Vec<(f64, bool)> {
        scores
            .iter()
            .zip(labels)
            .map(|(&s, &y)| (s, y != 0))
            .collect()
    }

    #[test]
    fn perfectly_separated_scores_max_out_ranking_metrics() {
        let i = inst(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]);
        assert_eq!(auc(&i), Some(1.0));
        assert_eq!(average_precision(&i), Some(1.0));
        assert_eq!(f1_at_half(&i), Some(1.0));
    }

    #[test]
    fn constant_scores_give_chance_auc() {
        let i = inst(&[0.4, 0.4, 0.4, 0.4], &[1, 0, 1, 0]);
        assert_eq!(auc(&i), Some(0.5));
    }

    #[test]
    fn ap_matches_hand_computation() {
        let i = inst(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]);
        let got = average_precision(&i).unwrap();
        assert!((got - (0.5 + 1.0 / 3.0)).abs() < 1e-15, "{got}");
    }

    #[test]
    fn auc_matches_hand_computation() {
        let i = inst(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]);
        assert_eq!(auc(&i), Some(0.75));
    }

    #[test]
    fn single_class_ranking_metrics_are_undefined() {
        let all_pos = inst(&[0.9, 0.1], &[1, 1]);
        assert_eq!(auc(&all_pos), None);
        assert_eq!(average_precision(&all_pos), None);
        let all_neg = inst(&[0.9, 0.1], &[0, 0]);
        assert_eq!(auc(&all_neg), None);
    }

    #[test]
    fn f1_handles_degenerate_predictions() {
        // all-negative predictions against real positives: zero, not None
        let i = inst(&[0.2, 0.3, 0.1], &[1, 1, 0]);
        assert_eq!(f1_at_half(&i), Some(0.0));
        // nothing positive anywhere: undefined
        let i = inst(&[0.2, 0.3], &[0, 0]);
        assert_eq!(f1_at_half(&i), None);
        // one hit, one false alarm, one miss
        let i = inst(&[0.9, 0.8, 0.2], &[1, 0, 1]);
        assert_eq!(f1_at_half(&i), Some(0.5));
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms() {
        let scores = [0.11, 0.52, 0.37, 0.93, 0.78, 0.25];
        let labels = [0u8, 1, 0, 1, 1, 0];
        let base = auc(&inst(&scores, &labels)).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| (5.0 * s).tanh()).collect();
        let shifted: Vec<f64> = scores.iter().map(|&s| 100.0 * s - 3.0).collect();
        assert_eq!(auc(&inst(&squashed, &labels)).unwrap(), base);
        assert_eq!(auc(&inst(&shifted, &labels)).unwrap(), base);
    }

    #[test]
    fn midrank_tie_between_classes_scores_half() {
        let i = inst(&[0.5, 0.5], &[1, 0]);
        assert_eq!(auc(&i), Some(0.5));
    }

    #[test]
    fn recall_at_k_counts_top_ranked_positives() {
        let scores = [0.9, 0.8, 0.7, 0.6, 0.5];
        let labels = [true, false, true, false, true];
        assert_eq!(recall_at_k(&scores, &labels, 1), Some(1.0 / 3.0));
        assert_eq!(recall_at_k(&scores, &labels, 3), Some(2.0 / 3.0));
        assert_eq!(recall_at_k(&scores, &labels, 5), Some(1.0));
        assert_eq!(recall_at_k(&scores, &labels, 50), Some(1.0));
        assert_eq!(recall_at_k(&scores, &[false; 5], 3), None);
    }

    #[test]
    fn csv_layout_and_empty_fields() {
        let report = MetricReport {
            relations: vec![RelationMetrics {
                relation: "collision".into(),
                f1: Some(0.5),
                ap: None,
                auc: Some(0.75),
                loss: 0.25,
                n_pairs: 12,
                n_masked: 3,
            }],
            overall: RelationMetrics {
                relation: "__all__".into(),
                f1: Some(0.5),
                ap: None,
                auc: Some(0.75),
                loss: 0.25,
                n_pairs: 12,
                n_masked: 3,
            },
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "relation,f1,ap,auc,loss,n_pairs,n_masked");
        assert_eq!(lines[1], "collision,0.5,,0.75,0.25,12,3");
        assert!(lines[2].starts_with("__all__,"));
        assert_eq!(lines.len(), 3);
    }
}
