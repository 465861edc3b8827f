//! Task losses: binary cross-entropy, the class-imbalance prioritized
//! variant, categorical cross-entropy, and the task-weighted multi-relation
//! total.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{pair_index, EdgeTargets, LabelKind, LabelValue};
use crate::model::EdgePredictions;
use crate::tensor::{Tape, Tensor};

/// How one relation's pair loss is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    #[serde(rename = "bce")]
    Bce,
    #[serde(rename = "prioritized-bce")]
    PrioritizedBce,
    #[serde(rename = "cross-entropy")]
    CrossEntropy,
}

/// A relation the model is trained on: class structure, loss mode, and
/// task weight in the total loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    pub class_count: usize,
    pub kind: LabelKind,
    pub loss_mode: LossMode,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

impl RelationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidRelation {
            name: self.name.clone(),
            reason: reason.into(),
        };
        if self.weight < 0.0 || !self.weight.is_finite() {
            return Err(bad("task weight must be finite and >= 0"));
        }
        match (self.kind, self.loss_mode) {
            (LabelKind::Binary, LossMode::CrossEntropy) => {
                Err(bad("binary relations use bce or prioritized-bce"))
            }
            (_, LossMode::PrioritizedBce) if self.kind != LabelKind::Binary => {
                Err(bad("prioritized-bce is only valid for binary relations"))
            }
            (LabelKind::Categorical, m) if m != LossMode::CrossEntropy => {
                Err(bad("categorical relations use cross-entropy"))
            }
            _ => match (self.kind, self.class_count) {
                (LabelKind::Binary, 1) => Ok(()),
                (LabelKind::Binary, _) => Err(bad("binary relations have class_count 1")),
                (LabelKind::Categorical, c) if c < 2 => {
                    Err(bad("categorical relations need class_count >= 2"))
                }
                (LabelKind::MultiLabel, 0) => {
                    Err(bad("multi-label relations need class_count >= 1"))
                }
                _ => Ok(()),
            },
        }
    }
}

/// Probability clamp used by all scalar cross-entropies.
const P_CLAMP: f64 = 1e-12;

/// Binary cross-entropy of probability `p` against label `y`.
pub fn bce(p: f64, y: bool) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Class-imbalance weighted binary cross-entropy: negative-label pairs are
/// down-weighted by the count `o` of the over-represented class among the
/// inferred frame's labeled pairs. With `o = 1` this is plain BCE.
pub fn prioritized_loss(p: f64, y: bool, o: usize) -> Result<f64> {
    if o == 0 {
        return Err(Error::EmptyPairSet);
    }
    let w = if y { 1.0 } else { 1.0 / o as f64 };
    Ok(w * bce(p, y))
}

/// Per-pair weights for a prioritized binary relation: whichever class is
/// the majority among the labeled pairs is down-weighted by its count
/// (ties treat the negative class as the majority, matching the usual
/// negatives-dominate regime).
pub fn prioritized_weights(labels: &[bool]) -> Vec<f64> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    let majority_is_positive = pos > neg;
    let o = pos.max(neg).max(1) as f64;
    labels
        .iter()
        .map(|&y| if y == majority_is_positive { 1.0 / o } else { 1.0 })
        .collect()
}

/// The total loss tensor plus per-relation readouts.
#[derive(Debug)]
pub struct LossBreakdown {
    /// Scalar tensor on the caller's tape: sum of task-weighted relation
    /// losses (zero constant if nothing was labeled).
    pub total: Tensor,
    /// Task-weighted loss value per relation, aligned with the spec list.
    pub per_relation: Vec<f64>,
    /// Labeled pairs that contributed per relation.
    pub pairs_used: Vec<usize>,
}

/// Builds the training loss: for each relation, the pair losses of the
/// labeled (mask-true) pairs are summed, weighted by the task weight, and
/// added up across relations. Each unordered pair is counted once.
pub fn total_loss(
    tape: &mut Tape,
    preds: &EdgePredictions,
    targets: &[EdgeTargets],
    specs: &[RelationSpec],
) -> Result<LossBreakdown> {
    let mut total: Option<Tensor> = None;
    let mut per_relation = Vec::with_capacity(specs.len());
    let mut pairs_used = Vec::with_capacity(specs.len());

    for (r, spec) in specs.iter().enumerate() {
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
        let rows: Vec<usize> = (0..target.mask.len()).filter(|&p| target.mask[p]).collect();
        if rows.is_empty() {
            per_relation.push(0.0);
            pairs_used.push(0);
            continue;
        }
        let labels = ordered_labels(target, preds.n_last, &rows)?;
        let logits = tape.gather_rows(&preds.scores[r], &rows)?;
        let m = rows.len();
        let c = spec.class_count;

        let sum = match spec.kind {
            LabelKind::Binary | LabelKind::MultiLabel => {
                let y: Vec<f64> = labels
                    .iter()
                    .flat_map(|v| label_vector(v, c))
                    .collect();
                let weights: Vec<f64> = match spec.loss_mode {
                    LossMode::PrioritizedBce => {
                        let flags: Vec<bool> = y.iter().map(|&v| v > 0.5).collect();
                        prioritized_weights(&flags)
                    }
                    _ => vec![1.0; y.len()],
                };
                bce_sum(tape, &logits, &y, &weights, m, c)?
            }
            LabelKind::Categorical => {
                let classes: Vec<usize> = labels
                    .iter()
                    .map(|v| match v {
                        LabelValue::Scalar(k) => *k as usize,
                        LabelValue::Vector(_) => 0,
                    })
                    .collect();
                cross_entropy_sum(tape, &logits, &classes, m, c)?
            }
        };
        let weighted = tape.scale(&sum, spec.weight)?;
        per_relation.push(weighted.data()[0]);
        pairs_used.push(m);
        total = Some(match total {
            Some(t) => tape.add(&t, &weighted)?,
            None => weighted,
        });
    }

    let total = match total {
        Some(t) => t,
        None => tape.constant(&Tensor::scalar(0.0)),
    };
    Ok(LossBreakdown {
        total,
        per_relation,
        pairs_used,
    })
}

/// Label values for the mask-true pairs in canonical pair order.
pub(crate) fn ordered_labels<'t>(
    target: &'t EdgeTargets,
    n_last: usize,
    rows: &[usize],
) -> Result<Vec<&'t LabelValue>> {
    let mut by_pair: Vec<Option<&LabelValue>> = vec![None; target.mask.len()];
    for l in &target.labels {
        by_pair[pair_index(l.i, l.j, n_last)] = Some(&l.y);
    }
    rows.iter()
        .map(|&p| {
            by_pair[p].ok_or_else(|| Error::PairSetMismatch {
                relation: target.relation.clone(),
            })
        })
        .collect()
}

pub(crate) fn label_vector(v: &LabelValue, class_count: usize) -> Vec<f64> {
    match v {
        LabelValue::Scalar(k) => vec![*k as f64],
        LabelValue::Vector(bits) => bits.iter().map(|&b| b as f64).collect::<Vec<_>>(),
    }
    .into_iter()
    .chain(std::iter::repeat(0.0))
    .take(class_count)
    .collect()
}

/// Weighted elementwise BCE over `[m, c]` logits, summed to a scalar.
fn bce_sum(
    tape: &mut Tape,
    logits: &Tensor,
    y: &[f64],
    weights: &[f64],
    m: usize,
    c: usize,
) -> Result<Tensor> {
    let p = tape.sigmoid(logits)?;
    let yc = tape.constant_from(vec![m, c], y.to_vec())?;
    let ones = tape.constant_from(vec![m, c], vec![1.0; m * c])?;
    let one_minus_y = tape.sub(&ones, &yc)?;
    let one_minus_p = tape.sub(&ones, &p)?;
    let log_p = tape.log(&p)?;
    let log_q = tape.log(&one_minus_p)?;
    let pos = tape.mul(&yc, &log_p)?;
    let neg = tape.mul(&one_minus_y, &log_q)?;
    let ll = tape.add(&pos, &neg)?;
    let wc = tape.constant_from(vec![m, c], weights.to_vec())?;
    let weighted = tape.mul(&ll, &wc)?;
    let row_mean = tape.mean_axis(&weighted, 1)?;
    let mean = tape.mean_axis(&row_mean, 0)?;
    tape.scale(&mean, -(m as f64 * c as f64))
}

/// Softmax cross-entropy over `[m, c]` logits against class indices,
/// summed to a scalar. Row maxima are subtracted as constants, which leaves
/// gradients unchanged (softmax is shift-invariant).
fn cross_entropy_sum(
    tape: &mut Tape,
    logits: &Tensor,
    classes: &[usize],
    m: usize,
    c: usize,
) -> Result<Tensor> {
    let mut maxes = vec![0.0; m];
    for (row, mx) in maxes.iter_mut().enumerate() {
        *mx = logits.data()[row * c..(row + 1) * c]
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    }
    let mx = tape.constant_from(vec![m, 1], maxes)?;
    let ones_row = tape.constant_from(vec![1, c], vec![1.0; c])?;
    let spread = tape.matmul(&mx, &ones_row)?;
    let shifted = tape.sub(logits, &spread)?;
    let e = tape.exp(&shifted)?;
    let ones_col = tape.constant_from(vec![c, 1], vec![1.0; c])?;
    let row_sum = tape.matmul(&e, &ones_col)?;
    let denom = tape.log(&row_sum)?; // [m,1]
    let mut onehot = vec![0.0; m * c];
    for (row, &k) in classes.iter().enumerate() {
        onehot[row * c + k] = 1.0;
    }
    let oh = tape.constant_from(vec![m, c], onehot)?;
    let masked = tape.mul(&shifted, &oh)?;
    let picked = tape.matmul(&masked, &ones_col)?; // [m,1]
    let per_row = tape.sub(&denom, &picked)?;
    let col_mean = tape.mean_axis(&per_row, 1)?;
    let mean = tape.mean_axis(&col_mean, 0)?;
    tape.scale(&mean, m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_at_half_is_ln2() {
        assert!((bce(0.5, true) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce(0.5, false) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn prioritized_with_unit_count_is_bce() {
        for &(p, y) in &[(0.3, true), (0.9, false), (0.5, true)] {
            assert_eq!(prioritized_loss(p, y, 1).unwrap(), bce(p, y));
        }
    }

    #[test]
    fn prioritized_quarter_weight() {
        let l = prioritized_loss(0.5, false, 4).unwrap();
        assert!((l - std::f64::consts::LN_2 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn prioritized_rejects_zero_count() {
        assert!(matches!(
            prioritized_loss(0.5, false, 0),
            Err(Error::EmptyPairSet)
        ));
    }

    #[test]
    fn weights_downweight_the_majority() {
        // 6 negatives, 2 positives: majority class 0 with o = 6
        let labels = [false, false, true, false, false, true, false, false];
        let w = prioritized_weights(&labels);
        for (i, &y) in labels.iter().enumerate() {
            let expect = if y { 1.0 } else { 1.0 / 6.0 };
            assert_eq!(w[i], expect);
        }
    }

    #[test]
    fn weights_flip_when_positives_dominate() {
        let labels = [true, true, true, false];
        let w = prioritized_weights(&labels);
        assert_eq!(w, vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0]);
    }

    #[test]
    fn tie_treats_negatives_as_majority() {
        let labels = [true, false];
        let w = prioritized_weights(&labels);
        assert_eq!(w, vec![1.0, 1.0]); // o = 1 when the majority count is 1
        let labels = [true, true, false, false];
        let w = prioritized_weights(&labels);
        assert_eq!(w, vec![1.0, 1.0, 0.5, 0.5]);
    }

    #[test]
    fn relation_spec_validation() {
        let ok = RelationSpec {
            name: "collision".into(),
            class_count: 1,
            kind: LabelKind::Binary,
            loss_mode: LossMode::PrioritizedBce,
            weight: 1.0,
        };
        assert!(ok.validate().is_ok());

        let mut bad = ok.clone();
        bad.kind = LabelKind::MultiLabel;
        bad.class_count = 3;
        assert!(bad.validate().is_err()); // prioritized on non-binary

        let mut bad = ok.clone();
        bad.weight = -1.0;
        assert!(bad.validate().is_err());

        let mut bad = ok.clone();
        bad.class_count = 2;
        assert!(bad.validate().is_err()); // binary with 2 outputs
    }
}
