//! Per-label error, macro-averaged F1, and transition-model recovery from
//! learned label-label weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;

/// Precision/recall/F1 and support for one label.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Ground-truth slice count.
    pub support: usize,
    /// Predicted slice count.
    pub predicted: usize,
}

/// Slice-level evaluation summary. `macro_f1` averages only labels with
/// nonzero ground-truth support; `excluded_labels` counts the rest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub total_slices: usize,
    pub misclassified: usize,
    pub per_label_error: f64,
    pub macro_f1: f64,
    pub per_label: Vec<LabelMetrics>,
    pub excluded_labels: usize,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.per_label_error
    }
}

/// Compares predictions against full ground truth, slice by slice.
pub fn evaluate(
    predictions: &[Vec<usize>],
    ground_truth: &[Vec<usize>],
    num_labels: usize,
) -> Result<EvalReport> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::EvalMismatch(format!(
            "{} predicted sequences vs {} ground-truth sequences",
            predictions.len(),
            ground_truth.len()
        )));
    }
    let mut confusion = vec![0usize; num_labels * num_labels];
    let mut total = 0usize;
    for (i, (pred, truth)) in predictions.iter().zip(ground_truth).enumerate() {
        if pred.len() != truth.len() {
            return Err(Error::EvalMismatch(format!(
                "sequence {i}: {} predicted slices vs {} ground-truth slices",
                pred.len(),
                truth.len()
            )));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            if p >= num_labels || t >= num_labels {
                return Err(Error::LabelOutOfRange {
                    label: p.max(t),
                    size: num_labels,
                });
            }
            confusion[t * num_labels + p] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EvalMismatch("no slices to evaluate".into()));
    }
    let correct: usize = (0..num_labels).map(|l| confusion[l * num_labels + l]).sum();
    let mut per_label = Vec::with_capacity(num_labels);
    let mut f1_sum = 0.0;
    let mut supported = 0usize;
    for l in 0..num_labels {
        let tp = confusion[l * num_labels + l];
        let support: usize = (0..num_labels).map(|p| confusion[l * num_labels + p]).sum();
        let predicted: usize = (0..num_labels).map(|t| confusion[t * num_labels + l]).sum();
        let precision = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
        let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if support > 0 {
            f1_sum += f1;
            supported += 1;
        }
        per_label.push(LabelMetrics { label: l, precision, recall, f1, support, predicted });
    }
    Ok(EvalReport {
        total_slices: total,
        misclassified: total - correct,
        per_label_error: (total - correct) as f64 / total as f64,
        macro_f1: if supported > 0 { f1_sum / supported as f64 } else { 0.0 },
        per_label,
        excluded_labels: num_labels - supported,
    })
}

/// 0/1 transition structure read off a trained model's label-label weights:
/// entry (l1, l2) is 1 iff the summed weight of the label-label features for
/// l1 -> l2 is >= 0. Cells whose feature was never stepped (weight exactly
/// zero, or no feature present) are listed in `unselected`; the readout
/// depends only on weight signs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransitionRecovery {
    pub matrix: Vec<Vec<u8>>,
    pub unselected: Vec<(usize, usize)>,
    /// Every label-label weight is exactly zero: the all-ones readout is
    /// meaningless and callers should warn.
    pub degenerate: bool,
}

/// Thresholds label-label (bridge or persistence) weights at zero.
pub fn recover_transition_matrix(model: &Model) -> Result<TransitionRecovery> {
    let y = model.label_space().size();
    let mut weight = vec![vec![0.0f64; y]; y];
    let mut present = vec![vec![false; y]; y];
    let mut any = false;
    for (feature, &w) in model.features().iter().zip(model.weights()) {
        if let Some((l1, l2)) = feature.label_pair() {
            weight[l1][l2] += w;
            present[l1][l2] = true;
            any = true;
        }
    }
    if !any {
        return Err(Error::NoLabelPairFeatures);
    }
    let mut matrix = vec![vec![0u8; y]; y];
    let mut unselected = Vec::new();
    let mut degenerate = true;
    for l1 in 0..y {
        for l2 in 0..y {
            matrix[l1][l2] = u8::from(weight[l1][l2] >= 0.0);
            if !present[l1][l2] || weight[l1][l2] == 0.0 {
                unselected.push((l1, l2));
            } else {
                degenerate = false;
            }
        }
    }
    Ok(TransitionRecovery { matrix, unselected, degenerate })
}
