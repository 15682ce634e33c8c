//! Classification metrics: macro-F1, accuracy, balanced accuracy, top-2/3.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize)]
pub struct PerClass {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub top2: f64,
    pub top3: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<PerClass>,
    pub samples: usize,
}

/// Rank of the true label under descending logits; ties go to the lower
/// class index first.
fn label_rank<T: Scalar>(row: &[T], label: usize) -> usize {
    let lv = row[label];
    row.iter()
        .enumerate()
        .filter(|(c, v)| **v > lv || (**v == lv && *c < label))
        .count()
}

/// Deterministic metrics over one batch of logits. Predictions are the
/// argmax (lowest index on ties). Macro-F1 averages over all classes with 0
/// for degenerate ones; balanced accuracy averages recall over classes that
/// appear in the labels.
pub fn compute_metrics<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<EvalReport> {
    let [n, c] = *logits.shape() else {
        return Err(Error::Shape(format!("logits must be [N, C], got {:?}", logits.shape())));
    };
    if n == 0 {
        return Err(Error::InvalidArg("cannot compute metrics on an empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} logit rows but {} labels", labels.len())));
    }
    if let Some(l) = labels.iter().find(|l| **l >= c) {
        return Err(Error::InvalidArg(format!("label {l} out of range for {c} classes")));
    }

    let mut confusion = vec![vec![0u64; c]; c];
    let mut top2_hits = 0usize;
    let mut top3_hits = 0usize;
    for (i, label) in labels.iter().enumerate() {
        let row = &logits.data()[i * c..(i + 1) * c];
        let rank = label_rank(row, *label);
        if rank < 2 {
            top2_hits += 1;
        }
        if rank < 3 {
            top3_hits += 1;
        }
        let pred = row
            .iter()
            .enumerate()
            .fold((0usize, T::neg_infinity()), |best, (k, v)| if *v > best.1 { (k, *v) } else { best })
            .0;
        confusion[*label][pred] += 1;
    }

    let mut per_class = Vec::with_capacity(c);
    let mut recall_sum = 0.0;
    let mut recall_classes = 0usize;
    let mut f1_sum = 0.0;
    let mut correct = 0u64;
    for k in 0..c {
        let support: u64 = confusion[k].iter().sum();
        let predicted: u64 = (0..c).map(|t| confusion[t][k]).sum();
        let tp = confusion[k][k];
        correct += tp;
        let precision = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
        let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if support > 0 {
            recall_sum += recall;
            recall_classes += 1;
        }
        f1_sum += f1;
        per_class.push(PerClass { precision, recall, f1, support });
    }

    Ok(EvalReport {
        macro_f1: f1_sum / c as f64,
        accuracy: correct as f64 / n as f64,
        balanced_accuracy: recall_sum / recall_classes.max(1) as f64,
        top2: top2_hits as f64 / n as f64,
        top3: top3_hits as f64 / n as f64,
        confusion,
        per_class,
        samples: n,
    })
}

/// Confusion matrix as CSV, `true class x predicted class`.
pub fn confusion_csv(report: &EvalReport) -> String {
    let mut out = String::new();
    for row in &report.confusion {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_logits(preds: &[usize], c: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(&[preds.len(), c]);
        for (i, p) in preds.iter().enumerate() {
            t.data_mut()[i * c + p] = 1.0;
        }
        t
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let labels = [0usize, 1, 2, 3, 4];
        let logits = one_hot_logits(&labels, 5);
        let r = compute_metrics(&logits, &labels).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.balanced_accuracy, 1.0);
        assert_eq!(r.top2, 1.0);
        assert_eq!(r.top3, 1.0);
    }

    #[test]
    fn hand_checked_two_class_case() {
        let labels = [0usize, 0, 0, 1];
        let logits = one_hot_logits(&[0, 0, 1, 1], 2);
        let r = compute_metrics(&logits, &labels).unwrap();
        assert!((r.accuracy - 0.75).abs() < 1e-9);
        assert!((r.balanced_accuracy - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-6);
        assert!((r.macro_f1 - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-6);
    }

    #[test]
    fn top_k_counts_rank_of_true_label() {
        // Scores 3 > 2 > 1 > ...; the true label holds the second rank.
        let logits =
            Tensor::from_vec(&[1, 5], vec![3.0f64, 2.0, 1.0, 0.5, 0.1]).unwrap();
        let r = compute_metrics(&logits, &[1]).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.top2, 1.0);
        assert_eq!(r.top3, 1.0);
    }

    #[test]
    fn ties_rank_lower_class_first() {
        let logits = Tensor::from_vec(&[1, 3], vec![1.0f64, 1.0, 1.0]).unwrap();
        // label 2 is ranked behind the equal-logit classes 0 and 1.
        let r = compute_metrics(&logits, &[2]).unwrap();
        assert_eq!(r.top2, 0.0);
        assert_eq!(r.top3, 1.0);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let logits = Tensor::<f64>::zeros(&[0, 3]);
        assert!(compute_metrics(&logits, &[]).is_err());
    }

    #[test]
    fn balanced_accuracy_is_macro_recall_and_matches_accuracy_on_balanced_sets() {
        let labels = [0usize, 0, 1, 1, 2, 2];
        let logits = one_hot_logits(&[0, 1, 1, 1, 0, 2], 3);
        let r = compute_metrics(&logits, &labels).unwrap();
        let mean_recall: f64 =
            r.per_class.iter().filter(|p| p.support > 0).map(|p| p.recall).sum::<f64>() / 3.0;
        assert!((r.balanced_accuracy - mean_recall).abs() < 1e-12);
        assert!((r.balanced_accuracy - r.accuracy).abs() < 1e-9);
    }

    #[test]
    fn sample_order_does_not_matter() {
        let labels = [0usize, 1, 2, 1, 0];
        let preds = [0usize, 2, 2, 1, 1];
        let logits = one_hot_logits(&preds, 3);
        let a = compute_metrics(&logits, &labels).unwrap();
        let perm = [4usize, 2, 0, 3, 1];
        let labels_p: Vec<usize> = perm.iter().map(|i| labels[*i]).collect();
        let preds_p: Vec<usize> = perm.iter().map(|i| preds[*i]).collect();
        let b = compute_metrics(&one_hot_logits(&preds_p, 3), &labels_p).unwrap();
        assert_eq!(a.macro_f1, b.macro_f1);
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.balanced_accuracy, b.balanced_accuracy);
    }
}
