//! Step-level classification metrics over non-pad positions.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::train::{predict_classes, Dataset};
use super::{ModelError, SequenceModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub weighted_recall: f64,
    pub weighted_precision: f64,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Array2<u64>,
    pub steps: u64,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Metrics from label sequences. Steps whose true class is `pad` are skipped.
pub fn compute_metrics(
    truth: &[Vec<usize>],
    predicted: &[Vec<usize>],
    classes: usize,
    pad: usize,
) -> Result<Metrics, ModelError> {
    if truth.len() != predicted.len() {
        return Err(ModelError::Shape("truth and prediction counts differ".into()));
    }
    let mut confusion = Array2::<u64>::zeros((classes, classes));
    for (t, p) in truth.iter().zip(predicted) {
        if t.len() != p.len() {
            return Err(ModelError::Shape("sequence lengths differ".into()));
        }
        for (&a, &b) in t.iter().zip(p) {
            if a != pad {
                confusion[[a, b]] += 1;
            }
        }
    }
    let steps: u64 = confusion.sum();
    if steps == 0 {
        return Err(ModelError::Empty("evaluation set (no labelled steps)"));
    }
    let correct: u64 = (0..classes).map(|c| confusion[[c, c]]).sum();
    let mut f1 = 0.0;
    let mut recall = 0.0;
    let mut precision = 0.0;
    for c in 0..classes {
        let support = confusion.row(c).sum();
        if support == 0 {
            continue;
        }
        let tp = confusion[[c, c]] as f64;
        let predicted_c = confusion.column(c).sum() as f64;
        let r = tp / support as f64;
        let p = if predicted_c > 0.0 { tp / predicted_c } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let w = support as f64 / steps as f64;
        f1 += w * f;
        recall += w * r;
        precision += w * p;
    }
    Ok(Metrics {
        accuracy: correct as f64 / steps as f64,
        weighted_f1: f1,
        weighted_recall: recall,
        weighted_precision: precision,
        confusion,
        steps,
    })
}

pub fn evaluate(model: &SequenceModel, test_set: &Dataset) -> Result<Metrics, ModelError> {
    if test_set.is_empty() {
        return Err(ModelError::Empty("test set"));
    }
    let predicted = predict_classes(model, test_set, 64)?;
    compute_metrics(&test_set.labels, &predicted, test_set.classes, test_set.pad)
}
