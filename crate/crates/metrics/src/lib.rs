//! Multiclass evaluation: confusion matrices, per-class precision/recall/F1,
//! macro averages, and report rendering in text, CSV, and JSON.
//!
//! Conventions: confusion-matrix rows are the true class, columns the
//! predicted class. Macro averages are unweighted means over classes; with
//! imbalanced data they differ from support-weighted means, so reports carry
//! an explicit `average = "macro"` marker. Classes with zero support (or a
//! zero column sum for precision) report 0.0 and set `degenerate`.

use serde::{Deserialize, Serialize};

pub mod report;

pub use report::{render_report, ReportFormat};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("label lists have different lengths: {truth} true vs {predicted} predicted")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("confusion matrix is all zeros")]
    EmptyMatrix,
    #[error("expected {expected} class names, got {got}")]
    ClassNameCount { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Square count matrix over `K` classes; `counts[i][j]` is the number of
/// samples with true class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|k| self.counts[k][k]).sum()
    }
}

/// Builds a confusion matrix from parallel true/predicted label lists.
pub fn confusion(
    truth: &[usize],
    predicted: &[usize],
    class_names: &[String],
) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let k = class_names.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(predicted.iter()) {
        if t >= k {
            return Err(MetricsError::LabelOutOfRange { label: t, classes: k });
        }
        if p >= k {
            return Err(MetricsError::LabelOutOfRange { label: p, classes: k });
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        class_names: class_names.to_vec(),
        counts,
    })
}

/// Convenience for integer-named classes `0..k`.
pub fn confusion_indexed(truth: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix> {
    let names: Vec<String> = (0..k).map(|i| i.to_string()).collect();
    confusion(truth, predicted, &names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a zero denominator forced a metric to 0.0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub per_class: Vec<PerClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub total: u64,
    /// Averaging rule used for the macro block; always "macro" here.
    pub average: String,
}

/// Per-class precision/recall/F1 plus macro averages and overall accuracy.
///
/// precision_k = cm[k][k] / colsum_k, recall_k = cm[k][k] / rowsum_k,
/// f1_k = 2PR/(P+R); zero denominators yield 0.0 with `degenerate` set.
pub fn metrics(cm: &ConfusionMatrix) -> Result<ClassMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let k = cm.num_classes();
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.counts[c][c] as f64;
        let col = cm.col_sum(c) as f64;
        let row = cm.row_sum(c) as f64;
        let mut degenerate = false;
        let precision = if col > 0.0 {
            tp / col
        } else {
            degenerate = true;
            0.0
        };
        let recall = if row > 0.0 {
            tp / row
        } else {
            degenerate = true;
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            degenerate = true;
            0.0
        };
        per_class.push(PerClassMetrics {
            class: cm.class_names[c].clone(),
            precision,
            recall,
            f1,
            support: cm.row_sum(c),
            degenerate,
        });
    }
    let kf = k as f64;
    Ok(ClassMetrics {
        macro_precision: per_class.iter().map(|m| m.precision).sum::<f64>() / kf,
        macro_recall: per_class.iter().map(|m| m.recall).sum::<f64>() / kf,
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / kf,
        accuracy: cm.trace() as f64 / total as f64,
        total,
        average: "macro".to_string(),
        per_class,
    })
}

/// Confusion matrix plus the derived metrics; the unit every evaluation
/// produces and every report renders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub metrics: ClassMetrics,
}

impl EvalReport {
    pub fn from_labels(
        truth: &[usize],
        predicted: &[usize],
        class_names: &[String],
    ) -> Result<Self> {
        let confusion = confusion(truth, predicted, class_names)?;
        let metrics = metrics(&confusion)?;
        Ok(EvalReport { confusion, metrics })
    }
}

/// Micro-averaged precision over a confusion matrix: total TP / total predictions.
/// For single-label multiclass data this equals micro recall and accuracy.
pub fn micro_precision(cm: &ConfusionMatrix) -> f64 {
    cm.trace() as f64 / cm.total() as f64
}
