//! Confusion matrices and the accuracy figures derived from them.
//!
//! All metrics are fractions in `[0, 1]`; front ends multiply by 100 for
//! display. Class ids are 1-based at the API and 0-based inside the matrix.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square count matrix; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if c == 0 || rows.iter().any(|r| r.len() != c) {
            return Err(Error::ShapeMismatch(format!(
                "confusion matrix must be square and non-empty, got {c} rows"
            )));
        }
        Ok(ConfusionMatrix {
            num_classes: c,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Count for 0-based true class `i` predicted as `j`.
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.num_classes + j]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.num_classes.max(1))
            .map(<[u64]>::to_vec)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts
            .chunks(self.num_classes.max(1))
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.num_classes)
            .map(|j| (0..self.num_classes).map(|i| self.get(i, j)).sum())
            .collect()
    }

    /// CSV with a header row of predicted classes and one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for j in 1..=self.num_classes {
            let _ = write!(out, ",{j}");
        }
        out.push('\n');
        for (i, row) in self.rows().iter().enumerate() {
            let _ = write!(out, "{}", i + 1);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Tallies 1-based label pairs into a `num_classes x num_classes` matrix.
pub fn confusion(true_labels: &[usize], predicted: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} true labels but {} predictions",
            true_labels.len(),
            predicted.len()
        )));
    }
    if true_labels.is_empty() {
        return Err(Error::InvalidArgument("no labels to compare".into()));
    }
    let mut cm = ConfusionMatrix::zeros(num_classes);
    for (&t, &p) in true_labels.iter().zip(predicted) {
        for label in [t, p] {
            if label == 0 || label > num_classes {
                return Err(Error::LabelOutOfRange { label, num_classes });
            }
        }
        cm.counts[(t - 1) * num_classes + (p - 1)] += 1;
    }
    Ok(cm)
}

fn nonempty(cm: &ConfusionMatrix) -> Result<u64> {
    match cm.total() {
        0 => Err(Error::InvalidArgument("confusion matrix is empty".into())),
        n => Ok(n),
    }
}

pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let n = nonempty(cm)?;
    Ok(cm.trace() as f64 / n as f64)
}

/// Recall of every class, `None` where the class has no true samples.
pub fn per_class_recall(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    cm.row_sums()
        .iter()
        .enumerate()
        .map(|(i, &r)| (r > 0).then(|| cm.get(i, i) as f64 / r as f64))
        .collect()
}

/// Mean recall over the classes present in the test set. Absent classes are
/// skipped with a warning.
pub fn average_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    nonempty(cm)?;
    let recalls = per_class_recall(cm);
    let absent: Vec<usize> = recalls
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_none())
        .map(|(i, _)| i + 1)
        .collect();
    if !absent.is_empty() {
        log::warn!("classes {absent:?} have no test samples and are left out of AA");
    }
    let present: Vec<f64> = recalls.into_iter().flatten().collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Cohen's kappa, computed from integer marginals:
/// `(n * trace - sum_i r_i c_i) / (n^2 - sum_i r_i c_i)`.
pub fn kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let n = nonempty(cm)? as u128;
    let chance: u128 = cm
        .row_sums()
        .iter()
        .zip(cm.col_sums())
        .map(|(&r, c)| r as u128 * c as u128)
        .sum();
    let agree = n * cm.trace() as u128;
    let denom = n * n - chance;
    if denom == 0 {
        return if agree == n * n {
            Ok(1.0)
        } else {
            Err(Error::Numerical(
                "kappa undefined: chance agreement is 1 but observed agreement is not".into(),
            ))
        };
    }
    Ok((agree as f64 - chance as f64) / denom as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall_accuracy: f64,
    pub average_accuracy: f64,
    pub kappa: f64,
    /// `null` for classes without test samples.
    pub per_class_recall: Vec<Option<f64>>,
    pub test_samples: u64,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(MetricsReport {
            overall_accuracy: overall_accuracy(cm)?,
            average_accuracy: average_accuracy(cm)?,
            kappa: kappa(cm)?,
            per_class_recall: per_class_recall(cm),
            test_samples: cm.total(),
            confusion: cm.rows(),
        })
    }

    pub fn evaluate(true_labels: &[usize], predicted: &[usize], num_classes: usize) -> Result<Self> {
        Self::from_confusion(&confusion(true_labels, predicted, num_classes)?)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::json("metrics report", e))
    }

    pub fn confusion_matrix(&self) -> Result<ConfusionMatrix> {
        ConfusionMatrix::from_rows(&self.confusion)
    }
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for one value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(MeanStd { mean, std, n })
}
