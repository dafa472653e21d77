//! Confusion matrices and per-class precision / recall / F1 reports.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

/// Rows are true classes, columns are predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let classes = rows.len();
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::shape("confusion matrix must be square"));
        }
        Ok(Self {
            classes,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        (0..self.classes).map(|p| self.get(class, p)).sum()
    }

    fn predicted(&self, class: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, class)).sum()
    }

    /// CSV with a class-name header row and a class-name first column.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("true\\predicted");
        for name in class_names.iter().take(self.classes) {
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for t in 0..self.classes {
            out.push_str(class_names.get(t).map(String::as_str).unwrap_or("?"));
            for p in 0..self.classes {
                let _ = write!(out, ",{}", self.get(t, p));
            }
            out.push('\n');
        }
        out
    }
}

/// Counts `(truth, prediction)` pairs.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &t) in predictions.iter().zip(labels) {
        for index in [p, t] {
            if index >= classes {
                return Err(Error::Range { index, classes });
            }
        }
        cm.counts[t * classes + p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a zero denominator forced one of the values to 0.
    pub ill_defined: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AveragedMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub total: u64,
    pub macro_avg: AveragedMetrics,
    pub weighted_avg: AveragedMetrics,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics_report(cm: &ConfusionMatrix) -> MetricsReport {
    let per_class: Vec<ClassMetrics> = (0..cm.classes())
        .map(|c| {
            let tp = cm.get(c, c);
            let support = cm.support(c);
            let (precision, p_bad) = ratio(tp, cm.predicted(c));
            let (recall, r_bad) = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
                ill_defined: p_bad || r_bad,
            }
        })
        .collect();
    let total = cm.total();
    let n = per_class.len().max(1) as f64;
    let macro_avg = AveragedMetrics {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / n,
        support: total,
    };
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
        }
    };
    let weighted_avg = AveragedMetrics {
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
        support: total,
    };
    MetricsReport {
        accuracy: ratio(cm.trace(), total).0,
        total,
        per_class,
        macro_avg,
        weighted_avg,
    }
}

impl MetricsReport {
    /// Plain-text table: precision, recall, f1-score, support per class, then
    /// accuracy, macro and weighted averages.
    pub fn to_table(&self, class_names: &[String]) -> String {
        let width = class_names.iter().map(String::len).max().unwrap_or(0).max(12);
        let mut out = format!("{:>width$} {:>9} {:>9} {:>9} {:>9}\n\n", "", "precision", "recall", "f1-score", "support");
        for (i, m) in self.per_class.iter().enumerate() {
            let name = class_names.get(i).map(String::as_str).unwrap_or("?");
            let _ = writeln!(
                out,
                "{name:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                m.precision, m.recall, m.f1, m.support
            );
        }
        out.push('\n');
        let _ = writeln!(out, "{:>width$} {:>9} {:>9} {:>9.2} {:>9}", "accuracy", "", "", self.accuracy, self.total);
        for (name, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            let _ = writeln!(
                out,
                "{name:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                a.precision, a.recall, a.f1, a.support
            );
        }
        out
    }

    /// Same rows as [`to_table`](Self::to_table) at full precision.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("class,precision,recall,f1_score,support\n");
        for (i, m) in self.per_class.iter().enumerate() {
            let name = class_names.get(i).map(String::as_str).unwrap_or("?");
            let _ = writeln!(out, "{name},{},{},{},{}", m.precision, m.recall, m.f1, m.support);
        }
        let _ = writeln!(out, "accuracy,,,{},{}", self.accuracy, self.total);
        for (name, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            let _ = writeln!(out, "{name},{},{},{},{}", a.precision, a.recall, a.f1, a.support);
        }
        out
    }
}
