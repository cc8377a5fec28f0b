use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Chunk,
    Song,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub level: Level,
    pub classes: Vec<ClassMetrics>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub total: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_inputs(predictions: &[usize], labels: &[usize], n: usize) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(
            format!("{} predictions", labels.len()),
            predictions.len(),
        ));
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&c| c >= n) {
        return Err(Error::UnknownClass(format!("index {bad} with {n} classes")));
    }
    Ok(())
}

/// Counts with rows = true class, columns = predicted class.
pub fn confusion_matrix(
    predictions: &[usize],
    labels: &[usize],
    vocabulary: &[String],
) -> Result<Vec<Vec<usize>>> {
    let n = vocabulary.len();
    check_inputs(predictions, labels, n)?;
    let mut m = vec![vec![0usize; n]; n];
    for (&p, &t) in predictions.iter().zip(labels) {
        m[t][p] += 1;
    }
    Ok(m)
}

/// Per-class precision, recall and F1 with support-weighted averages.
/// A metric whose denominator is zero is reported as 0.
pub fn classification_report(
    predictions: &[usize],
    labels: &[usize],
    vocabulary: &[String],
    level: Level,
) -> Result<ClassificationReport> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("no samples to report on".into()));
    }
    let m = confusion_matrix(predictions, labels, vocabulary)?;
    let n = vocabulary.len();
    let total = labels.len();
    let mut classes = Vec::with_capacity(n);
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for (c, label) in vocabulary.iter().enumerate() {
        let tp = m[c][c];
        let support: usize = m[c].iter().sum();
        let predicted: usize = (0..n).map(|r| m[r][c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let w = support as f64 / total as f64;
        wp += w * precision;
        wr += w * recall;
        wf += w * f1;
        classes.push(ClassMetrics {
            label: label.clone(),
            precision,
            recall,
            f1,
            support,
        });
    }
    let correct: usize = (0..n).map(|c| m[c][c]).sum();
    Ok(ClassificationReport {
        level,
        classes,
        weighted_precision: wp,
        weighted_recall: wr,
        weighted_f1: wf,
        accuracy: ratio(correct, total),
        total,
    })
}

/// Support-weighted F1 without building a full report. Empty input gives 0.
pub fn weighted_f1(predictions: &[usize], labels: &[usize], n_classes: usize) -> f64 {
    let vocab: Vec<String> = (0..n_classes).map(|i| i.to_string()).collect();
    classification_report(predictions, labels, &vocab, Level::Chunk)
        .map(|r| r.weighted_f1)
        .unwrap_or(0.0)
}

impl ClassificationReport {
    /// Fixed-width table, one row per class plus the weighted average.
    pub fn to_text(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.label.len())
            .max()
            .unwrap_or(0)
            .max("weighted avg".len());
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>width$}  {:>9}  {:>6}  {:>8}  {:>7}",
            "", "precision", "recall", "f1-score", "support"
        );
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:>width$}  {:>9.2}  {:>6.2}  {:>8.2}  {:>7}",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(
            s,
            "{:>width$}  {:>9.2}  {:>6.2}  {:>8.2}  {:>7}",
            "weighted avg",
            self.weighted_precision,
            self.weighted_recall,
            self.weighted_f1,
            self.total
        );
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,precision,recall,f1,support\n");
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{}",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(
            s,
            "weighted avg,{:.6},{:.6},{:.6},{}",
            self.weighted_precision, self.weighted_recall, self.weighted_f1, self.total
        );
        s
    }
}

/// Confusion matrix as CSV with a header row of predicted labels.
pub fn confusion_csv(matrix: &[Vec<usize>], vocabulary: &[String]) -> String {
    let mut s = String::from("true\\pred");
    for v in vocabulary {
        let _ = write!(s, ",{v}");
    }
    s.push('\n');
    for (v, row) in vocabulary.iter().zip(matrix) {
        s.push_str(v);
        for c in row {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
    }
    s
}
