use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Scores and boolean labels for `M` examples over `K` classes or tags.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    scores: Mat,
    labels: Vec<bool>,
}

impl PredictionSet {
    /// `labels` is row-major `M x K`.
    pub fn new(scores: Mat, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != scores.rows() * scores.cols() {
            return Err(Error::invalid(format!(
                "{} labels for a {}x{} score matrix",
                labels.len(),
                scores.rows(),
                scores.cols()
            )));
        }
        if scores.as_slice().iter().any(|s| s.is_nan()) {
            return Err(Error::invalid("scores contain NaN"));
        }
        Ok(PredictionSet { scores, labels })
    }

    /// One-hot labels from class indices.
    pub fn from_classes(scores: Mat, classes: &[usize]) -> Result<Self> {
        if classes.len() != scores.rows() {
            return Err(Error::invalid("one class index per score row is required"));
        }
        let k = scores.cols();
        let mut labels = vec![false; scores.rows() * k];
        for (r, &c) in classes.iter().enumerate() {
            if c >= k {
                return Err(Error::invalid(format!("class {c} out of range for {k} columns")));
            }
            labels[r * k + c] = true;
        }
        PredictionSet::new(scores, labels)
    }

    pub fn n_examples(&self) -> usize {
        self.scores.rows()
    }

    pub fn n_outputs(&self) -> usize {
        self.scores.cols()
    }

    pub fn scores(&self) -> &Mat {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    fn column(&self, k: usize) -> (Vec<f64>, Vec<bool>) {
        let n = self.n_outputs();
        let s = (0..self.n_examples()).map(|r| self.scores[(r, k)]).collect();
        let l = (0..self.n_examples()).map(|r| self.labels[r * n + k]).collect();
        (s, l)
    }
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax is the true class.
pub fn accuracy(preds: &PredictionSet) -> Result<f64> {
    let m = preds.n_examples();
    if m == 0 || preds.n_outputs() == 0 {
        return Err(Error::invalid("accuracy of an empty prediction set"));
    }
    let k = preds.n_outputs();
    let mut correct = 0usize;
    for r in 0..m {
        let labels = &preds.labels[r * k..(r + 1) * k];
        if labels.iter().filter(|&&l| l).count() != 1 {
            return Err(Error::invalid(format!("row {r} does not have exactly one true label")));
        }
        if labels[argmax(preds.scores.row(r))] {
            correct += 1;
        }
    }
    Ok(correct as f64 / m as f64)
}

/// Groups of equal score in descending order, as (positives, negatives).
fn tie_groups(scores: &[f64], labels: &[bool]) -> Vec<(u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut prev: Option<f64> = None;
    for i in order {
        if prev != Some(scores[i]) {
            groups.push((0, 0));
            prev = Some(scores[i]);
        }
        let g = groups.last_mut().unwrap();
        if labels[i] { g.0 += 1 } else { g.1 += 1 }
    }
    groups
}

/// P(score_pos > score_neg) + 0.5 P(tie). `None` when the labels are all one
/// value.
///
/// Pairs are counted exactly in doubled integer units, so the result equals
/// brute-force enumeration bit for bit.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    // Walk from the lowest score upwards.
    let mut below = 0u64;
    let mut doubled = 0u64;
    for (p, n) in tie_groups(scores, labels).into_iter().rev() {
        doubled += p * (2 * below + n);
        below += n;
    }
    Some(doubled as f64 / (2 * pos * neg) as f64)
}

/// Step-wise average precision with tied scores forming one operating point.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return None;
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    for (p, n) in tie_groups(scores, labels) {
        tp += p;
        fp += n;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Some(ap)
}

/// Macro average over scoreable tags, with the skipped ones listed.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroScore {
    pub value: f64,
    pub per_tag: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
}

fn macro_score(preds: &PredictionSet, metric: fn(&[f64], &[bool]) -> Option<f64>) -> Result<MacroScore> {
    let per_tag: Vec<Option<f64>> = (0..preds.n_outputs())
        .map(|k| {
            let (s, l) = preds.column(k);
            metric(&s, &l)
        })
        .collect();
    let scored: Vec<f64> = per_tag.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::invalid("no tag has both positive and negative examples"));
    }
    let skipped = per_tag.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(i, _)| i).collect();
    let value = scored.iter().sum::<f64>() / scored.len() as f64;
    Ok(MacroScore { value, per_tag, skipped })
}

pub fn roc_auc_macro(preds: &PredictionSet) -> Result<MacroScore> {
    macro_score(preds, roc_auc)
}

pub fn pr_auc_macro(preds: &PredictionSet) -> Result<MacroScore> {
    macro_score(preds, average_precision)
}
