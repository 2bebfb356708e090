//! Binary classification metrics: accuracy, F1, and tie-aware AUC.
//!
//! AUC uses the mid-rank Mann-Whitney form evaluated in exact integer
//! arithmetic (twice the rank sum stays integral even with ties), so it is
//! bit-identical to brute-force pair counting at any size.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Absent when only one class is present.
    pub auc: Option<f64>,
    pub f1: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Positive class = crossing (label 1); prediction = score >= threshold.
/// F1 of the degenerate no-true-positive case is defined as 0.
pub fn compute_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Metrics> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores against {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Contract("metrics need at least one instance".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Contract(format!(
            "threshold must lie strictly inside (0,1), got {threshold}"
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Contract(format!("non-finite score {s}")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Contract(format!("label must be 0 or 1, got {l}")));
    }

    let n = scores.len();
    let (mut tp, mut fp, mut tn, mut fun) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fun += 1,
            (false, false) => tn += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / n as f64;
    let f1 = if 2 * tp + fp + fun == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fun) as f64
    };

    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = n - n_pos;
    let auc = if n_pos == 0 || n_neg == 0 { None } else { Some(midrank_auc(scores, labels)) };
    Ok(Metrics { accuracy, auc, f1, n_pos, n_neg })
}

/// AUC = (2R - P(P+1)) / (2PN) where R is the rank sum of positives with
/// mid-ranks for ties. 2R is an integer: a tie group spanning ascending
/// 0-based positions [i, j] gives each member twice-rank i + j + 2.
fn midrank_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    let mut r2: u64 = 0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        r2 += pos_in_group * (i as u64 + j as u64 + 2);
        i = j + 1;
    }
    let p = labels.iter().filter(|&&l| l == 1).count() as u64;
    let neg = n as u64 - p;
    (r2 - p * (p + 1)) as f64 / (2 * p * neg) as f64
}
