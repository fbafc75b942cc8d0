//! Evaluation: per-class and macro ROC AUC (rank-based Mann–Whitney with
//! half credit for ties) and the classifier's per-modality weight share.

use crate::error::{Error, Result};
use crate::nn::model::ClassifierParams;

/// Probability that a random positive scores above a random negative, ties
/// counted half. `None` when a class has no positives or no negatives —
/// such classes are skipped by the macro average.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            context: "roc_auc inputs",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::eval("non-finite score"));
    }
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&y| y != 0).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }

    // Average (mid) ranks over tied score groups, 1-based.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j + 2) as f64 / 2.0;
        for &o in &order[i..=j] {
            ranks[o] = mid;
        }
        i = j + 1;
    }

    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y != 0)
        .map(|(r, _)| r)
        .sum();
    let n_pos = n_pos as f64;
    let n_neg = n_neg as f64;
    Ok(Some(
        (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg),
    ))
}

/// Per-class AUC over a score/label matrix laid out as one row per sample.
pub fn per_class_auc(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<Vec<Option<f64>>> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            context: "per_class_auc rows",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let classes = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|row| row.len() != classes)
        || labels.iter().any(|row| row.len() != classes)
    {
        return Err(Error::eval("ragged score or label matrix"));
    }
    let mut out = Vec::with_capacity(classes);
    for c in 0..classes {
        let class_scores: Vec<f64> = scores.iter().map(|row| row[c]).collect();
        let class_labels: Vec<u8> = labels.iter().map(|row| row[c]).collect();
        out.push(roc_auc(&class_scores, &class_labels)?);
    }
    Ok(out)
}

/// Unweighted mean over classes with a defined AUC; errors if every class
/// is degenerate.
pub fn macro_auc(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<f64> {
    macro_from_per_class(&per_class_auc(scores, labels)?)
}

/// Macro average of an already computed per-class vector.
pub fn macro_from_per_class(per_class: &[Option<f64>]) -> Result<f64> {
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::eval(
            "macro AUC undefined: every class lacks positives or negatives",
        ));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// How the classifier's absolute weight mass splits between the image
/// block (first half of the columns) and the text block (second half).
/// The bias vector is excluded. `None` for an all-zero matrix.
pub fn modality_bias(classifier: &ClassifierParams) -> Option<(f64, f64)> {
    let cols = classifier.weight.cols();
    let d = cols / 2;
    let mut img_mass = 0.0;
    let mut total = 0.0;
    for r in 0..classifier.weight.rows() {
        for c in 0..cols {
            let w = classifier.weight.get(r, c).abs();
            total += w;
            if c < d {
                img_mass += w;
            }
        }
    }
    if total == 0.0 {
        return None;
    }
    let img_share = img_mass / total;
    Some((img_share, 1.0 - img_share))
}

/// Per-round record emitted by the experiment loop.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u64,
    pub mode: crate::federation::RunMode,
    pub val_auc: f64,
    pub test_auc: f64,
    /// Test-set per-class AUC; `None` marks classes skipped for lacking
    /// both label values.
    pub per_class_auc: Vec<Option<f64>>,
    pub img_weight_share: f64,
    pub txt_weight_share: f64,
    /// Mean distinct retrieval partners per sample so far (augmenting
    /// modes only).
    pub mean_unique_pairings: Option<f64>,
    pub wall_clock_secs: f64,
}
