//! Ranking, classification and uncertainty metrics.

use crate::error::{CoreError, Result};
use crate::model::PredictionOutput;

fn split_counts(labels: &[f64]) -> (usize, usize) {
    let p = labels.iter().filter(|&&y| y == 1.0).count();
    (p, labels.len() - p)
}

/// Area under the ROC curve as the Mann–Whitney statistic, computed from
/// midranks in `O(n log n)`. Ties count one half.
pub fn auroc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(CoreError::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let (p, n) = split_counts(labels);
    if p == 0 || n == 0 {
        return Err(CoreError::Metric("AUROC needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CoreError::Metric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positive ranks, doubled so midranks stay integral.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share the midrank (i + j + 2) / 2
        let mid2 = (i + j + 2) as u64;
        let positives = order[i..=j].iter().filter(|&&k| labels[k] == 1.0).count() as u64;
        rank_sum2 += positives * mid2;
        i = j + 1;
    }
    let (p, n) = (p as u64, n as u64);
    // U = R − P(P+1)/2, doubled
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Average precision `Σ_k (R_k − R_{k−1})·P_k` over the descending-score
/// sweep. Equal scores are broken by input order (a stable sort), so every
/// example is its own threshold.
pub fn aupr(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(CoreError::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let (p, _) = split_counts(labels);
    if p == 0 {
        return Err(CoreError::Metric("average precision needs a positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // Each positive raises recall by 1/P, so AP = (Σ precision at positives) / P.
    let mut tp = 0usize;
    let mut precision_sum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1.0 {
            tp += 1;
            precision_sum += tp as f64 / (k + 1) as f64;
        }
    }
    Ok(precision_sum / p as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Classification {
    pub f1: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// No example was predicted positive; precision reported as 0.
    pub precision_undefined: bool,
    /// No positive example exists; recall reported as 0.
    pub recall_undefined: bool,
}

/// Confusion-matrix metrics at `score ≥ threshold`.
pub fn classification_metrics(scores: &[f64], labels: &[f64], threshold: f64) -> Classification {
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    from_counts(tp, fp, tn, fn_)
}

fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Classification {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Classification {
        f1,
        accuracy: ratio(tp + tn, tp + fp + tn + fn_),
        precision,
        recall,
        precision_undefined: tp + fp == 0,
        recall_undefined: tp + fn_ == 0,
    }
}

/// Pearson correlation; errors when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(CoreError::Metric(format!("correlation needs two equal-length series, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CoreError::Metric("correlation of a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson r between predicted variance `exp(s)` and squared error
/// `(p − y)²`.
pub fn uncertainty_error_correlation(predictions: &[PredictionOutput], labels: &[f64]) -> Result<f64> {
    let variance: Vec<f64> = predictions.iter().map(|p| p.variance).collect();
    let sq_err: Vec<f64> = predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| (p.probability - y).powi(2))
        .collect();
    pearson(&variance, &sq_err)
}

/// Macro-averaged one-vs-rest F1 over `classes` labels. Classes absent from
/// both truth and prediction are skipped.
pub fn macro_f1(truth: &[usize], predicted: &[usize], classes: usize) -> f64 {
    let mut total = 0.0;
    let mut counted = 0;
    for c in 0..classes {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        if tp + fp + fn_ == 0 {
            continue;
        }
        total += from_counts(tp, fp, 0, fn_).f1;
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

/// Index of the largest score; the first wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub auroc: f64,
    pub aupr: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub precision_undefined: bool,
    /// `None` when the correlation is undefined (a constant series).
    pub uncertainty_error_correlation: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

impl EvalReport {
    pub fn compute(predictions: &[PredictionOutput], labels: &[f64]) -> Result<Self> {
        let scores: Vec<f64> = predictions.iter().map(|p| p.probability).collect();
        let c = classification_metrics(&scores, labels, 0.5);
        let (positives, negatives) = split_counts(labels);
        Ok(EvalReport {
            auroc: auroc(&scores, labels)?,
            aupr: aupr(&scores, labels)?,
            f1: c.f1,
            accuracy: c.accuracy,
            precision: c.precision,
            recall: c.recall,
            precision_undefined: c.precision_undefined,
            uncertainty_error_correlation: uncertainty_error_correlation(predictions, labels).ok(),
            positives,
            negatives,
        })
    }

    pub fn prevalence(&self) -> f64 {
        self.positives as f64 / (self.positives + self.negatives) as f64
    }

    /// `key=value` lines with round-trippable floats.
    pub fn to_text(&self) -> String {
        let corr = self
            .uncertainty_error_correlation
            .map_or_else(|| "nan".to_string(), |c| format!("{c:?}"));
        format!(
            "auroc={:?}\naupr={:?}\nf1={:?}\naccuracy={:?}\nprecision={:?}\nrecall={:?}\nprecision_undefined={}\nuncertainty_error_correlation={}\npositives={}\nnegatives={}\nprevalence={:?}\n",
            self.auroc,
            self.aupr,
            self.f1,
            self.accuracy,
            self.precision,
            self.recall,
            self.precision_undefined,
            corr,
            self.positives,
            self.negatives,
            self.prevalence()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.3, 0.2], &[1.0, 1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.8, 0.3, 0.2], &[1.0, 0.0, 1.0, 0.0]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.4; 5], &[1.0, 0.0, 1.0, 0.0, 0.0]).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&[0.9, 0.8, 0.3], &[1.0, 1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(aupr(&[0.9, 0.8, 0.3], &[0.0, 1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(aupr(&[0.9, 0.1, 0.3, 0.2], &[1.0, 0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!(aupr(&[0.9], &[0.0]).is_err());
    }

    #[test]
    fn classification_examples() {
        let perfect = classification_metrics(&[0.9, 0.1], &[1.0, 0.0], 0.5);
        assert_eq!((perfect.f1, perfect.accuracy, perfect.precision, perfect.recall), (1.0, 1.0, 1.0, 1.0));
        let none = classification_metrics(&[0.1, 0.2], &[1.0, 0.0], 0.5);
        assert_eq!(none.recall, 0.0);
        assert_eq!(none.precision, 0.0);
        assert!(none.precision_undefined);
        // TP=1, FP=1, FN=1
        let c = classification_metrics(&[0.9, 0.8, 0.1], &[1.0, 0.0, 1.0], 0.5);
        assert_eq!((c.precision, c.recall, c.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 2, 3], &[0, 1, 2, 3], 4), 1.0);
        // always predicting class 0: F1 of class 0 is 2/5, others 0
        let f = macro_f1(&[0, 1, 2, 3], &[0, 0, 0, 0], 4);
        assert!((f - 0.1).abs() < 1e-15);
        assert_eq!(argmax(&[0.2, 0.7, 0.7]), 1);
    }
}
