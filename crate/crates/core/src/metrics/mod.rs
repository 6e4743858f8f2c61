//! Failure prediction and selective classification metrics.
//!
//! Every metric reads only the confidence `κ` and the correctness flag of each
//! record. Errors are the positive class for detection metrics and the
//! detector score is `−κ`, so a sample with lower confidence is flagged first.
//! All metrics depend on `κ` only through its ordering.

mod ranking;
mod risk;

pub use ranking::{aupr_errors, auroc, fpr_at_95_tpr};
pub use risk::{risk_coverage, RiskCoverage, RiskCoveragePoint};

use ndarray::ArrayView1;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One evaluated sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord<T> {
    pub id: usize,
    /// Confidence rate; higher means more trusted.
    pub confidence: T,
    pub correct: bool,
    pub mcp: T,
    pub tcp: T,
    pub predicted: usize,
    pub label: usize,
}

impl<T: Scalar> EvalRecord<T> {
    /// Builds a record from a probability row; the prediction is the argmax
    /// with ties going to the lowest class index.
    pub fn from_probs(
        id: usize,
        confidence: T,
        probs: ArrayView1<'_, T>,
        label: usize,
    ) -> Result<Self> {
        if label >= probs.len() {
            return Err(Error::LabelOutOfRange {
                label,
                classes: probs.len(),
            });
        }
        let predicted = argmax(probs);
        Ok(Self {
            id,
            confidence,
            correct: predicted == label,
            mcp: probs[predicted],
            tcp: probs[label],
            predicted,
            label,
        })
    }

    /// Same record scored by a different confidence rate.
    pub fn with_confidence(self, confidence: T) -> Self {
        Self { confidence, ..self }
    }

    pub(crate) fn kappa(&self) -> f64 {
        self.confidence.to_f64_lossy()
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax<T: Scalar>(row: ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Outcome of thresholding confidences at `δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Ids of records with `κ ≥ δ`.
    pub accepted: Vec<usize>,
    pub rejected: Vec<usize>,
    pub coverage: f64,
    /// Accuracy among accepted records; absent when nothing is accepted.
    pub selective_accuracy: Option<f64>,
}

/// Selection function: accept iff `κ ≥ δ`.
pub fn select<T: Scalar>(records: &[EvalRecord<T>], threshold: f64) -> Selection {
    let (acc, rej): (Vec<&EvalRecord<T>>, Vec<&EvalRecord<T>>) =
        records.iter().partition(|r| r.kappa() >= threshold);
    let correct = acc.iter().filter(|r| r.correct).count();
    Selection {
        coverage: if records.is_empty() {
            0.0
        } else {
            acc.len() as f64 / records.len() as f64
        },
        selective_accuracy: (!acc.is_empty()).then(|| correct as f64 / acc.len() as f64),
        accepted: acc.iter().map(|r| r.id).collect(),
        rejected: rej.iter().map(|r| r.id).collect(),
    }
}

/// The five headline metrics; detection metrics are absent when one class is missing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub fpr_at_95_tpr: Option<f64>,
    pub aupr: Option<f64>,
    pub auroc: Option<f64>,
    pub aurc: f64,
    pub e_aurc: f64,
}

pub fn summarize<T: Scalar>(records: &[EvalRecord<T>]) -> Result<MetricSummary> {
    let rc = risk_coverage(records)?;
    Ok(MetricSummary {
        fpr_at_95_tpr: fpr_at_95_tpr(records).ok(),
        aupr: aupr_errors(records).ok(),
        auroc: auroc(records).ok(),
        aurc: rc.aurc,
        e_aurc: rc.e_aurc,
    })
}

/// Histogram bin of confidences split by correctness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub correct: usize,
    pub errors: usize,
}

/// `bins` equal-width bins over `[lo, hi]`; values outside are clamped into
/// the edge bins and the last bin is closed on the right.
pub fn confidence_histogram<T: Scalar>(
    records: &[EvalRecord<T>],
    bins: usize,
    lo: f64,
    hi: f64,
) -> Result<Vec<HistogramBin>> {
    if bins == 0 || !(hi > lo) {
        return Err(Error::invalid(
            "histogram",
            format!("{bins} bins over [{lo}, {hi}]"),
        ));
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: lo + b as f64 * width,
            hi: if b + 1 == bins {
                hi
            } else {
                lo + (b + 1) as f64 * width
            },
            correct: 0,
            errors: 0,
        })
        .collect();
    for r in records {
        let k = r.kappa();
        let b = if k.is_nan() {
            0
        } else {
            (((k - lo) / width).floor().max(0.0) as usize).min(bins - 1)
        };
        if r.correct {
            out[b].correct += 1;
        } else {
            out[b].errors += 1;
        }
    }
    Ok(out)
}

/// Mean absolute difference between two normalized histograms of values in `[0, 1]`.
pub fn histogram_distance(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let norm = |xs: &[f64]| {
        let mut h = vec![0.0; bins.max(1)];
        for &x in xs {
            let i = ((x.clamp(0.0, 1.0) * bins as f64) as usize).min(h.len() - 1);
            h[i] += 1.0;
        }
        let n = xs.len().max(1) as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    };
    let (ha, hb) = (norm(a), norm(b));
    ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum::<f64>() / ha.len() as f64
}

/// Errors and successes among the records; detection metrics need both.
pub(crate) fn class_counts<T: Scalar>(
    records: &[EvalRecord<T>],
    metric: &'static str,
) -> Result<(usize, usize)> {
    let errors = records.iter().filter(|r| !r.correct).count();
    let correct = records.len() - errors;
    if errors == 0 || correct == 0 {
        return Err(Error::UndefinedMetric {
            metric,
            reason: format!("{errors} errors and {correct} correct predictions"),
        });
    }
    Ok((errors, correct))
}

/// Distinct confidence levels in ascending order, each with (errors, correct) counts.
pub(crate) fn ascending_groups<T: Scalar>(records: &[EvalRecord<T>]) -> Vec<(usize, usize)> {
    let mut keyed: Vec<(f64, bool)> = records.iter().map(|r| (r.kappa(), r.correct)).collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut last: Option<f64> = None;
    for (k, correct) in keyed {
        if last != Some(k) {
            groups.push((0, 0));
            last = Some(k);
        }
        let g = groups.last_mut().expect("pushed above");
        if correct {
            g.1 += 1;
        } else {
            g.0 += 1;
        }
    }
    groups
}

#[cfg(test)]
pub(crate) fn records_from(pairs: &[(f64, bool)]) -> Vec<EvalRecord<f64>> {
    pairs
        .iter()
        .enumerate()
        .map(|(id, &(k, correct))| EvalRecord {
            id,
            confidence: k,
            correct,
            mcp: k,
            tcp: k,
            predicted: 0,
            label: usize::from(!correct),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn selection_examples() {
        let recs = records_from(&[(0.9, true), (0.8, true), (0.6, false), (0.4, false)]);
        let s = select(&recs, 0.7);
        assert_eq!(s.coverage, 0.5);
        assert_eq!(s.selective_accuracy, Some(1.0));
        assert_eq!(s.accepted, vec![0, 1]);
        let all = select(&recs, f64::NEG_INFINITY);
        assert_eq!((all.coverage, all.selective_accuracy), (1.0, Some(0.5)));
        let none = select(&recs, 0.95);
        assert_eq!((none.coverage, none.selective_accuracy), (0.0, None));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(array![0.65, 0.34, 0.01].view()), 0);
        assert_eq!(argmax(array![0.5, 0.5].view()), 0);
        assert_eq!(argmax(array![0.1, 0.2, 0.7].view()), 2);
    }

    #[test]
    fn record_from_probs() {
        let p = array![0.65, 0.34, 0.01];
        let r = EvalRecord::from_probs(3, 0.65, p.view(), 1).unwrap();
        assert_eq!(
            (r.predicted, r.correct, r.mcp, r.tcp),
            (0, false, 0.65, 0.34)
        );
        assert!(EvalRecord::from_probs(0, 0.5, p.view(), 3).is_err());
    }

    #[test]
    fn histogram_counts() {
        let recs = records_from(&[(0.05, true), (0.5, false), (1.0, true), (0.95, false)]);
        let h = confidence_histogram(&recs, 10, 0.0, 1.0).unwrap();
        assert_eq!(h.len(), 10);
        assert_eq!(
            (h[0].correct, h[5].errors, h[9].correct, h[9].errors),
            (1, 1, 1, 1)
        );
        assert!(confidence_histogram(&recs, 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn histogram_distance_bounds() {
        assert_eq!(histogram_distance(&[0.1, 0.2], &[0.1, 0.2], 10), 0.0);
        assert!((histogram_distance(&[0.05], &[0.95], 10) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn summary_marks_missing_metrics_absent() {
        let recs = records_from(&[(0.9, true), (0.8, true)]);
        let s = summarize(&recs).unwrap();
        assert_eq!((s.auroc, s.aupr, s.fpr_at_95_tpr), (None, None, None));
        assert_eq!((s.aurc, s.e_aurc), (0.0, 0.0));
    }
}
