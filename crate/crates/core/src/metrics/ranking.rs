use super::{ascending_groups, class_counts, EvalRecord};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probability that a random error gets a lower confidence than a random
/// correct prediction, ties counting one half.
pub fn auroc<T: Scalar>(records: &[EvalRecord<T>]) -> Result<f64> {
    let (errors, correct) = class_counts(records, "auroc")?;
    let mut errors_below = 0usize;
    let mut doubled = 0usize;
    for (e, c) in ascending_groups(records) {
        doubled += 2 * c * errors_below + c * e;
        errors_below += e;
    }
    Ok(doubled as f64 / (2 * errors * correct) as f64)
}

/// Average precision for detecting errors, sweeping the threshold upward
/// through the distinct confidence levels.
pub fn aupr_errors<T: Scalar>(records: &[EvalRecord<T>]) -> Result<f64> {
    let errors = records.iter().filter(|r| !r.correct).count();
    if errors == 0 {
        return Err(Error::UndefinedMetric {
            metric: "aupr",
            reason: "no errors to detect".into(),
        });
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for (e, c) in ascending_groups(records) {
        tp += e;
        fp += c;
        if e > 0 {
            ap += (e as f64 / errors as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// False-positive rate at the first threshold whose error recall reaches 95%.
pub fn fpr_at_95_tpr<T: Scalar>(records: &[EvalRecord<T>]) -> Result<f64> {
    let (errors, correct) = class_counts(records, "fpr_at_95_tpr")?;
    let (mut tp, mut fp) = (0usize, 0usize);
    for (e, c) in ascending_groups(records) {
        tp += e;
        fp += c;
        if 20 * tp >= 19 * errors {
            return Ok(fp as f64 / correct as f64);
        }
    }
    unreachable!("the last group flags every error")
}
