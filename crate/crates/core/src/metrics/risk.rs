use super::EvalRecord;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskCoveragePoint {
    pub coverage: f64,
    pub risk: f64,
}

/// Empirical risk–coverage curve with one point per accepted prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskCoverage {
    pub points: Vec<RiskCoveragePoint>,
    pub aurc: f64,
    /// Area of the ordering that accepts every correct prediction first.
    pub optimal_aurc: f64,
    pub e_aurc: f64,
}

/// Records are accepted by decreasing confidence, ties by increasing id.
pub fn risk_coverage<T: Scalar>(records: &[EvalRecord<T>]) -> Result<RiskCoverage> {
    if records.is_empty() {
        return Err(Error::invalid(
            "records",
            "risk-coverage needs at least one record",
        ));
    }
    let mut order: Vec<&EvalRecord<T>> = records.iter().collect();
    order.sort_by(|a, b| b.kappa().total_cmp(&a.kappa()).then(a.id.cmp(&b.id)));
    let flags: Vec<bool> = order.iter().map(|r| r.correct).collect();
    let (points, aurc) = prefix_curve(&flags);
    let mut best = flags.clone();
    best.sort_by_key(|&c| !c);
    let (_, optimal_aurc) = prefix_curve(&best);
    Ok(RiskCoverage {
        points,
        aurc,
        optimal_aurc,
        e_aurc: aurc - optimal_aurc,
    })
}

fn prefix_curve(correct_in_order: &[bool]) -> (Vec<RiskCoveragePoint>, f64) {
    let n = correct_in_order.len();
    let mut errors = 0usize;
    let mut total = 0.0;
    let points = correct_in_order
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            errors += usize::from(!c);
            let risk = errors as f64 / (i + 1) as f64;
            total += risk;
            RiskCoveragePoint {
                coverage: (i + 1) as f64 / n as f64,
                risk,
            }
        })
        .collect();
    (points, total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::super::records_from;
    use super::*;

    #[test]
    fn three_record_example() {
        let rc = risk_coverage(&records_from(&[(0.9, true), (0.7, false), (0.5, true)])).unwrap();
        let risks: Vec<f64> = rc.points.iter().map(|p| p.risk).collect();
        assert_eq!(risks, vec![0.0, 0.5, 1.0 / 3.0]);
        assert!((rc.aurc - 5.0 / 18.0).abs() < 1e-15);
        assert!((rc.optimal_aurc - 1.0 / 9.0).abs() < 1e-15);
        assert!((rc.e_aurc - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(rc.points.last().unwrap().coverage, 1.0);
    }

    #[test]
    fn degenerate_cases() {
        let all = risk_coverage(&records_from(&[(0.3, true), (0.1, true)])).unwrap();
        assert_eq!((all.aurc, all.e_aurc), (0.0, 0.0));
        let oracle = risk_coverage(&records_from(&[
            (1.0, true),
            (0.0, false),
            (1.0, true),
            (0.0, false),
        ]))
        .unwrap();
        assert_eq!(oracle.e_aurc, 0.0);
        assert!(risk_coverage::<f64>(&[]).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let a = risk_coverage(&records_from(&[(0.5, false), (0.5, true)])).unwrap();
        assert_eq!(a.points[0].risk, 1.0);
    }
}
