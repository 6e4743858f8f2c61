use ndarray::ArrayView1;

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::{Scalar, PROB_FLOOR};

/// Mean of `−ln max(p[label], 1e-12)` over the rows of a probability matrix.
pub fn cross_entropy<T: Scalar>(g: &mut Graph<T>, probs: Var, labels: &[usize]) -> Result<Var> {
    let picked = g.gather_cols(probs, labels)?;
    let logs = g.log_floor(picked, T::lit(PROB_FLOOR));
    let mean = g.mean(logs)?;
    Ok(g.scale(mean, -T::one()))
}

/// Cross-entropy weighted per row; rows with zero weight are ignored.
/// The result is `Σ wᵢ·(−ln pᵢ) / Σ wᵢ`.
pub fn weighted_cross_entropy<T: Scalar>(
    g: &mut Graph<T>,
    probs: Var,
    labels: &[usize],
    weights: &[T],
) -> Result<Var> {
    if weights.len() != labels.len() {
        return Err(Error::shape(
            "weighted_cross_entropy",
            format!("{} weights for {} labels", weights.len(), labels.len()),
        ));
    }
    let total = weights.iter().fold(T::zero(), |a, &b| a + b);
    if total <= T::zero() {
        return Err(Error::invalid("weights", "total weight must be positive"));
    }
    let picked = g.gather_cols(probs, labels)?;
    let logs = g.log_floor(picked, T::lit(PROB_FLOOR));
    let w = ndarray::Array2::from_shape_vec((weights.len(), 1), weights.to_vec())
        .expect("column shape");
    let wv = g.constant(w);
    let weighted = g.mul(logs, wv)?;
    let sum = g.sum(weighted);
    Ok(g.scale(sum, -T::one() / total))
}

/// Single-sample cross-entropy of a probability row.
pub fn cross_entropy_value<T: Scalar>(probs: ArrayView1<'_, T>, label: usize) -> Result<T> {
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    Ok(-probs[label].max(T::lit(PROB_FLOOR)).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn analytic_values() {
        assert_eq!(
            cross_entropy_value(array![1.0, 0.0, 0.0].view(), 0).unwrap(),
            0.0
        );
        let v = cross_entropy_value(array![0.5, 0.5].view(), 1).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        let v: f64 = cross_entropy_value(array![0.65, 0.34, 0.01].view(), 2).unwrap();
        assert!((v - 4.605170185988091).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            cross_entropy_value(array![0.5, 0.5].view(), 2),
            Err(Error::LabelOutOfRange {
                label: 2,
                classes: 2
            })
        ));
        let mut g = Graph::<f64>::new();
        let p = g.constant(array![[0.5, 0.5]]);
        assert!(cross_entropy(&mut g, p, &[3]).is_err());
    }

    #[test]
    fn graph_matches_value_form() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(array![[0.65, 0.34, 0.01], [0.2, 0.3, 0.5]]);
        let l = cross_entropy(&mut g, p, &[0, 2]).unwrap();
        let expected = (-(0.65f64).ln() - (0.5f64).ln()) / 2.0;
        assert!((g.scalar(l) - expected).abs() < 1e-15);
    }

    #[test]
    fn weighted_ignores_zero_weight_rows() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(array![[0.5, 0.5], [0.9, 0.1]]);
        let l = weighted_cross_entropy(&mut g, p, &[0, 1], &[1.0, 0.0]).unwrap();
        assert!((g.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
