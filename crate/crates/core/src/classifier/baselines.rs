use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::ClassifierModel;
use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::nn::Mode;
use crate::scalar::{Scalar, PROB_FLOOR};
use crate::seeded_rng;

/// Predicted class; ties go to the lowest index.
pub fn predict_class<T: Scalar>(probs: ArrayView1<'_, T>) -> usize {
    argmax(probs)
}

/// Maximum class probability of each row.
pub fn mcp<T: Scalar>(probs: ArrayView2<'_, T>) -> Array1<T> {
    probs
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().fold(T::neg_infinity(), T::max))
        .collect()
}

/// Probability of the true class of each row.
pub fn tcp<T: Scalar>(probs: ArrayView2<'_, T>, labels: &[usize]) -> Result<Array1<T>> {
    if labels.len() != probs.nrows() {
        return Err(Error::shape(
            "tcp",
            format!("{} labels for {} rows", labels.len(), probs.nrows()),
        ));
    }
    labels
        .iter()
        .zip(probs.rows())
        .map(|(&y, row)| {
            row.get(y).copied().ok_or(Error::LabelOutOfRange {
                label: y,
                classes: row.len(),
            })
        })
        .collect()
}

/// Negated Shannon entropy (natural log) of a probability row.
///
/// Terms are summed in sorted order so the value is exactly invariant under
/// permutations of the row.
pub fn neg_entropy<T: Scalar>(p: ArrayView1<'_, T>) -> T {
    let floor = T::lit(PROB_FLOOR);
    let mut terms: Vec<T> = p
        .iter()
        .filter(|&&v| v > T::zero())
        .map(|&v| v * v.max(floor).ln())
        .collect();
    terms.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    terms.into_iter().fold(T::zero(), |acc, t| acc + t)
}

/// Negated entropy of the softmax averaged over `passes` stochastic forward passes.
pub fn mc_dropout_confidence<T: Scalar>(
    model: &ClassifierModel<T>,
    x: &Array2<T>,
    passes: usize,
    seed: u64,
) -> Result<Array1<T>> {
    if passes == 0 {
        return Err(Error::invalid(
            "passes",
            "need at least one stochastic pass",
        ));
    }
    if !model.has_dropout() {
        return Err(Error::invalid(
            "model",
            "MC Dropout needs at least one dropout layer",
        ));
    }
    let mut rng = seeded_rng(seed);
    let mut mean = Array2::<T>::zeros((x.nrows(), model.classes()));
    for _ in 0..passes {
        for (start, block) in x
            .axis_chunks_iter(ndarray::Axis(0), super::INFER_CHUNK)
            .enumerate()
            .map(|(i, b)| (i * super::INFER_CHUNK, b))
        {
            let p = model.proba_with(&block.to_owned(), &mut Mode::Train(&mut rng))?;
            let mut dst = mean.slice_mut(ndarray::s![start..start + p.nrows(), ..]);
            dst += &p;
        }
    }
    mean.mapv_inplace(|v| v / T::from_usize_lossy(passes));
    Ok(mean.rows().into_iter().map(neg_entropy).collect())
}

/// Scores returned when the predicted class contains the query itself.
pub const TRUST_SCORE_CAP: f64 = 1e6;

/// Ratio of the distance to the closest other class over the distance to the
/// predicted class, in a fixed feature space.
///
/// The distance from a point to a class is the distance to its `k`-th nearest
/// member of that class (`k = 1` is the plain nearest neighbour).
#[derive(Debug, Clone)]
pub struct TrustScore<T> {
    features: Array2<T>,
    labels: Vec<usize>,
    classes: usize,
    k: usize,
}

impl<T: Scalar> TrustScore<T> {
    pub fn new(features: Array2<T>, labels: Vec<usize>, classes: usize, k: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::shape(
                "trust_score",
                format!(
                    "{} feature rows for {} labels",
                    features.nrows(),
                    labels.len()
                ),
            ));
        }
        if k == 0 {
            return Err(Error::invalid("k", "neighbour count must be positive"));
        }
        let mut counts = vec![0usize; classes];
        for &y in &labels {
            *counts
                .get_mut(y)
                .ok_or(Error::LabelOutOfRange { label: y, classes })? += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n < k) {
            return Err(Error::invalid(
                "features",
                format!("class {c} has {} members, need at least {k}", counts[c]),
            ));
        }
        Ok(Self {
            features,
            labels,
            classes,
            k,
        })
    }

    /// Euclidean distance from `x` to each class.
    pub fn class_distances(&self, x: ArrayView1<'_, T>) -> Result<Vec<T>> {
        if x.len() != self.features.ncols() {
            return Err(Error::shape(
                "trust_score",
                format!(
                    "query width {} against features of width {}",
                    x.len(),
                    self.features.ncols()
                ),
            ));
        }
        // Per class, the k smallest squared distances seen so far, ascending.
        let mut best: Vec<Vec<T>> = vec![Vec::with_capacity(self.k + 1); self.classes];
        for (row, &y) in self.features.rows().into_iter().zip(&self.labels) {
            let d2 = row
                .iter()
                .zip(x.iter())
                .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
            let list = &mut best[y];
            if list.len() < self.k || d2 < list[list.len() - 1] {
                let pos = list.partition_point(|&v| v <= d2);
                list.insert(pos, d2);
                list.truncate(self.k);
            }
        }
        Ok(best.iter().map(|l| l[self.k - 1].sqrt()).collect())
    }

    pub fn score(&self, x: ArrayView1<'_, T>, predicted: usize) -> Result<T> {
        if predicted >= self.classes {
            return Err(Error::LabelOutOfRange {
                label: predicted,
                classes: self.classes,
            });
        }
        let d = self.class_distances(x)?;
        let other = d
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != predicted)
            .map(|(_, &v)| v)
            .fold(T::infinity(), T::min);
        let own = d[predicted];
        let cap = T::lit(TRUST_SCORE_CAP);
        if own == T::zero() {
            return Ok(cap);
        }
        Ok((other / own).min(cap))
    }

    pub fn score_rows(&self, x: ArrayView2<'_, T>, predicted: &[usize]) -> Result<Array1<T>> {
        x.rows()
            .into_iter()
            .zip(predicted)
            .map(|(row, &p)| self.score(row, p))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use ndarray::array;

    #[test]
    fn misclassified_score_vector() {
        let p = array![[0.65, 0.34, 0.01]];
        assert_eq!(predict_class(p.row(0)), 0);
        assert_eq!(mcp(p.view())[0], 0.65);
        assert_eq!(tcp(p.view(), &[1]).unwrap()[0], 0.34);
        assert!(tcp(p.view(), &[3]).is_err());
        assert_eq!(mcp(array![[0.0, 1.0]].view())[0], 1.0);
        assert_eq!(mcp(array![[0.25, 0.25, 0.25, 0.25]].view())[0], 0.25);
    }

    #[test]
    fn entropy_properties() {
        let a = neg_entropy(array![0.65, 0.34, 0.01].view());
        let b = neg_entropy(array![0.34, 0.65, 0.01].view());
        assert_eq!(a, b);
        let u = neg_entropy(array![0.25, 0.25, 0.25, 0.25].view());
        assert!((u + 4f64.ln()).abs() < 1e-15);
        assert_eq!(neg_entropy(array![1.0, 0.0].view()), 0.0);
    }

    #[test]
    fn mc_dropout_validation_and_determinism() {
        let plain = ClassifierModel::<f64>::new(3, &[4], 2, None, &mut seeded_rng(0)).unwrap();
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i + j) as f64 * 0.1);
        assert!(mc_dropout_confidence(&plain, &x, 3, 0).is_err());
        let drop = ClassifierModel::<f64>::new(3, &[4], 2, Some(0.5), &mut seeded_rng(0)).unwrap();
        assert!(mc_dropout_confidence(&drop, &x, 0, 0).is_err());
        let a = mc_dropout_confidence(&drop, &x, 7, 11).unwrap();
        assert_eq!(a, mc_dropout_confidence(&drop, &x, 7, 11).unwrap());
        assert!(a.iter().all(|&v| v <= 0.0 && v >= -(2f64.ln()) - 1e-12));
    }

    #[test]
    fn trust_score_cases() {
        let feats = array![[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]];
        let ts = TrustScore::new(feats, vec![0, 1, 1], 2, 1).unwrap();
        // Query on a class-0 point: denominator zero.
        assert_eq!(
            ts.score(array![0.0, 0.0].view(), 0).unwrap(),
            TRUST_SCORE_CAP
        );
        // Equidistant query.
        assert_eq!(ts.score(array![0.5, 0.0].view(), 0).unwrap(), 1.0);
        assert_eq!(ts.score(array![0.5, 7.0].view(), 1).unwrap(), 1.0);
        assert!(TrustScore::new(array![[0.0], [1.0]], vec![0, 0], 2, 1).is_err());
    }

    #[test]
    fn trust_score_matches_exhaustive_scan() {
        let feats: Array2<f64> = array![[0.0, 0.0], [2.0, 1.0], [1.0, 3.0], [4.0, 4.0], [5.0, 0.5]];
        let labels = vec![0, 0, 1, 1, 1];
        let ts = TrustScore::new(feats.clone(), labels.clone(), 2, 1).unwrap();
        let q: Array1<f64> = array![1.5, 1.5];
        let nearest = |class: usize| {
            feats
                .rows()
                .into_iter()
                .zip(&labels)
                .filter(|(_, &y)| y == class)
                .map(|(r, _)| ((r[0] - q[0]).powi(2) + (r[1] - q[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        };
        let expected = nearest(1) / nearest(0);
        assert!((ts.score(q.view(), 0).unwrap() - expected).abs() < 1e-15);
        let ts2 = TrustScore::new(feats, labels, 2, 2).unwrap();
        let d = ts2.class_distances(q.view()).unwrap();
        assert!((d[0] - (1.5f64 * 1.5 * 2.0).sqrt()).abs() < 1e-15);
    }
}
