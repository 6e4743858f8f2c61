use std::cmp::Ordering;

use super::ConfidenceMap;
use crate::data::GridScene;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How target pixels are chosen for pseudo-labelling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Harvest {
    /// Every pixel with confidence at least `δ`.
    Threshold(f64),
    /// The `round(c·N)` most confident pixels; ties go to the lower pixel index
    /// (scene-major, then row-major).
    Quota(f64),
}

/// Selected target pixels with their predicted labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet<T> {
    pub height: usize,
    pub width: usize,
    /// Per scene, one flag per pixel in row-major order.
    pub masks: Vec<Vec<bool>>,
    /// Per scene, the classifier's predicted class at every pixel.
    pub labels: Vec<Vec<usize>>,
    pub confidences: Vec<ConfidenceMap<T>>,
    /// Selected fraction of all target pixels.
    pub coverage: f64,
    /// Effective threshold `δ`. In quota mode it is the confidence of the last
    /// selected pixel, or `+∞` when nothing is selected.
    pub threshold: T,
}

impl<T: Scalar> PseudoLabelSet<T> {
    pub fn selected(&self) -> usize {
        self.masks.iter().flatten().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.selected() == 0
    }

    /// `(scene, pixel, label)` for every selected pixel.
    pub fn iter_selected(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.masks
            .iter()
            .zip(&self.labels)
            .enumerate()
            .flat_map(|(s, (mask, labels))| {
                mask.iter()
                    .zip(labels)
                    .enumerate()
                    .filter(|(_, (&m, _))| m)
                    .map(move |(p, (_, &y))| (s, p, y))
            })
    }
}

/// Selects confident pixels from per-scene confidence maps and predicted labels.
pub fn harvest_pseudo_labels<T: Scalar>(
    confidences: Vec<ConfidenceMap<T>>,
    predictions: Vec<Vec<usize>>,
    rule: Harvest,
) -> Result<PseudoLabelSet<T>> {
    let (height, width) = confidences
        .first()
        .map(ConfidenceMap::dim)
        .ok_or_else(|| Error::invalid("confidences", "need at least one scene"))?;
    if predictions.len() != confidences.len()
        || confidences
            .iter()
            .zip(&predictions)
            .any(|(c, p)| c.dim() != (height, width) || p.len() != c.len())
    {
        return Err(Error::shape(
            "harvest",
            "one prediction per pixel of equally sized maps is required",
        ));
    }
    let pixels = height * width;
    let total = pixels * confidences.len();
    let flat: Vec<T> = confidences.iter().flat_map(|m| m.iter().copied()).collect();
    let (selected, threshold) = match rule {
        Harvest::Threshold(delta) => {
            if delta.is_nan() {
                return Err(Error::invalid("threshold", "must not be NaN"));
            }
            let d = T::lit(delta);
            (flat.iter().map(|&c| c >= d).collect::<Vec<_>>(), d)
        }
        Harvest::Quota(c) => {
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::invalid("quota", format!("{c} is outside (0, 1]")));
            }
            let n = (c * total as f64).round() as usize;
            let mut order: Vec<usize> = (0..total).collect();
            order.sort_by(|&a, &b| {
                flat[b]
                    .partial_cmp(&flat[a])
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let mut mask = vec![false; total];
            for &i in &order[..n] {
                mask[i] = true;
            }
            let delta = if n == 0 {
                T::infinity()
            } else {
                flat[order[n - 1]]
            };
            (mask, delta)
        }
    };
    let count = selected.iter().filter(|&&m| m).count();
    Ok(PseudoLabelSet {
        height,
        width,
        masks: selected.chunks(pixels).map(<[bool]>::to_vec).collect(),
        labels: predictions,
        confidences,
        coverage: count as f64 / total as f64,
        threshold,
    })
}

/// Fraction of selected pixels whose label matches the ground truth; absent
/// when nothing is selected.
pub fn pseudo_label_precision<T: Scalar>(
    set: &PseudoLabelSet<T>,
    truth: &[GridScene<T>],
) -> Result<Option<f64>> {
    if truth.len() != set.masks.len() || truth.iter().any(|s| s.pixels() != set.height * set.width)
    {
        return Err(Error::shape(
            "pseudo_label_precision",
            "ground truth does not match the selection",
        ));
    }
    let (mut hits, mut seen) = (0usize, 0usize);
    for (s, p, y) in set.iter_selected() {
        seen += 1;
        hits += usize::from(truth[s].labels[p] == y);
    }
    Ok((seen > 0).then(|| hits as f64 / seen as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionPoint {
    /// Requested coverage.
    pub quota: f64,
    pub coverage: f64,
    pub threshold: f64,
    pub precision: Option<f64>,
}

/// Pseudo-label precision at each requested coverage, in quota mode.
pub fn precision_coverage<T: Scalar>(
    confidences: &[ConfidenceMap<T>],
    predictions: &[Vec<usize>],
    truth: &[GridScene<T>],
    quotas: &[f64],
) -> Result<Vec<PrecisionPoint>> {
    quotas
        .iter()
        .map(|&q| {
            let set = harvest_pseudo_labels(
                confidences.to_vec(),
                predictions.to_vec(),
                Harvest::Quota(q),
            )?;
            Ok(PrecisionPoint {
                quota: q,
                coverage: set.coverage,
                threshold: set.threshold.to_f64_lossy(),
                precision: pseudo_label_precision(&set, truth)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn scene(labels: Vec<usize>, h: usize, w: usize) -> GridScene<f64> {
        GridScene::new(h, w, 3, Array2::zeros((h * w, 1)), labels).unwrap()
    }

    #[test]
    fn threshold_extremes() {
        let c = vec![array![[0.1, 0.9], [0.5, 0.3]]];
        let p = vec![vec![0, 1, 2, 0]];
        let all = harvest_pseudo_labels(c.clone(), p.clone(), Harvest::Threshold(0.0)).unwrap();
        assert_eq!(all.coverage, 1.0);
        let none = harvest_pseudo_labels(c.clone(), p.clone(), Harvest::Threshold(0.95)).unwrap();
        assert_eq!(none.coverage, 0.0);
        assert!(none.is_empty());
        assert_eq!(
            pseudo_label_precision(&none, &[scene(vec![0; 4], 2, 2)]).unwrap(),
            None
        );
        let half = harvest_pseudo_labels(c, p, Harvest::Threshold(0.5)).unwrap();
        assert_eq!(half.masks, vec![vec![false, true, true, false]]);
    }

    #[test]
    fn quota_selects_exact_count_with_index_ties() {
        let c = vec![Array2::from_elem((10, 10), 0.5)];
        let p = vec![vec![1; 100]];
        let set = harvest_pseudo_labels(c, p, Harvest::Quota(0.5)).unwrap();
        assert_eq!(set.selected(), 50);
        assert!(set.masks[0][..50].iter().all(|&m| m));
        assert!(set.masks[0][50..].iter().all(|&m| !m));
        assert_eq!(set.threshold, 0.5);
    }

    #[test]
    fn quota_matches_sort_oracle() {
        let vals: Vec<f64> = (0..60).map(|i| ((i * 37) % 17) as f64 / 17.0).collect();
        let c = vec![
            Array2::from_shape_vec((6, 5), vals[..30].to_vec()).unwrap(),
            Array2::from_shape_vec((6, 5), vals[30..].to_vec()).unwrap(),
        ];
        let p = vec![vec![0; 30], vec![0; 30]];
        let set = harvest_pseudo_labels(c, p, Harvest::Quota(0.3)).unwrap();
        let mut idx: Vec<usize> = (0..60).collect();
        idx.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap().then(a.cmp(&b)));
        let chosen: Vec<usize> = set.iter_selected().map(|(s, p, _)| s * 30 + p).collect();
        let mut expected = idx[..18].to_vec();
        expected.sort();
        assert_eq!(chosen, expected);
    }

    #[test]
    fn quota_validation() {
        let c = vec![array![[0.1, 0.2], [0.3, 0.4]]];
        let p = vec![vec![0; 4]];
        for q in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(harvest_pseudo_labels(c.clone(), p.clone(), Harvest::Quota(q)).is_err());
        }
        let tiny = harvest_pseudo_labels(c, p, Harvest::Quota(0.01)).unwrap();
        assert!(tiny.is_empty());
        assert_eq!(tiny.threshold, f64::INFINITY);
    }

    #[test]
    fn full_coverage_precision_is_accuracy() {
        let c = vec![
            array![[0.1, 0.9], [0.5, 0.3]],
            array![[0.2, 0.2], [0.7, 0.6]],
        ];
        let pred = vec![vec![0, 1, 2, 0], vec![1, 1, 1, 1]];
        let truth = vec![scene(vec![0, 1, 1, 0], 2, 2), scene(vec![1, 2, 1, 0], 2, 2)];
        let set = harvest_pseudo_labels(c.clone(), pred.clone(), Harvest::Quota(1.0)).unwrap();
        assert_eq!(
            pseudo_label_precision(&set, &truth).unwrap(),
            Some(5.0 / 8.0)
        );
        let curve = precision_coverage(&c, &pred, &truth, &[0.25, 1.0]).unwrap();
        assert_eq!(curve[0].coverage, 0.25);
        assert_eq!(curve[0].precision, Some(1.0));
        assert_eq!(curve[1].precision, Some(5.0 / 8.0));
    }
}
