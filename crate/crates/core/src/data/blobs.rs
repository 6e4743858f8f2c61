use ndarray::Array2;
use rand_distr::{Distribution, Normal};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeded_rng;

/// Isotropic Gaussian clusters, one per class.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub per_class: usize,
    pub centers: Vec<Vec<f64>>,
    pub sigma: f64,
    pub seed: u64,
}

/// `classes` centers spread evenly on a circle of `radius` in the first two
/// coordinates of a `dim`-dimensional space.
pub fn circle_centers(classes: usize, radius: f64, dim: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
            let mut c = vec![0.0; dim.max(2)];
            c[0] = radius * angle.cos();
            c[1] = radius * angle.sin();
            c
        })
        .collect()
}

/// Samples are emitted class by class; each label is its generating cluster.
pub fn gen_blobs<T: Scalar>(spec: &BlobSpec) -> Result<LabeledDataset<T>> {
    let classes = spec.centers.len();
    if classes < 2 {
        return Err(Error::invalid("centers", "need at least two classes"));
    }
    if !(spec.sigma > 0.0 && spec.sigma.is_finite()) {
        return Err(Error::invalid(
            "sigma",
            format!("{} must be positive", spec.sigma),
        ));
    }
    let dim = spec.centers[0].len();
    if dim == 0 || spec.centers.iter().any(|c| c.len() != dim) {
        return Err(Error::invalid(
            "centers",
            "all centers must share a nonzero dimension",
        ));
    }
    let noise = Normal::new(0.0, spec.sigma).expect("sigma validated");
    let mut rng = seeded_rng(spec.seed);
    let n = classes * spec.per_class;
    let mut inputs = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for (k, center) in spec.centers.iter().enumerate() {
        for i in 0..spec.per_class {
            let row = k * spec.per_class + i;
            for (j, c) in center.iter().enumerate() {
                inputs[[row, j]] = T::lit(c + noise.sample(&mut rng));
            }
            labels.push(k);
        }
    }
    Ok(
        LabeledDataset::new(inputs, labels, classes)?.with_provenance(format!(
            "blobs: K={classes} per_class={} sigma={} seed={}",
            spec.per_class, spec.sigma, spec.seed
        )),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let spec = BlobSpec {
            per_class: 20,
            centers: circle_centers(3, 2.0, 4),
            sigma: 0.5,
            seed: 7,
        };
        let a: LabeledDataset<f64> = gen_blobs(&spec).unwrap();
        let b: LabeledDataset<f64> = gen_blobs(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 60);
        assert_eq!(a.width(), 4);
    }

    #[test]
    fn parameter_validation() {
        let mut spec = BlobSpec {
            per_class: 2,
            centers: vec![vec![0.0]],
            sigma: 1.0,
            seed: 0,
        };
        assert!(gen_blobs::<f64>(&spec).is_err());
        spec.centers = vec![vec![0.0], vec![1.0]];
        spec.sigma = 0.0;
        assert!(gen_blobs::<f64>(&spec).is_err());
        spec.sigma = 1.0;
        spec.centers = vec![vec![0.0], vec![1.0, 2.0]];
        assert!(gen_blobs::<f64>(&spec).is_err());
    }

    /// Φ(x) via the complementary error function (Numerical Recipes erfcc,
    /// fractional error below 1.2e-7).
    fn normal_cdf(x: f64) -> f64 {
        let z = -x / std::f64::consts::SQRT_2;
        let t = 1.0 / (1.0 + 0.5 * z.abs());
        let poly = -z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277))))))));
        let erfc = t * poly.exp();
        let erfc = if z >= 0.0 { erfc } else { 2.0 - erfc };
        0.5 * erfc
    }

    #[test]
    fn overlapping_blobs_match_analytic_bayes_error() {
        // Two unit-variance clusters 2 apart: Bayes error Φ(−1) ≈ 0.1587.
        let spec = BlobSpec {
            per_class: 5000,
            centers: vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
            sigma: 1.0,
            seed: 42,
        };
        let ds: LabeledDataset<f64> = gen_blobs(&spec).unwrap();
        let errors = ds
            .inputs()
            .rows()
            .into_iter()
            .zip(ds.labels())
            .filter(|(x, &y)| usize::from(x[0] > 0.0) != y)
            .count();
        let measured = errors as f64 / ds.len() as f64;
        let analytic = normal_cdf(-1.0);
        assert!((analytic - 0.158655).abs() < 1e-5);
        assert!(
            (measured - analytic).abs() < 0.02,
            "{measured} vs {analytic}"
        );
    }
}
