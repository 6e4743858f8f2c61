use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::layers::shuffled_indices;
use crate::scalar::Scalar;
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::invalid(
                "fractions",
                format!("{parts:?} must lie in [0, 1]"),
            ));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "fractions",
                format!("{parts:?} sum to {total}, not 1"),
            ));
        }
        Ok(())
    }
}

/// Unstratified random partition; validation and test sizes are
/// `round(f·n)`, the training part takes the rest.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    spec.validate()?;
    let n_val = (spec.val * n as f64).round() as usize;
    let n_test = ((spec.test * n as f64).round() as usize).min(n - n_val);
    let n_train = n - n_val - n_test;
    let idx = shuffled_indices(n, &mut seeded_rng(spec.seed));
    Ok([
        idx[..n_train].to_vec(),
        idx[n_train..n_train + n_val].to_vec(),
        idx[n_train + n_val..].to_vec(),
    ])
}

pub fn split<T: Scalar>(
    ds: &LabeledDataset<T>,
    spec: &SplitSpec,
) -> Result<(LabeledDataset<T>, LabeledDataset<T>, LabeledDataset<T>)> {
    let [a, b, c] = split_indices(ds.len(), spec)?;
    Ok((ds.subset(&a), ds.subset(&b), ds.subset(&c)))
}
