//! Datasets: MNIST via IDX files, Gaussian blobs, synthetic grid scenes.

pub mod blobs;
pub mod idx;
pub mod io;
pub mod patches;
pub mod scenes;
pub mod split;

pub use blobs::{circle_centers, gen_blobs, BlobSpec};
pub use idx::load_idx;
pub use patches::{extract_multiscale, extract_patches, patches_of};
pub use scenes::{gen_grid_scenes, DomainShift, GridScene, Region, SceneStyle};
pub use split::{split, split_indices, SplitSpec};

use std::fmt;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

/// `N × D` inputs with one class index per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    inputs: Array2<T>,
    labels: Vec<usize>,
    classes: usize,
    pub domain: Domain,
    pub provenance: String,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(inputs: Array2<T>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("{} input rows but {} labels", inputs.nrows(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            domain: Domain::Source,
            provenance: String::new(),
        })
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_provenance(mut self, note: impl Into<String>) -> Self {
        self.provenance = note.into();
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn inputs(&self) -> &Array2<T> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows picked by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            domain: self.domain,
            provenance: self.provenance.clone(),
        }
    }

    pub fn batch(&self, idx: &[usize]) -> (Array2<T>, Vec<usize>) {
        (
            self.inputs.select(Axis(0), idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}
