use tcpconf::data::{
    circle_centers, gen_blobs, gen_grid_scenes, load_idx, split, split_indices, BlobSpec, SplitSpec,
};
use tcpconf::selftrain::PixelScenes;
use tcpconf::{LabeledDataset, Real};

use crate::config::{DatasetConfig, ExperimentConfig, GridSpec};
use crate::error::{CliError, CliResult};

/// Train, optional held-out and test parts of a classification dataset.
#[derive(Debug, Clone)]
pub struct ClassificationData {
    pub name: &'static str,
    pub train: LabeledDataset,
    pub holdout: Option<LabeledDataset>,
    pub test: LabeledDataset,
}

/// Source scenes, target scenes used for pseudo-labels, and held-out target scenes.
#[derive(Debug, Clone)]
pub struct GridDomains {
    pub source: PixelScenes<Real>,
    pub target_train: PixelScenes<Real>,
    pub target_test: PixelScenes<Real>,
}

/// Scenes are generated from `10·seed + {1, 2, 3}` for the three parts.
pub fn grid_domains(spec: &GridSpec, seed: u64) -> CliResult<GridDomains> {
    let style = spec.style();
    let scales = spec.scale_pairs();
    let make = |count: usize,
                shift: &tcpconf::data::DomainShift,
                offset: u64|
     -> CliResult<PixelScenes<Real>> {
        let scenes = gen_grid_scenes(
            count,
            spec.height,
            spec.width,
            &style,
            shift,
            seed.wrapping_mul(10).wrapping_add(offset),
        )?;
        Ok(PixelScenes::new(scenes, &scales)?)
    };
    let shift = spec.shift();
    Ok(GridDomains {
        source: make(spec.source_scenes, &tcpconf::data::DomainShift::none(), 1)?,
        target_train: make(spec.target_scenes, &shift, 2)?,
        target_test: make(spec.test_scenes, &shift, 3)?,
    })
}

fn first(ds: LabeledDataset, limit: Option<usize>) -> LabeledDataset {
    match limit {
        Some(n) if n < ds.len() => ds.subset(&(0..n).collect::<Vec<_>>()),
        _ => ds,
    }
}

fn hold_out(
    ds: LabeledDataset,
    fraction: f64,
    seed: u64,
) -> CliResult<(LabeledDataset, Option<LabeledDataset>)> {
    if fraction == 0.0 {
        return Ok((ds, None));
    }
    let [train, val, _] = split_indices(
        ds.len(),
        &SplitSpec {
            train: 1.0 - fraction,
            val: fraction,
            test: 0.0,
            seed,
        },
    )?;
    Ok((ds.subset(&train), Some(ds.subset(&val))))
}

pub fn load_classification(cfg: &ExperimentConfig, seed: u64) -> CliResult<ClassificationData> {
    match &cfg.dataset {
        DatasetConfig::Mnist {
            dir,
            train_limit,
            test_limit,
            val_split,
        } => {
            let dir = dir
                .as_ref()
                .ok_or_else(|| CliError::config("dataset.dir", "required"))?;
            let load = |images: &str, labels: &str| -> CliResult<LabeledDataset> {
                let (i, l) = (dir.join(images), dir.join(labels));
                for p in [&i, &l] {
                    if !p.exists() {
                        return Err(CliError::config(
                            "dataset.dir",
                            format!("{} does not exist", p.display()),
                        ));
                    }
                }
                Ok(load_idx(&i, &l)?)
            };
            let train = first(
                load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
                *train_limit,
            );
            let test = first(
                load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
                *test_limit,
            );
            let (train, holdout) = hold_out(train, *val_split, seed)?;
            Ok(ClassificationData {
                name: "mnist",
                train,
                holdout,
                test,
            })
        }
        DatasetConfig::Blobs {
            classes,
            dim,
            per_class,
            radius,
            sigma,
            test_fraction,
            val_split,
        } => {
            let all: LabeledDataset = gen_blobs(&BlobSpec {
                per_class: *per_class,
                centers: circle_centers(*classes, *radius, *dim),
                sigma: *sigma,
                seed,
            })?;
            let (train, val, test) = split(
                &all,
                &SplitSpec {
                    train: 1.0 - test_fraction - val_split,
                    val: *val_split,
                    test: *test_fraction,
                    seed,
                },
            )?;
            Ok(ClassificationData {
                name: "blobs",
                train,
                holdout: (*val_split > 0.0).then_some(val),
                test,
            })
        }
        DatasetConfig::Grid(spec) => {
            let d = grid_domains(spec, seed)?;
            Ok(ClassificationData {
                name: "grid",
                train: d.source.dataset()?,
                holdout: None,
                test: d.target_test.dataset()?,
            })
        }
    }
}

/// Fraction of the training data held out for the configured dataset.
pub fn holdout_fraction(cfg: &ExperimentConfig) -> f64 {
    match &cfg.dataset {
        DatasetConfig::Mnist { val_split, .. } | DatasetConfig::Blobs { val_split, .. } => {
            *val_split
        }
        DatasetConfig::Grid(_) => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_split_sizes() {
        let cfg = ExperimentConfig::from_toml(
            "[dataset]\nkind = \"blobs\"\nper_class = 100\nval_split = 0.1\n",
        )
        .unwrap();
        let d = load_classification(&cfg, 1).unwrap();
        assert_eq!(d.test.len(), 90);
        assert_eq!(d.holdout.as_ref().unwrap().len(), 30);
        assert_eq!(d.train.len(), 180);
        let again = load_classification(&cfg, 1).unwrap();
        assert_eq!(d.train.inputs(), again.train.inputs());
    }

    #[test]
    fn missing_mnist_files_name_the_field() {
        let cfg =
            ExperimentConfig::from_toml("[dataset]\nkind = \"mnist\"\ndir = \"/nonexistent\"\n")
                .unwrap();
        match load_classification(&cfg, 0) {
            Err(CliError::Config { field, .. }) => assert_eq!(field, "dataset.dir"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grid_parts_have_requested_sizes() {
        let cfg = ExperimentConfig::from_toml(
            "[dataset]\nkind = \"grid\"\nheight = 8\nwidth = 8\nsource_scenes = 3\ntarget_scenes = 2\ntest_scenes = 1\n",
        )
        .unwrap();
        let DatasetConfig::Grid(spec) = &cfg.dataset else {
            unreachable!()
        };
        let d = grid_domains(spec, 0).unwrap();
        assert_eq!(
            (d.source.len(), d.target_train.len(), d.target_test.len()),
            (3, 2, 1)
        );
        assert_eq!(load_classification(&cfg, 0).unwrap().train.len(), 3 * 64);
    }
}
