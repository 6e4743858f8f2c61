use std::path::PathBuf;

use tcpconf::classifier::{train_classifier as fit, TrainConfig};
use tcpconf::{seeded_rng, ClassifierModel};

use super::{checksum_hex, write_resolved_config, CLASSIFIER_FILE};
use crate::artifacts::{write_bytes, write_json, ClassifierReport, EpochRecord};
use crate::config::ExperimentConfig;
use crate::data::{holdout_fraction, load_classification};
use crate::error::CliResult;

/// Writes `classifier.ckpt`, `classifier.json` and the resolved `config.toml`.
pub fn train_classifier(cfg: &ExperimentConfig, seed: u64) -> CliResult<PathBuf> {
    let data = load_classification(cfg, seed)?;
    let model = ClassifierModel::new(
        data.train.width(),
        &cfg.model.hidden,
        data.train.classes(),
        cfg.model.dropout(),
        &mut seeded_rng(seed),
    )?;
    let train = TrainConfig {
        optimizer: cfg.train.optimizer_config(cfg.train.lr),
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        seed,
    };
    let (model, log) = fit(model, &data.train, &train)?;
    let dir = cfg.run_dir(seed);
    let ckpt = model
        .to_checkpoint(seed)
        .with_meta("dataset", data.name)
        .with_meta("val_split", holdout_fraction(cfg));
    write_bytes(&dir.join(CLASSIFIER_FILE), &ckpt.to_bytes())?;
    let report = ClassifierReport {
        seed,
        dataset: data.name.into(),
        train_rows: data.train.len(),
        holdout_rows: data.holdout.as_ref().map_or(0, |h| h.len()),
        test_rows: data.test.len(),
        train_accuracy: model.accuracy(&data.train)?,
        test_accuracy: model.accuracy(&data.test)?,
        checksum: checksum_hex(&model),
        log: log
            .iter()
            .map(|s| EpochRecord {
                epoch: s.epoch,
                loss: s.loss,
                accuracy: Some(s.accuracy),
            })
            .collect(),
    };
    log::info!(
        "classifier seed {seed}: test accuracy {:.4}",
        report.test_accuracy
    );
    write_json(&dir.join("classifier.json"), &report)?;
    write_resolved_config(cfg, &dir)?;
    Ok(dir)
}
