use std::path::{Path, PathBuf};

use tcpconf::confidnet::{train_phase1, train_phase2, PhaseConfig};
use tcpconf::{seeded_rng, Checkpoint, ClassifierModel, ConfidenceModel};

use super::{checksum_hex, load_classifier, VariantArgs};
use crate::artifacts::{losses_csv, read_bytes, write_bytes, write_json, ConfidnetReport};
use crate::config::ExperimentConfig;
use crate::data::{holdout_fraction, load_classification};
use crate::error::{CliError, CliResult};

pub(crate) const PHASE1_FILE: &str = "phase1.ckpt";
pub(crate) const PHASE2_FILE: &str = "phase2.ckpt";

/// Seed offset of the confidence head's initialisation.
const HEAD_INIT_SALT: u64 = 0x636f_6e66;

pub fn variant_dir(cfg: &ExperimentConfig, seed: u64, variant: &VariantArgs) -> PathBuf {
    cfg.run_dir(seed)
        .join(format!("confidnet-{}", variant.name(cfg)))
}

/// Writes `phase1.ckpt`, `phase2.ckpt` (when fine-tuning), `losses.csv` and
/// `summary.json` under `confidnet-<variant>/`.
pub fn train_confidnet(
    cfg: &ExperimentConfig,
    seed: u64,
    variant: &VariantArgs,
) -> CliResult<PathBuf> {
    let loss_name = variant
        .loss
        .clone()
        .unwrap_or_else(|| cfg.confidnet.loss.clone());
    let loss = cfg.confidnet.loss_kind(&loss_name).map_err(|_| {
        CliError::Usage(format!(
            "--loss: unknown loss `{loss_name}`; expected mse, bce, focal or ranking"
        ))
    })?;
    let (classifier, ckpt) = load_classifier(&cfg.run_dir(seed))?;
    let data = load_classification(cfg, seed)?;
    let (rows, training_data) = match variant.val_split {
        None => (data.train, "train"),
        Some(f) => {
            let configured = holdout_fraction(cfg);
            let trained_with: Option<f64> = ckpt.meta("val_split").and_then(|v| v.parse().ok());
            if f != configured || trained_with != Some(configured) || f == 0.0 {
                return Err(CliError::config(
                    "dataset.val_split",
                    format!(
                        "--val-split {f} needs a classifier trained with dataset.val_split = {f} \
                         (configured {configured}, checkpoint {trained_with:?})"
                    ),
                ));
            }
            (
                data.holdout.expect("positive holdout fraction"),
                "validation",
            )
        }
    };
    let before = checksum_hex(&classifier);
    let c = &cfg.confidnet;
    let phase1 = PhaseConfig {
        loss,
        optimizer: cfg.train.optimizer_config(c.phase1_lr),
        epochs: c.phase1_epochs,
        batch_size: c.batch_size,
        seed,
        encoder_dropout: c.encoder_dropout,
    };
    let head = ConfidenceModel::new(
        &classifier,
        &c.hidden,
        &mut seeded_rng(seed ^ HEAD_INIT_SALT),
    )?;
    let (model1, log1) = train_phase1(head, &classifier, &rows, &phase1)?;
    let dir = variant_dir(cfg, seed, variant);
    write_bytes(
        &dir.join(PHASE1_FILE),
        &model1.to_checkpoint(seed).to_bytes(),
    )?;
    let mut losses: Vec<(u8, usize, f64)> = log1.iter().map(|s| (1, s.epoch, s.loss)).collect();
    let mut phases = vec!["phase1".to_string()];
    let mut diverged = None;
    if variant.finetune(cfg) {
        let phase2 = PhaseConfig {
            optimizer: cfg.train.optimizer_config(c.phase2_lr),
            epochs: c.phase2_epochs,
            seed: seed.wrapping_add(1),
            encoder_dropout: false,
            ..phase1
        };
        let out = train_phase2(model1, &classifier, &rows, &phase2)?;
        losses.extend(out.log.iter().map(|s| (2, s.epoch, s.loss)));
        write_bytes(
            &dir.join(PHASE2_FILE),
            &out.model.to_checkpoint(seed).to_bytes(),
        )?;
        phases.push("phase2".into());
        diverged = Some(out.diverged);
    }
    write_bytes(&dir.join("losses.csv"), losses_csv(&losses).as_bytes())?;
    let report = ConfidnetReport {
        seed,
        loss: loss_name,
        attachment: c.attachment.clone(),
        hidden: c.hidden.clone(),
        training_data: training_data.into(),
        rows: rows.len(),
        phases,
        encoder_dropout: c.encoder_dropout,
        phase2_diverged: diverged,
        classifier_checksum: before,
        classifier_checksum_after: checksum_hex(&classifier),
    };
    write_json(&dir.join("summary.json"), &report)?;
    Ok(dir)
}

/// The fine-tuned model when present, otherwise the phase-1 model.
pub(crate) fn load_confidnet(
    dir: &Path,
    classifier: &ClassifierModel,
) -> CliResult<(ConfidenceModel, &'static str)> {
    for (file, phase) in [(PHASE2_FILE, "phase2"), (PHASE1_FILE, "phase1")] {
        let path = dir.join(file);
        if path.exists() {
            let ckpt = Checkpoint::from_bytes(&read_bytes(&path)?)?;
            return Ok((ConfidenceModel::from_checkpoint(ckpt, classifier)?, phase));
        }
    }
    Err(CliError::MissingArtifact {
        path: dir.join(PHASE1_FILE),
        hint: "run `tcpconf train-confidnet` with the same config, seed and variant flags first"
            .into(),
    })
}
