use std::path::PathBuf;

use tcpconf::classifier::TrainConfig;
use tcpconf::selftrain::{
    confidence_maps, maps_to_bytes, precision_coverage, predicted_labels, round_from_maps,
    segmentation_accuracy, source_only, source_only_at, ConfidenceMethod, RoundConfig,
};

use super::SelftrainArgs;
use crate::artifacts::{precision_csv, write_bytes, write_json, RoundRecord, SelftrainSummary};
use crate::config::{DatasetConfig, ExperimentConfig, GridSpec};
use crate::data::grid_domains;
use crate::error::{CliError, CliResult};

pub(crate) const BASELINE_NOTE: &str = "source-only training stands in for an unsupervised domain adaptation \
     starting point; each round is also compared with a source-only classifier trained with that round's seed";

/// Round settings shared by every method.
pub fn round_config(cfg: &ExperimentConfig, grid: &GridSpec, seed: u64) -> RoundConfig {
    RoundConfig {
        hidden: cfg.model.hidden.clone(),
        dropout_keep: cfg.model.dropout(),
        train: TrainConfig {
            optimizer: cfg.train.optimizer_config(cfg.train.lr),
            epochs: cfg.train.epochs,
            batch_size: cfg.train.batch_size,
            seed: 0,
        },
        conf_hidden: cfg.selftrain.conf_hidden.clone(),
        conf_scales: grid.scale_pairs(),
        quota: cfg.selftrain.quota,
        balance_domains: cfg.selftrain.balance_domains,
        seed,
    }
}

/// The method for `round`; learned confidence models are seeded per round.
pub fn round_method(
    cfg: &ExperimentConfig,
    rc: &RoundConfig,
    round: usize,
) -> CliResult<ConfidenceMethod> {
    let method = cfg.selftrain_method(&cfg.selftrain.method, cfg.selftrain.lambda_adv)?;
    Ok(match method {
        ConfidenceMethod::Conda(adv) => ConfidenceMethod::Conda(tcpconf::selftrain::AdvConfig {
            seed: rc.round_seed(round),
            ..adv
        }),
        other => other,
    })
}

fn subdir(cfg: &ExperimentConfig) -> String {
    match cfg.selftrain.method.as_str() {
        "conda" => format!("selftrain-conda-lambda{}", cfg.selftrain.lambda_adv),
        m => format!("selftrain-{m}"),
    }
}

/// Writes, per round, `round<r>.json`, `precision_coverage_round<r>.csv` and
/// `confidence_maps_round<r>.bin`, plus `summary.json`, under
/// `selftrain-<method>/`.
pub fn selftrain(
    base: &ExperimentConfig,
    seed: u64,
    overrides: &SelftrainArgs,
) -> CliResult<PathBuf> {
    let cfg = overrides.apply(base)?;
    let DatasetConfig::Grid(grid) = &cfg.dataset else {
        return Err(CliError::config(
            "dataset.kind",
            "self-training needs kind = \"grid\"",
        ));
    };
    let domains = grid_domains(grid, seed)?;
    let rc = round_config(&cfg, grid, seed);
    let dir = base.run_dir(seed).join(subdir(&cfg));
    let mut model = source_only(&domains.source, &rc)?;
    let mut summary = SelftrainSummary {
        seed,
        method: cfg.selftrain.method.clone(),
        lambda_adv: (cfg.selftrain.method == "conda").then_some(cfg.selftrain.lambda_adv),
        baseline: "source-only".into(),
        baseline_note: BASELINE_NOTE.into(),
        source_only_source_accuracy: segmentation_accuracy(&model, &domains.source)?,
        source_only_target_accuracy: segmentation_accuracy(&model, &domains.target_test)?,
        rounds: Vec::new(),
    };
    for round in 1..=cfg.selftrain.rounds {
        let method = round_method(&cfg, &rc, round)?;
        let maps = confidence_maps(&model, &domains.source, &domains.target_train, &method, &rc)?;
        let labels = predicted_labels(&model, &domains.target_train)?;
        let curve = precision_coverage(
            &maps,
            &labels,
            &domains.target_train.scenes,
            &cfg.selftrain.curve_quotas,
        )?;
        write_bytes(
            &dir.join(format!("precision_coverage_round{round}.csv")),
            precision_csv(&curve).as_bytes(),
        )?;
        write_bytes(
            &dir.join(format!("confidence_maps_round{round}.bin")),
            &maps_to_bytes(&maps)?,
        )?;
        let (next, rep, _) = round_from_maps(
            &model,
            &domains.source,
            &domains.target_train,
            &domains.target_test,
            maps,
            &method,
            &rc,
            round,
        )?;
        let paired = source_only_at(&domains.source, &rc, round)?;
        let record = RoundRecord {
            round,
            method: rep.method,
            lambda_adv: rep.lambda_adv,
            quota: rep.quota,
            coverage: rep.coverage,
            threshold: rep.threshold.is_finite().then_some(rep.threshold),
            precision: rep.precision,
            source_accuracy: rep.source_accuracy,
            target_accuracy: rep.target_accuracy,
            paired_source_only_accuracy: segmentation_accuracy(&paired, &domains.target_test)?,
            class_iou: rep.class_iou,
            mean_iou: rep.mean_iou,
            seed: rep.seed,
            round_seed: rep.round_seed,
        };
        write_json(&dir.join(format!("round{round}.json")), &record)?;
        summary.rounds.push(record);
        model = next;
    }
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(dir)
}
