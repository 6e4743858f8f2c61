use std::path::PathBuf;

use tcpconf::classifier::{mc_dropout_confidence, mcp, predict_class, tcp, TrustScore};
use tcpconf::metrics::{confidence_histogram, risk_coverage, summarize};
use tcpconf::nn::layers::shuffled_indices;
use tcpconf::{seeded_rng, EvalRecord};

use super::confidnet::{load_confidnet, variant_dir};
use super::{load_classifier, VariantArgs};
use crate::artifacts::{
    histogram_csv, risk_coverage_csv, write_bytes, write_json, MethodMetrics, MetricsReport,
    ScoreRow, ScoresTable,
};
use crate::config::ExperimentConfig;
use crate::data::load_classification;
use crate::error::CliResult;

/// Column of a method in `scores.csv`.
fn column(method: &str) -> &str {
    if method == "tcp-oracle" {
        "tcp"
    } else {
        method
    }
}

/// Writes `scores.csv`, `metrics.json` and per-method `risk_coverage_<m>.csv`
/// and `histogram_<m>.csv` under `eval-<variant>/`. Methods that cannot run
/// on this model are skipped with a warning.
pub fn evaluate(cfg: &ExperimentConfig, seed: u64, variant: &VariantArgs) -> CliResult<PathBuf> {
    let (classifier, _) = load_classifier(&cfg.run_dir(seed))?;
    let data = load_classification(cfg, seed)?;
    let x = data.test.inputs();
    let labels = data.test.labels();
    let probs = classifier.predict_proba(x)?;
    let predicted: Vec<usize> = probs.rows().into_iter().map(predict_class).collect();
    let mut warnings = Vec::new();
    let mut scored: Vec<(String, Vec<f64>)> = Vec::new();
    for method in &cfg.eval.methods {
        let values: Option<Vec<f64>> = match method.as_str() {
            "mcp" => Some(mcp(probs.view()).to_vec()),
            "tcp-oracle" => Some(tcp(probs.view(), labels)?.to_vec()),
            "confidnet" => {
                let (model, phase) = load_confidnet(&variant_dir(cfg, seed, variant), &classifier)?;
                log::info!("scoring with the {phase} confidence model");
                Some(model.predict_confidence(&classifier, x)?.to_vec())
            }
            "mcdropout" if !classifier.has_dropout() => {
                warnings.push("mcdropout skipped: the classifier has no dropout layer".into());
                None
            }
            "mcdropout" => {
                Some(mc_dropout_confidence(&classifier, x, cfg.eval.mc_passes, seed)?.to_vec())
            }
            "trustscore" => {
                let mut idx = shuffled_indices(data.train.len(), &mut seeded_rng(seed));
                if cfg.eval.trust_max_train > 0 {
                    idx.truncate(cfg.eval.trust_max_train);
                }
                idx.sort_unstable();
                let reference = data.train.subset(&idx);
                match TrustScore::new(
                    classifier.features(reference.inputs())?,
                    reference.labels().to_vec(),
                    data.train.classes(),
                    cfg.eval.trust_k,
                ) {
                    Ok(ts) => Some(
                        ts.score_rows(classifier.features(x)?.view(), &predicted)?
                            .to_vec(),
                    ),
                    Err(e) => {
                        warnings.push(format!("trustscore skipped: {e}"));
                        None
                    }
                }
            }
            other => unreachable!("method `{other}` passed validation"),
        };
        if let Some(v) = values {
            scored.push((method.clone(), v));
        }
    }

    let base: Vec<EvalRecord> = probs
        .rows()
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (p, &y))| EvalRecord::from_probs(i, 0.0, p, y))
        .collect::<tcpconf::Result<_>>()?;
    let errors = base.iter().filter(|r| !r.correct).count();
    if errors == 0 || errors == base.len() {
        warnings.push(format!(
            "{errors} errors among {} samples: detection metrics are absent",
            base.len()
        ));
    }
    let dir = cfg
        .run_dir(seed)
        .join(format!("eval-{}", variant.name(cfg)));
    let mut metrics = Vec::new();
    for (method, values) in &scored {
        let records: Vec<EvalRecord> = base
            .iter()
            .zip(values)
            .map(|(r, &k)| r.with_confidence(k))
            .collect();
        let s = summarize(&records)?;
        metrics.push(MethodMetrics {
            method: method.clone(),
            fpr_at_95_tpr: s.fpr_at_95_tpr,
            aupr: s.aupr,
            auroc: s.auroc,
            aurc: s.aurc,
            e_aurc: s.e_aurc,
        });
        let rc = risk_coverage(&records)?;
        write_bytes(
            &dir.join(format!("risk_coverage_{method}.csv")),
            risk_coverage_csv(&rc.points).as_bytes(),
        )?;
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let hi = if hi > lo { hi } else { lo + 1.0 };
        let bins = confidence_histogram(&records, cfg.eval.histogram_bins, lo, hi)?;
        write_bytes(
            &dir.join(format!("histogram_{method}.csv")),
            histogram_csv(&bins).as_bytes(),
        )?;
    }
    let table = ScoresTable {
        columns: scored.iter().map(|(m, _)| column(m).to_string()).collect(),
        rows: base
            .iter()
            .map(|r| ScoreRow {
                sample_id: r.id,
                true_label: r.label,
                pred_label: r.predicted,
                correct: r.correct,
                scores: scored.iter().map(|(_, v)| v[r.id]).collect(),
            })
            .collect(),
    };
    write_bytes(&dir.join("scores.csv"), table.to_csv().as_bytes())?;
    for w in &warnings {
        log::warn!("{w}");
    }
    write_json(
        &dir.join("metrics.json"),
        &MetricsReport {
            seed,
            confidnet_variant: variant.name(cfg),
            samples: base.len(),
            errors,
            accuracy: (base.len() - errors) as f64 / base.len().max(1) as f64,
            methods: metrics,
            warnings,
        },
    )?;
    Ok(dir)
}
