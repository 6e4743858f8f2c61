use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use crate::artifacts::{
    read_json, write_json, Aggregate, AggregateReport, MetricsReport, SelftrainSummary,
};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::stats::median_min_max;

type Key = (String, String, String);

/// Aggregates every `eval-*/metrics.json` and `selftrain-*/summary.json`
/// found in the configured seeds' run directories into
/// `<output_dir>/<digest>-report.json`.
pub fn report(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let mut values: BTreeMap<Key, Vec<(u64, f64)>> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut push = |artifact: &str, method: &str, metric: &str, seed: u64, v: Option<f64>| {
        if let Some(v) = v {
            values
                .entry((artifact.to_string(), method.to_string(), metric.to_string()))
                .or_default()
                .push((seed, v));
        }
    };
    for &seed in &cfg.seeds {
        let run = cfg.run_dir(seed);
        let Ok(entries) = fs::read_dir(&run) else {
            warnings.push(format!(
                "seed {seed}: no run directory at {}",
                run.display()
            ));
            continue;
        };
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for name in names {
            let sub = run.join(&name);
            if name.starts_with("eval-") && sub.join("metrics.json").exists() {
                let m: MetricsReport = read_json(&sub.join("metrics.json"))?;
                push(&name, "-", "accuracy", seed, Some(m.accuracy));
                for mm in &m.methods {
                    push(&name, &mm.method, "fpr_at_95_tpr", seed, mm.fpr_at_95_tpr);
                    push(&name, &mm.method, "aupr", seed, mm.aupr);
                    push(&name, &mm.method, "auroc", seed, mm.auroc);
                    push(&name, &mm.method, "aurc", seed, Some(mm.aurc));
                    push(&name, &mm.method, "e_aurc", seed, Some(mm.e_aurc));
                }
            } else if name.starts_with("selftrain-") && sub.join("summary.json").exists() {
                let s: SelftrainSummary = read_json(&sub.join("summary.json"))?;
                push(
                    &name,
                    "source-only",
                    "target_accuracy",
                    seed,
                    Some(s.source_only_target_accuracy),
                );
                for r in &s.rounds {
                    let round = format!("round{}", r.round);
                    push(
                        &name,
                        &round,
                        "target_accuracy",
                        seed,
                        Some(r.target_accuracy),
                    );
                    push(&name, &round, "precision", seed, r.precision);
                    push(&name, &round, "mean_iou", seed, Some(r.mean_iou));
                    push(
                        &name,
                        &round,
                        "gain_over_paired_source_only",
                        seed,
                        Some(r.target_accuracy - r.paired_source_only_accuracy),
                    );
                }
            }
        }
    }
    if values.is_empty() {
        return Err(CliError::MissingArtifact {
            path: cfg.output_dir.clone(),
            hint: "no evaluation or self-training results for the configured seeds".into(),
        });
    }
    let entries = values
        .into_iter()
        .filter_map(|((artifact, method, metric), pts)| {
            let v: Vec<f64> = pts.iter().map(|p| p.1).collect();
            median_min_max(&v).map(|(median, min, max)| Aggregate {
                artifact,
                method,
                metric,
                seeds: pts.iter().map(|p| p.0).collect(),
                median,
                min,
                max,
            })
        })
        .collect();
    let digest = cfg.digest();
    let path = cfg.output_dir.join(format!("{digest}-report.json"));
    write_json(
        &path,
        &AggregateReport {
            digest,
            seeds: cfg.seeds.clone(),
            entries,
            warnings,
        },
    )?;
    Ok(path)
}
