//! Files written by the subcommands, with matching readers.
//!
//! JSON reports are pretty-printed with a trailing newline. Floats use the
//! shortest representation that parses back to the same value, so every file
//! round-trips exactly. Absent values are `null` in JSON and empty in CSV.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tcpconf::metrics::{HistogramBin, RiskCoveragePoint};
use tcpconf::selftrain::PrecisionPoint;

use crate::error::{CliError, CliResult};

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::parse(path.display().to_string(), e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_slice(&read_bytes(path)?)
        .map_err(|e| CliError::parse(path.display().to_string(), e))
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn csv_rows(path: &Path, header: &[&str]) -> CliResult<Vec<csv::StringRecord>> {
    let what = || path.display().to_string();
    let bytes = read_bytes(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let found = r.headers().map_err(|e| CliError::parse(what(), e))?.clone();
    if !header.is_empty() && found.iter().ne(header.iter().copied()) {
        return Err(CliError::parse(
            what(),
            format!("expected header {header:?}, found {found:?}"),
        ));
    }
    r.records()
        .map(|rec| rec.map_err(|e| CliError::parse(what(), e)))
        .collect()
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec
        .get(i)
        .ok_or_else(|| CliError::parse(path.display().to_string(), "short row"))?;
    raw.parse()
        .map_err(|e| CliError::parse(path.display().to_string(), format!("`{raw}`: {e}")))
}

fn opt_field(rec: &csv::StringRecord, i: usize, path: &Path) -> CliResult<Option<f64>> {
    match rec.get(i) {
        Some("") => Ok(None),
        _ => field(rec, i, path).map(Some),
    }
}

fn opt_text(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `classifier.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub seed: u64,
    pub dataset: String,
    pub train_rows: usize,
    pub holdout_rows: usize,
    pub test_rows: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Weight digest as 16 hex digits.
    pub checksum: String,
    pub log: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// `confidnet-<variant>/summary.json`: the manifest of a confidence run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidnetReport {
    pub seed: u64,
    pub loss: String,
    pub attachment: String,
    pub hidden: Vec<usize>,
    /// `train` or `validation`.
    pub training_data: String,
    pub rows: usize,
    pub phases: Vec<String>,
    pub encoder_dropout: bool,
    pub phase2_diverged: Option<bool>,
    pub classifier_checksum: String,
    pub classifier_checksum_after: String,
}

/// `confidnet-<variant>/losses.csv`: `phase,epoch,loss`.
pub fn losses_csv(rows: &[(u8, usize, f64)]) -> String {
    csv_text(
        &["phase", "epoch", "loss"],
        rows.iter()
            .map(|(p, e, l)| vec![p.to_string(), e.to_string(), l.to_string()]),
    )
}

pub fn read_losses_csv(path: &Path) -> CliResult<Vec<(u8, usize, f64)>> {
    csv_rows(path, &["phase", "epoch", "loss"])?
        .iter()
        .map(|r| Ok((field(r, 0, path)?, field(r, 1, path)?, field(r, 2, path)?)))
        .collect()
}

/// One row of `scores.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub sample_id: usize,
    pub true_label: usize,
    pub pred_label: usize,
    pub correct: bool,
    /// One value per score column.
    pub scores: Vec<f64>,
}

/// `eval-<variant>/scores.csv`: `sample_id,true_label,pred_label,correct`
/// followed by one column per evaluated method (`tcp` holds the oracle).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoresTable {
    pub columns: Vec<String>,
    pub rows: Vec<ScoreRow>,
}

const SCORE_KEYS: [&str; 4] = ["sample_id", "true_label", "pred_label", "correct"];

impl ScoresTable {
    pub fn to_csv(&self) -> String {
        let header: Vec<&str> = SCORE_KEYS
            .iter()
            .copied()
            .chain(self.columns.iter().map(String::as_str))
            .collect();
        csv_text(
            &header,
            self.rows.iter().map(|r| {
                let mut v = vec![
                    r.sample_id.to_string(),
                    r.true_label.to_string(),
                    r.pred_label.to_string(),
                    u8::from(r.correct).to_string(),
                ];
                v.extend(r.scores.iter().map(f64::to_string));
                v
            }),
        )
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let what = || path.display().to_string();
        let bytes = read_bytes(path)?;
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        let header = r.headers().map_err(|e| CliError::parse(what(), e))?.clone();
        if header.len() < SCORE_KEYS.len() || header.iter().take(4).ne(SCORE_KEYS.iter().copied()) {
            return Err(CliError::parse(
                what(),
                format!("unexpected header {header:?}"),
            ));
        }
        let columns: Vec<String> = header.iter().skip(4).map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| CliError::parse(what(), e))?;
            let correct: u8 = field(&rec, 3, path)?;
            rows.push(ScoreRow {
                sample_id: field(&rec, 0, path)?,
                true_label: field(&rec, 1, path)?,
                pred_label: field(&rec, 2, path)?,
                correct: correct == 1,
                scores: (4..4 + columns.len())
                    .map(|i| field(&rec, i, path))
                    .collect::<CliResult<_>>()?,
            });
        }
        Ok(Self { columns, rows })
    }
}

/// Metrics of one confidence method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub fpr_at_95_tpr: Option<f64>,
    pub aupr: Option<f64>,
    pub auroc: Option<f64>,
    pub aurc: f64,
    pub e_aurc: f64,
}

/// `eval-<variant>/metrics.json`. Values are fractions, not percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub confidnet_variant: String,
    pub samples: usize,
    pub errors: usize,
    pub accuracy: f64,
    pub methods: Vec<MethodMetrics>,
    pub warnings: Vec<String>,
}

/// `risk_coverage_<method>.csv`: `coverage,risk`.
pub fn risk_coverage_csv(points: &[RiskCoveragePoint]) -> String {
    csv_text(
        &["coverage", "risk"],
        points
            .iter()
            .map(|p| vec![p.coverage.to_string(), p.risk.to_string()]),
    )
}

pub fn read_risk_coverage_csv(path: &Path) -> CliResult<Vec<RiskCoveragePoint>> {
    csv_rows(path, &["coverage", "risk"])?
        .iter()
        .map(|r| {
            Ok(RiskCoveragePoint {
                coverage: field(r, 0, path)?,
                risk: field(r, 1, path)?,
            })
        })
        .collect()
}

/// `histogram_<method>.csv`: `lo,hi,correct,errors`.
pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    csv_text(
        &["lo", "hi", "correct", "errors"],
        bins.iter().map(|b| {
            vec![
                b.lo.to_string(),
                b.hi.to_string(),
                b.correct.to_string(),
                b.errors.to_string(),
            ]
        }),
    )
}

pub fn read_histogram_csv(path: &Path) -> CliResult<Vec<HistogramBin>> {
    csv_rows(path, &["lo", "hi", "correct", "errors"])?
        .iter()
        .map(|r| {
            Ok(HistogramBin {
                lo: field(r, 0, path)?,
                hi: field(r, 1, path)?,
                correct: field(r, 2, path)?,
                errors: field(r, 3, path)?,
            })
        })
        .collect()
}

/// `precision_coverage_round<r>.csv`: `quota,coverage,threshold,precision`.
/// The same columns for every method, so curves compare row by row.
pub fn precision_csv(points: &[PrecisionPoint]) -> String {
    csv_text(
        &["quota", "coverage", "threshold", "precision"],
        points.iter().map(|p| {
            vec![
                p.quota.to_string(),
                p.coverage.to_string(),
                p.threshold.to_string(),
                opt_text(p.precision),
            ]
        }),
    )
}

pub fn read_precision_csv(path: &Path) -> CliResult<Vec<PrecisionPoint>> {
    csv_rows(path, &["quota", "coverage", "threshold", "precision"])?
        .iter()
        .map(|r| {
            Ok(PrecisionPoint {
                quota: field(r, 0, path)?,
                coverage: field(r, 1, path)?,
                threshold: field(r, 2, path)?,
                precision: opt_field(r, 3, path)?,
            })
        })
        .collect()
}

/// `selftrain-<method>/round<r>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub method: String,
    pub lambda_adv: Option<f64>,
    pub quota: f64,
    pub coverage: f64,
    /// Confidence of the last selected pixel; `null` when nothing was selected.
    pub threshold: Option<f64>,
    pub precision: Option<f64>,
    pub source_accuracy: f64,
    pub target_accuracy: f64,
    /// Target accuracy of a source-only classifier trained with this round's seed.
    pub paired_source_only_accuracy: f64,
    pub class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    pub seed: u64,
    pub round_seed: u64,
}

/// `selftrain-<method>/summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftrainSummary {
    pub seed: u64,
    pub method: String,
    pub lambda_adv: Option<f64>,
    /// Reference the rounds are compared against.
    pub baseline: String,
    pub baseline_note: String,
    pub source_only_source_accuracy: f64,
    pub source_only_target_accuracy: f64,
    pub rounds: Vec<RoundRecord>,
}

/// Median, minimum and maximum of one quantity across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub artifact: String,
    pub method: String,
    pub metric: String,
    pub seeds: Vec<u64>,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// `<digest>-report.json` in the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub digest: String,
    pub seeds: Vec<u64>,
    pub entries: Vec<Aggregate>,
    pub warnings: Vec<String>,
}
