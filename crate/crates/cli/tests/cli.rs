use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tcpconf_cli::artifacts::{
    read_histogram_csv, read_json, read_losses_csv, read_precision_csv, read_risk_coverage_csv,
    AggregateReport, ClassifierReport, ConfidnetReport, MetricsReport, RoundRecord, ScoresTable,
    SelftrainSummary,
};
use tcpconf_cli::ExperimentConfig;

fn tcpconf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcpconf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Vec<Value> {
    let out = tcpconf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn failure(args: &[&str]) -> (i32, Value) {
    let out = tcpconf(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    let last = err.lines().last().expect("error line");
    (
        out.status.code().unwrap(),
        serde_json::from_str(last).expect("error JSON"),
    )
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    let text = format!("output_dir = \"{}\"\n{body}", dir.join("runs").display());
    fs::write(&path, text).unwrap();
    path
}

const BLOBS: &str = r#"
seeds = [0, 1]

[dataset]
kind = "blobs"
per_class = 80
sigma = 1.2
val_split = 0.2

[model]
hidden = [16]
dropout_keep = 0.8

[train]
epochs = 4
batch_size = 32
lr = 0.01

[confidnet]
hidden = [16, 8]
phase1_epochs = 4
phase2_epochs = 2
batch_size = 32

[eval]
mc_passes = 5
trust_k = 3
histogram_bins = 5
"#;

const GRID: &str = r#"
seeds = [4]

[dataset]
kind = "grid"
height = 8
width = 8
source_scenes = 6
target_scenes = 4
test_scenes = 3

[model]
hidden = [8]
dropout_keep = 1.0

[train]
epochs = 2
batch_size = 64
lr = 0.01

[selftrain]
conf_hidden = [8]
conf_epochs = 2
disc_hidden = 8
curve_quotas = [0.3, 0.5, 0.7]
"#;

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

#[test]
fn blobs_pipeline_is_complete_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "blobs.toml", BLOBS);
    let c = cfg_path.to_str().unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();

    let out = ok(&["train-classifier", "-c", c]);
    assert_eq!(out.len(), 2);
    let run0 = cfg.run_dir(0);
    assert_eq!(PathBuf::from(out[0]["dir"].as_str().unwrap()), run0);
    let report: ClassifierReport = read_json(&run0.join("classifier.json")).unwrap();
    assert!(report.test_accuracy > 0.5);
    assert_eq!(report.log.len(), 4);
    let first_ckpt = fs::read(run0.join("classifier.ckpt")).unwrap();
    ok(&["train-classifier", "-c", c, "--seed", "0"]);
    assert_eq!(fs::read(run0.join("classifier.ckpt")).unwrap(), first_ckpt);

    ok(&["train-confidnet", "-c", c]);
    for loss in ["bce", "focal", "ranking"] {
        ok(&[
            "train-confidnet",
            "-c",
            c,
            "--seed",
            "0",
            "--loss",
            loss,
            "--no-finetune",
        ]);
        let d = run0.join(format!("confidnet-{loss}-phase1"));
        assert!(d.join("phase1.ckpt").exists());
        assert!(!d.join("phase2.ckpt").exists());
    }
    ok(&[
        "train-confidnet",
        "-c",
        c,
        "--seed",
        "0",
        "--val-split",
        "0.2",
    ]);
    let val: ConfidnetReport = read_json(&run0.join("confidnet-mse-val/summary.json")).unwrap();
    assert_eq!(val.training_data, "validation");
    assert_eq!(val.rows, 48);
    let (code, err) = failure(&[
        "train-confidnet",
        "-c",
        c,
        "--seed",
        "0",
        "--val-split",
        "0.3",
    ]);
    assert_eq!(code, 2);
    assert_eq!(err["error"]["field"], "dataset.val_split");

    let summary: ConfidnetReport = read_json(&run0.join("confidnet-mse/summary.json")).unwrap();
    assert_eq!(summary.phases, vec!["phase1", "phase2"]);
    assert_eq!(summary.attachment, "penultimate");
    assert_eq!(
        summary.classifier_checksum,
        summary.classifier_checksum_after
    );
    assert_eq!(summary.classifier_checksum, report.checksum);
    let losses = read_losses_csv(&run0.join("confidnet-mse/losses.csv")).unwrap();
    assert_eq!(losses.iter().filter(|l| l.0 == 1).count(), 4);
    assert_eq!(losses.iter().filter(|l| l.0 == 2).count(), 2);

    ok(&["eval", "-c", c]);
    let eval_dir = run0.join("eval-mse");
    let snapshot = files(&eval_dir);
    ok(&["eval", "-c", c, "--seed", "0"]);
    assert_eq!(
        files(&eval_dir),
        snapshot,
        "evaluation is not byte-identical"
    );

    let metrics: MetricsReport = read_json(&eval_dir.join("metrics.json")).unwrap();
    let names: Vec<&str> = metrics.methods.iter().map(|m| m.method.as_str()).collect();
    assert_eq!(
        names,
        ["mcp", "tcp-oracle", "confidnet", "mcdropout", "trustscore"]
    );
    let raw: Value = read_json(&eval_dir.join("metrics.json")).unwrap();
    for m in raw["methods"].as_array().unwrap() {
        for key in ["fpr_at_95_tpr", "aupr", "auroc", "aurc", "e_aurc"] {
            assert!(m.get(key).is_some(), "{key} missing");
        }
    }
    let oracle = metrics
        .methods
        .iter()
        .find(|m| m.method == "tcp-oracle")
        .unwrap();
    assert!(oracle.e_aurc.abs() < 1e-12);
    for m in &metrics.methods {
        assert!(
            oracle.e_aurc <= m.e_aurc + 1e-12,
            "{} beats the oracle",
            m.method
        );
    }
    let scores = ScoresTable::read(&eval_dir.join("scores.csv")).unwrap();
    assert_eq!(
        scores.columns,
        ["mcp", "tcp", "confidnet", "mcdropout", "trustscore"]
    );
    assert_eq!(scores.rows.len(), metrics.samples);
    assert_eq!(
        scores.rows.iter().filter(|r| !r.correct).count(),
        metrics.errors
    );
    fs::write(tmp.path().join("copy.csv"), scores.to_csv()).unwrap();
    assert_eq!(
        fs::read(tmp.path().join("copy.csv")).unwrap(),
        fs::read(eval_dir.join("scores.csv")).unwrap()
    );
    for m in &names {
        let rc = read_risk_coverage_csv(&eval_dir.join(format!("risk_coverage_{m}.csv"))).unwrap();
        assert_eq!(rc.len(), metrics.samples);
        let h = read_histogram_csv(&eval_dir.join(format!("histogram_{m}.csv"))).unwrap();
        assert_eq!(
            h.iter().map(|b| b.correct + b.errors).sum::<usize>(),
            metrics.samples
        );
    }

    let out = ok(&["report", "-c", c]);
    let agg: AggregateReport = read_json(Path::new(out[0]["dir"].as_str().unwrap())).unwrap();
    let aupr = agg
        .entries
        .iter()
        .find(|e| e.artifact == "eval-mse" && e.method == "confidnet" && e.metric == "aupr")
        .unwrap();
    assert_eq!(aupr.seeds, vec![0, 1]);
    let aurc = agg
        .entries
        .iter()
        .find(|e| e.artifact == "eval-mse" && e.method == "mcp" && e.metric == "aurc")
        .unwrap();
    assert!(aurc.min <= aurc.median && aurc.median <= aurc.max);
}

#[test]
fn selftrain_outputs_are_comparable_across_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "grid.toml", GRID);
    let c = cfg_path.to_str().unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let run = cfg.run_dir(4);

    ok(&["selftrain", "-c", c, "--method", "mcp", "--rounds", "2"]);
    ok(&["selftrain", "-c", c, "--method", "conda"]);
    ok(&[
        "selftrain",
        "-c",
        c,
        "--method",
        "conda",
        "--lambda-adv",
        "0",
    ]);
    let mcp_dir = run.join("selftrain-mcp");
    let conda_dir = run.join("selftrain-conda-lambda0.001");
    let plain_dir = run.join("selftrain-conda-lambda0");
    for d in [&mcp_dir, &conda_dir, &plain_dir] {
        assert!(d.join("round1.json").exists(), "{}", d.display());
    }
    assert!(mcp_dir.join("round2.json").exists());
    assert!(!conda_dir.join("round2.json").exists());

    let a = read_precision_csv(&mcp_dir.join("precision_coverage_round1.csv")).unwrap();
    let b = read_precision_csv(&conda_dir.join("precision_coverage_round1.csv")).unwrap();
    assert_eq!(
        a.iter().map(|p| p.quota).collect::<Vec<_>>(),
        b.iter().map(|p| p.quota).collect::<Vec<_>>()
    );
    assert_eq!(
        a.iter().map(|p| p.coverage).collect::<Vec<_>>(),
        b.iter().map(|p| p.coverage).collect::<Vec<_>>()
    );

    let s: SelftrainSummary = read_json(&mcp_dir.join("summary.json")).unwrap();
    assert_eq!(s.baseline, "source-only");
    assert_eq!(s.rounds.len(), 2);
    let r1: RoundRecord = read_json(&mcp_dir.join("round1.json")).unwrap();
    assert_eq!(r1, s.rounds[0]);
    assert_eq!(r1.quota, 0.5);
    let plain: RoundRecord = read_json(&plain_dir.join("round1.json")).unwrap();
    assert_eq!(plain.lambda_adv, Some(0.0));
    let maps = tcpconf::selftrain::maps_from_bytes::<f64>(
        &fs::read(conda_dir.join("confidence_maps_round1.bin")).unwrap(),
    )
    .unwrap();
    assert_eq!(maps.len(), 4);
    assert_eq!(maps[0].dim(), (8, 8));

    let snapshot = files(&conda_dir);
    ok(&["selftrain", "-c", c, "--method", "conda"]);
    assert_eq!(
        files(&conda_dir),
        snapshot,
        "self-training is not byte-identical"
    );

    let out = ok(&["report", "-c", c]);
    let agg: AggregateReport = read_json(Path::new(out[0]["dir"].as_str().unwrap())).unwrap();
    assert!(agg.entries.iter().any(|e| e.artifact == "selftrain-mcp"
        && e.method == "round2"
        && e.metric == "target_accuracy"));
}

#[test]
fn failures_emit_error_json() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = write_config(tmp.path(), "mnist.toml", "[dataset]\nkind = \"mnist\"\n");
    let (code, err) = failure(&["train-classifier", "-c", missing.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert_eq!(err["error"]["kind"], "config");
    assert_eq!(err["error"]["field"], "dataset.dir");

    let blobs = write_config(tmp.path(), "blobs.toml", BLOBS);
    let (code, err) = failure(&["eval", "-c", blobs.to_str().unwrap(), "--seed", "0"]);
    assert_eq!(code, 1);
    assert_eq!(err["error"]["kind"], "missing_artifact");

    let (_, err) = failure(&["selftrain", "-c", blobs.to_str().unwrap(), "--seed", "0"]);
    assert_eq!(err["error"]["field"], "dataset.kind");

    let grid = write_config(tmp.path(), "grid.toml", GRID);
    let (code, err) = failure(&[
        "selftrain",
        "-c",
        grid.to_str().unwrap(),
        "--method",
        "entropy",
    ]);
    assert_eq!(code, 2);
    assert_eq!(err["error"]["kind"], "usage");

    let (code, err) = failure(&["train-classifier"]);
    assert_eq!(code, 2);
    assert_eq!(err["error"]["kind"], "usage");

    let (_, err) = failure(&[
        "train-classifier",
        "-c",
        tmp.path().join("absent.toml").to_str().unwrap(),
    ]);
    assert_eq!(err["error"]["kind"], "io");
}
