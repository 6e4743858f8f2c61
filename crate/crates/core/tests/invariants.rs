use ndarray::{array, Array2};
use proptest::prelude::*;

use tcpconf::classifier::{mcp, predict_class, tcp};
use tcpconf::data::idx::{decode_pair, encode_dataset};
use tcpconf::data::{split_indices, SplitSpec};
use tcpconf::metrics::{risk_coverage, summarize};
use tcpconf::nn::Activation;
use tcpconf::selftrain::{harvest_pseudo_labels, ConfidenceMap, Harvest};
use tcpconf::{seeded_rng, Checkpoint, EvalRecord, LabeledDataset, Network};

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn record(id: usize, confidence: f64, correct: bool) -> EvalRecord {
    let row = array![0.7, 0.3];
    EvalRecord::from_probs(id, confidence, row.view(), usize::from(!correct)).unwrap()
}

fn records() -> impl Strategy<Value = Vec<(f64, bool)>> {
    prop::collection::vec((0u8..20, any::<bool>()), 2..60)
        .prop_map(|v| v.into_iter().map(|(k, c)| (k as f64 / 20.0, c)).collect())
}

proptest! {
    #[test]
    fn tcp_bounds_decide_correctness(
        rows in prop::collection::vec((prop::collection::vec(-6.0f64..6.0, 2..8), any::<prop::sample::Index>()), 1..30)
    ) {
        for (logits, pick) in rows {
            let k = logits.len();
            let p = softmax(&logits);
            let label = pick.index(k);
            let probs = Array2::from_shape_vec((1, k), p).unwrap();
            let t = tcp(probs.view(), &[label]).unwrap()[0];
            let m = mcp(probs.view())[0];
            let correct = predict_class(probs.row(0)) == label;
            prop_assert!(t <= m);
            if t > 0.5 {
                prop_assert!(correct);
            }
            if t < 1.0 / k as f64 {
                prop_assert!(!correct);
            }
            if correct {
                prop_assert_eq!(t, m);
            }
        }
    }

    #[test]
    fn metrics_ignore_monotone_rescaling(data in records()) {
        let base: Vec<EvalRecord> = data.iter().enumerate().map(|(i, &(k, c))| record(i, k, c)).collect();
        let moved: Vec<EvalRecord> = data
            .iter()
            .enumerate()
            .map(|(i, &(k, c))| record(i, (3.0 * k - 1.0).exp(), c))
            .collect();
        let a = summarize(&base).unwrap();
        let b = summarize(&moved).unwrap();
        let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        };
        prop_assert!(close(a.aupr, b.aupr));
        prop_assert!(close(a.auroc, b.auroc));
        prop_assert!(close(a.fpr_at_95_tpr, b.fpr_at_95_tpr));
        prop_assert!((a.aurc - b.aurc).abs() < 1e-12);
        prop_assert!((a.e_aurc - b.e_aurc).abs() < 1e-12);
    }

    #[test]
    fn correctness_ranking_has_zero_excess_risk(data in records()) {
        let recs: Vec<EvalRecord> = data
            .iter()
            .enumerate()
            .map(|(i, &(k, c))| record(i, if c { 1.0 + k } else { k - 1.0 }, c))
            .collect();
        let rc = risk_coverage(&recs).unwrap();
        prop_assert!(rc.e_aurc.abs() < 1e-12);
        prop_assert!(rc.aurc >= rc.optimal_aurc - 1e-12);
    }

    #[test]
    fn auroc_of_reversed_scores_is_complementary(data in records()) {
        let errors = data.iter().filter(|d| !d.1).count();
        prop_assume!(errors > 0 && errors < data.len());
        let up: Vec<EvalRecord> = data.iter().enumerate().map(|(i, &(k, c))| record(i, k, c)).collect();
        let down: Vec<EvalRecord> = data.iter().enumerate().map(|(i, &(k, c))| record(i, -k, c)).collect();
        let a = summarize(&up).unwrap().auroc.unwrap();
        let b = summarize(&down).unwrap().auroc.unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_harvest_is_exact(
        maps in prop::collection::vec(prop::collection::vec(0u8..10, 6), 1..5),
        delta in 0u8..11,
    ) {
        let delta = delta as f64 / 10.0;
        let conf: Vec<ConfidenceMap<f64>> = maps
            .iter()
            .map(|m| Array2::from_shape_vec((2, 3), m.iter().map(|&v| v as f64 / 10.0).collect()).unwrap())
            .collect();
        let preds = vec![vec![0; 6]; conf.len()];
        let set = harvest_pseudo_labels(conf.clone(), preds, Harvest::Threshold(delta)).unwrap();
        for (s, map) in conf.iter().enumerate() {
            for (p, &c) in map.iter().enumerate() {
                prop_assert_eq!(set.masks[s][p], c >= delta);
            }
        }
    }

    #[test]
    fn quota_harvest_takes_the_top_fraction(
        values in prop::collection::vec(0u8..6, 12..=12),
        quota in 1u8..=10,
    ) {
        let quota = quota as f64 / 10.0;
        let map: ConfidenceMap<f64> = Array2::from_shape_vec((3, 4), values.iter().map(|&v| v as f64).collect()).unwrap();
        let set = harvest_pseudo_labels(vec![map.clone()], vec![vec![1; 12]], Harvest::Quota(quota)).unwrap();
        let chosen: Vec<f64> = map.iter().zip(&set.masks[0]).filter(|(_, &m)| m).map(|(&c, _)| c).collect();
        let left: Vec<f64> = map.iter().zip(&set.masks[0]).filter(|(_, &m)| !m).map(|(&c, _)| c).collect();
        prop_assert_eq!(chosen.len(), (quota * 12.0).round() as usize);
        let lowest = chosen.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(left.iter().all(|&c| c <= lowest));
        prop_assert_eq!(set.threshold, lowest);
    }

    #[test]
    fn idx_round_trip(pixels in prop::collection::vec(any::<u8>(), 12..=12), labels in prop::collection::vec(0usize..10, 3..=3)) {
        let inputs = Array2::from_shape_vec((3, 4), pixels.iter().map(|&p| p as f64 / 255.0).collect()).unwrap();
        let ds = LabeledDataset::new(inputs.clone(), labels.clone(), 10).unwrap();
        let (images, labs) = encode_dataset(&ds, 2, 2).unwrap();
        let back: LabeledDataset = decode_pair(&images, &labs).unwrap();
        prop_assert!(back.inputs().iter().zip(&inputs).all(|(a, b)| (a - b).abs() < 1e-15));
        prop_assert_eq!(back.labels(), labels.as_slice());
        let (images2, labs2) = encode_dataset(&back, 2, 2).unwrap();
        prop_assert_eq!(images2, images);
        prop_assert_eq!(labs2, labs);
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), hidden in 1usize..6, keep in prop::option::of(0.1f64..1.0)) {
        let net: Network = Network::mlp(&[3, hidden, 2], Activation::Relu, Activation::Softmax, keep, &mut seeded_rng(seed)).unwrap();
        let ckpt = Checkpoint::new(seed).with_meta("note", "x=1").with_network("net", net.clone());
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        prop_assert_eq!(back.network("net"), Some(&net));
        prop_assert_eq!(back.meta("note"), Some("x=1"));
        prop_assert_eq!(back.to_bytes(), ckpt.to_bytes());
    }

    #[test]
    fn split_is_a_partition(n in 0usize..300, seed in any::<u64>(), a in 1u8..8, b in 0u8..4) {
        let total = (a + b + 2) as f64;
        let spec = SplitSpec { train: a as f64 / total, val: b as f64 / total, test: 2.0 / total, seed };
        let parts = split_indices(n, &spec).unwrap();
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_indices(n, &spec).unwrap(), parts);
    }
}

#[test]
fn checkpoint_survives_the_filesystem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("model.ckpt");
    let net: Network = Network::mlp(
        &[4, 3, 2],
        Activation::Sigmoid,
        Activation::Softmax,
        Some(0.5),
        &mut seeded_rng(9),
    )
    .unwrap();
    let ckpt = Checkpoint::new(9).with_network("net", net.clone());
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.network("net").unwrap().checksum(), net.checksum());
}
