use log::{info, warn};
use ndarray::{Array2, Axis};

use super::{
    harvest_pseudo_labels, pseudo_label_precision, tcp_map, train_confidence_adversarial,
    AdvConfig, ConfidenceMap, Harvest, PixelConfidence, PixelScenes, PseudoLabelSet,
};
use crate::classifier::{
    mcp, predict_class, train_classifier_weighted, ClassifierModel, TrainConfig,
};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeded_rng;

/// Source of the per-pixel confidence used to pick pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfidenceMethod {
    /// Maximum class probability of the classifier.
    Mcp,
    /// Learned confidence maps with adversarial source/target alignment.
    Conda(AdvConfig),
    /// True class probability from the target ground truth; an upper bound.
    Oracle,
}

impl ConfidenceMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ConfidenceMethod::Mcp => "mcp",
            ConfidenceMethod::Conda(_) => "conda",
            ConfidenceMethod::Oracle => "tcp-oracle",
        }
    }

    pub fn lambda_adv(&self) -> Option<f64> {
        match self {
            ConfidenceMethod::Conda(c) => Some(c.lambda_adv),
            _ => None,
        }
    }
}

/// Everything a round needs besides the data and the confidence method.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    pub hidden: Vec<usize>,
    pub dropout_keep: Option<f64>,
    pub train: TrainConfig,
    /// Hidden widths of the pixel confidence head.
    pub conf_hidden: Vec<usize>,
    /// Patch scales over the classifier's feature map seen by the confidence head.
    pub conf_scales: Vec<(usize, usize)>,
    /// Fraction of target pixels kept as pseudo-labels.
    pub quota: f64,
    /// Retrain on the sum of the source and pseudo-label mean losses instead
    /// of one mean over the pooled pixels.
    pub balance_domains: bool,
    pub seed: u64,
}

impl RoundConfig {
    /// Seed of the classifier trained in `round`; round 0 is the source-only model.
    pub fn round_seed(&self, round: usize) -> u64 {
        self.seed.wrapping_add(round as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub method: String,
    pub lambda_adv: Option<f64>,
    pub quota: f64,
    pub coverage: f64,
    pub threshold: f64,
    /// Absent when no pixel was selected.
    pub precision: Option<f64>,
    pub source_accuracy: f64,
    pub target_accuracy: f64,
    pub class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    pub seed: u64,
    pub round_seed: u64,
}

fn fresh_classifier<T: Scalar>(
    data: &PixelScenes<T>,
    config: &RoundConfig,
    seed: u64,
) -> Result<ClassifierModel<T>> {
    ClassifierModel::new(
        data.input_width(),
        &config.hidden,
        data.classes(),
        config.dropout_keep,
        &mut seeded_rng(seed),
    )
}

fn train_on<T: Scalar>(
    data: &LabeledDataset<T>,
    weights: Option<&[T]>,
    shape_of: &PixelScenes<T>,
    config: &RoundConfig,
    seed: u64,
) -> Result<ClassifierModel<T>> {
    let model = fresh_classifier(shape_of, config, seed)?;
    let train = TrainConfig {
        seed,
        ..config.train
    };
    Ok(train_classifier_weighted(model, data, weights, &train)?.0)
}

/// Classifier trained on source pixels only, with the round-0 seed.
pub fn source_only<T: Scalar>(
    source: &PixelScenes<T>,
    config: &RoundConfig,
) -> Result<ClassifierModel<T>> {
    source_only_at(source, config, 0)
}

/// Source-only classifier initialised and shuffled exactly like round `round`;
/// the paired baseline for that round's retrained model.
pub fn source_only_at<T: Scalar>(
    source: &PixelScenes<T>,
    config: &RoundConfig,
    round: usize,
) -> Result<ClassifierModel<T>> {
    train_on(
        &source.dataset()?,
        None,
        source,
        config,
        config.round_seed(round),
    )
}

fn predictions<T: Scalar>(
    model: &ClassifierModel<T>,
    set: &PixelScenes<T>,
) -> Result<(Vec<Array2<T>>, Vec<Vec<usize>>)> {
    let mut probs = Vec::with_capacity(set.len());
    let mut labels = Vec::with_capacity(set.len());
    for x in &set.inputs {
        let p = model.predict_proba(x)?;
        labels.push(p.rows().into_iter().map(predict_class).collect());
        probs.push(p);
    }
    Ok((probs, labels))
}

/// Per scene, the predicted class of every pixel.
pub fn predicted_labels<T: Scalar>(
    model: &ClassifierModel<T>,
    set: &PixelScenes<T>,
) -> Result<Vec<Vec<usize>>> {
    Ok(predictions(model, set)?.1)
}

/// Fraction of pixels whose predicted class is the ground truth.
pub fn segmentation_accuracy<T: Scalar>(
    model: &ClassifierModel<T>,
    set: &PixelScenes<T>,
) -> Result<f64> {
    let (_, pred) = predictions(model, set)?;
    let (mut hits, mut total) = (0usize, 0usize);
    for (p, s) in pred.iter().zip(&set.scenes) {
        hits += p.iter().zip(&s.labels).filter(|(a, b)| a == b).count();
        total += p.len();
    }
    Ok(hits as f64 / total.max(1) as f64)
}

/// Intersection over union per class; absent for classes that appear in
/// neither the prediction nor the ground truth.
pub fn class_iou<T: Scalar>(
    model: &ClassifierModel<T>,
    set: &PixelScenes<T>,
) -> Result<Vec<Option<f64>>> {
    let (_, pred) = predictions(model, set)?;
    let k = set.classes();
    let (mut inter, mut union) = (vec![0usize; k], vec![0usize; k]);
    for (p, s) in pred.iter().zip(&set.scenes) {
        for (&a, &b) in p.iter().zip(&s.labels) {
            if a == b {
                inter[a] += 1;
                union[a] += 1;
            } else {
                union[a] += 1;
                union[b] += 1;
            }
        }
    }
    Ok(inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
        .collect())
}

fn mean_present(values: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    present.iter().sum::<f64>() / present.len().max(1) as f64
}

/// Per-pixel confidence maps of `target` under the given method.
pub fn confidence_maps<T: Scalar>(
    model: &ClassifierModel<T>,
    source: &PixelScenes<T>,
    target: &PixelScenes<T>,
    method: &ConfidenceMethod,
    config: &RoundConfig,
) -> Result<Vec<ConfidenceMap<T>>> {
    let (h, w) = (target.height(), target.width());
    match method {
        ConfidenceMethod::Mcp => target
            .inputs
            .iter()
            .map(|x| {
                let conf = mcp(model.predict_proba(x)?.view());
                Ok(conf
                    .into_shape_with_order((h, w))
                    .expect("one value per pixel"))
            })
            .collect(),
        ConfidenceMethod::Oracle => target
            .scenes
            .iter()
            .zip(&target.inputs)
            .map(|(s, x)| tcp_map(model, s, x))
            .collect(),
        ConfidenceMethod::Conda(adv) => {
            let conf = PixelConfidence::new(
                model,
                &config.conf_scales,
                &config.conf_hidden,
                &mut seeded_rng(adv.seed),
            )?;
            let outcome = train_confidence_adversarial(conf, model, source, target, adv)?;
            if outcome.diverged {
                warn!("confidence training diverged; using the last stable confidence model");
            }
            target
                .scenes
                .iter()
                .zip(&target.inputs)
                .map(|(s, x)| outcome.confidence.confidence_map(model, s, x))
                .collect()
        }
    }
}

/// Source pixels plus every selected target pixel labelled with its
/// pseudo-label, and the row weights when domains are balanced.
fn union_dataset<T: Scalar>(
    source: &PixelScenes<T>,
    target: &PixelScenes<T>,
    set: &PseudoLabelSet<T>,
    balance: bool,
) -> Result<(LabeledDataset<T>, Option<Vec<T>>)> {
    let base = source.dataset()?;
    let picked: Vec<(usize, usize, usize)> = set.iter_selected().collect();
    if picked.is_empty() {
        return Ok((base, None));
    }
    let weights = balance.then(|| {
        let ratio = T::from_usize_lossy(base.len()) / T::from_usize_lossy(picked.len());
        let mut w = vec![T::one(); base.len()];
        w.resize(base.len() + picked.len(), ratio);
        w
    });
    let mut inputs = Array2::zeros((picked.len(), target.input_width()));
    let mut labels = base.labels().to_vec();
    for (mut row, &(s, p, y)) in inputs.rows_mut().into_iter().zip(&picked) {
        row.assign(&target.inputs[s].row(p));
        labels.push(y);
    }
    let all = ndarray::concatenate(Axis(0), &[base.inputs().view(), inputs.view()])
        .map_err(|e| Error::shape("union", e.to_string()))?;
    Ok((LabeledDataset::new(all, labels, source.classes())?, weights))
}

/// One self-training round: scores target pixels with `method`, keeps the
/// `quota` most confident as pseudo-labels and retrains a classifier from
/// scratch on source plus pseudo-labelled target pixels.
///
/// `target_train` supplies pseudo-labels and the precision measurement;
/// `target_test` is held out for the accuracy and IoU figures.
pub fn self_training_round<T: Scalar>(
    model: &ClassifierModel<T>,
    source: &PixelScenes<T>,
    target_train: &PixelScenes<T>,
    target_test: &PixelScenes<T>,
    method: &ConfidenceMethod,
    config: &RoundConfig,
    round: usize,
) -> Result<(ClassifierModel<T>, RoundReport, PseudoLabelSet<T>)> {
    if !(0.0..=1.0).contains(&config.quota) {
        return Err(Error::invalid(
            "quota",
            format!("{} is outside [0, 1]", config.quota),
        ));
    }
    if target_train.input_width() != source.input_width()
        || target_train.classes() != source.classes()
    {
        return Err(Error::shape(
            "self_training_round",
            "source and target scenes are incompatible",
        ));
    }
    let maps = confidence_maps(model, source, target_train, method, config)?;
    round_from_maps(
        model,
        source,
        target_train,
        target_test,
        maps,
        method,
        config,
        round,
    )
}

/// [`self_training_round`] with the target confidence maps already computed.
#[allow(clippy::too_many_arguments)]
pub fn round_from_maps<T: Scalar>(
    model: &ClassifierModel<T>,
    source: &PixelScenes<T>,
    target_train: &PixelScenes<T>,
    target_test: &PixelScenes<T>,
    maps: Vec<ConfidenceMap<T>>,
    method: &ConfidenceMethod,
    config: &RoundConfig,
    round: usize,
) -> Result<(ClassifierModel<T>, RoundReport, PseudoLabelSet<T>)> {
    if !(0.0..=1.0).contains(&config.quota) {
        return Err(Error::invalid(
            "quota",
            format!("{} is outside [0, 1]", config.quota),
        ));
    }
    if maps.len() != target_train.len() {
        return Err(Error::shape(
            "round_from_maps",
            format!("{} maps for {} scenes", maps.len(), target_train.len()),
        ));
    }
    let (_, labels) = predictions(model, target_train)?;
    let set = if config.quota == 0.0 {
        warn!("pseudo-label quota is zero; round {round} trains on source pixels only");
        harvest_pseudo_labels(maps, labels, Harvest::Threshold(f64::INFINITY))?
    } else {
        harvest_pseudo_labels(maps, labels, Harvest::Quota(config.quota))?
    };
    if set.is_empty() && config.quota > 0.0 {
        warn!("no pseudo-labels selected; round {round} trains on source pixels only");
    }
    let precision = pseudo_label_precision(&set, &target_train.scenes)?;
    let round_seed = config.round_seed(round);
    let (data, weights) = union_dataset(source, target_train, &set, config.balance_domains)?;
    let next = train_on(&data, weights.as_deref(), source, config, round_seed)?;
    let class_iou = class_iou(&next, target_test)?;
    let report = RoundReport {
        round,
        method: method.name().into(),
        lambda_adv: method.lambda_adv(),
        quota: config.quota,
        coverage: set.coverage,
        threshold: set.threshold.to_f64_lossy(),
        precision,
        source_accuracy: segmentation_accuracy(&next, source)?,
        target_accuracy: segmentation_accuracy(&next, target_test)?,
        mean_iou: mean_present(&class_iou),
        class_iou,
        seed: config.seed,
        round_seed,
    };
    info!(
        "round {round} ({}): coverage {:.3} precision {:?} target accuracy {:.4}",
        report.method, report.coverage, report.precision, report.target_accuracy
    );
    Ok((next, report, set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::OptimizerConfig;
    use crate::selftrain::tests::scenes;
    use crate::selftrain::DEFAULT_SCALES;

    fn config(quota: f64) -> RoundConfig {
        RoundConfig {
            hidden: vec![16],
            dropout_keep: None,
            train: TrainConfig {
                optimizer: OptimizerConfig::adam(0.01),
                epochs: 3,
                batch_size: 64,
                seed: 0,
            },
            conf_hidden: vec![8],
            conf_scales: DEFAULT_SCALES.to_vec(),
            quota,
            balance_domains: true,
            seed: 3,
        }
    }

    #[test]
    fn zero_quota_round_is_source_only() {
        let src = scenes(4, 0.0, 1);
        let tgt = scenes(3, 1.0, 2);
        let cfg = config(0.0);
        let f0 = source_only(&src, &cfg).unwrap();
        let (f1, report, set) =
            self_training_round(&f0, &src, &tgt, &tgt, &ConfidenceMethod::Mcp, &cfg, 1).unwrap();
        assert!(set.is_empty());
        assert_eq!(report.coverage, 0.0);
        assert_eq!(report.precision, None);
        let direct =
            train_on(&src.dataset().unwrap(), None, &src, &cfg, cfg.round_seed(1)).unwrap();
        assert_eq!(f1, direct);
        assert!(self_training_round(
            &f0,
            &src,
            &tgt,
            &tgt,
            &ConfidenceMethod::Mcp,
            &config(1.5),
            1
        )
        .is_err());
        assert_eq!(source_only_at(&src, &cfg, 1).unwrap(), direct);
    }

    #[test]
    fn precomputed_maps_give_the_same_round() {
        let src = scenes(4, 0.0, 1);
        let tgt = scenes(3, 1.0, 2);
        let cfg = config(0.5);
        let f0 = source_only(&src, &cfg).unwrap();
        let direct =
            self_training_round(&f0, &src, &tgt, &tgt, &ConfidenceMethod::Mcp, &cfg, 1).unwrap();
        let maps = confidence_maps(&f0, &src, &tgt, &ConfidenceMethod::Mcp, &cfg).unwrap();
        let reused = round_from_maps(
            &f0,
            &src,
            &tgt,
            &tgt,
            maps.clone(),
            &ConfidenceMethod::Mcp,
            &cfg,
            1,
        )
        .unwrap();
        assert_eq!(direct.0, reused.0);
        assert_eq!(direct.1, reused.1);
        assert!(round_from_maps(
            &f0,
            &src,
            &tgt,
            &tgt,
            maps[..1].to_vec(),
            &ConfidenceMethod::Mcp,
            &cfg,
            1
        )
        .is_err());
    }

    #[test]
    fn oracle_round_reports_consistent_numbers() {
        let src = scenes(4, 0.0, 1);
        let tgt = scenes(3, 1.0, 2);
        let cfg = config(0.5);
        let f0 = source_only(&src, &cfg).unwrap();
        let (_, report, set) =
            self_training_round(&f0, &src, &tgt, &tgt, &ConfidenceMethod::Oracle, &cfg, 1).unwrap();
        assert_eq!(set.selected(), 96);
        assert_eq!(report.coverage, 0.5);
        assert_eq!(report.class_iou.len(), 4);
        assert!((0.0..=1.0).contains(&report.target_accuracy));
    }

    #[test]
    fn full_coverage_precision_equals_target_accuracy() {
        let src = scenes(4, 0.0, 1);
        let tgt = scenes(3, 1.0, 2);
        let cfg = config(1.0);
        let f0 = source_only(&src, &cfg).unwrap();
        let (_, report, _) =
            self_training_round(&f0, &src, &tgt, &tgt, &ConfidenceMethod::Mcp, &cfg, 1).unwrap();
        assert_eq!(
            report.precision,
            Some(segmentation_accuracy(&f0, &tgt).unwrap())
        );
    }

    #[test]
    fn iou_of_perfect_predictions_is_one() {
        let src = scenes(2, 0.0, 1);
        let f = fresh_classifier(&src, &config(0.5), 0).unwrap().freeze();
        let iou = class_iou(&f, &src).unwrap();
        assert!(iou.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert!(mean_present(&[Some(1.0), None, Some(0.5)]) == 0.75);
    }
}
