//! Auxiliary confidence model trained to regress the true class probability.
//!
//! Training runs in two phases. Phase 1 fits the head on the frozen
//! classifier's penultimate features. Phase 2 clones the classifier's encoder
//! and fine-tunes it together with the head, with dropout off and a smaller
//! learning rate. The classifier itself is never modified.

mod loss;

pub use loss::{mse, ConfidenceLoss};

use log::{info, warn};
use ndarray::{Array1, Array2, Axis};

use crate::classifier::{predict_class, tcp, ClassifierModel, INFER_CHUNK};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{self, Activation, Checkpoint, Graph, Mode, Network, Optimizer, OptimizerConfig};
use crate::scalar::Scalar;
use crate::{seeded_rng, Rng64};

/// Hidden widths of the default confidence head.
pub const DEFAULT_HEAD: [usize; 2] = [128, 64];

/// Learning-rate factor applied in the fine-tuning phase.
pub const FINETUNE_LR_FACTOR: f64 = 0.1;

/// Which encoder feeds the confidence head.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderRef<T> {
    /// The classifier's own encoder, read-only.
    Shared,
    /// A trainable copy of the classifier's encoder.
    Cloned(Network<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceModel<T> {
    encoder: EncoderRef<T>,
    head: Network<T>,
}

impl<T: Scalar> ConfidenceModel<T> {
    /// Shared-encoder model with a ReLU head of the given hidden widths and a
    /// sigmoid output, attached to the classifier's penultimate layer.
    pub fn new(classifier: &ClassifierModel<T>, hidden: &[usize], rng: &mut Rng64) -> Result<Self> {
        let mut widths = vec![classifier.feature_width()];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let head = Network::mlp(&widths, Activation::Relu, Activation::Sigmoid, None, rng)?;
        Self::from_parts(classifier, EncoderRef::Shared, head)
    }

    pub fn from_parts(
        classifier: &ClassifierModel<T>,
        encoder: EncoderRef<T>,
        head: Network<T>,
    ) -> Result<Self> {
        let expected = classifier.feature_width();
        if head.input_width() != Some(expected) || head.output_width() != Some(1) {
            return Err(Error::shape(
                "confidence head",
                format!(
                    "head maps {:?} to {:?}, attachment point has width {expected}",
                    head.input_width(),
                    head.output_width()
                ),
            ));
        }
        if head.dense().last().map(|d| d.activation) != Some(Activation::Sigmoid) {
            return Err(Error::invalid("head", "last layer must be sigmoid"));
        }
        if let EncoderRef::Cloned(enc) = &encoder {
            if enc.input_width() != Some(classifier.input_width())
                || enc.output_width() != Some(expected)
            {
                return Err(Error::shape(
                    "cloned encoder",
                    "does not match the classifier encoder",
                ));
            }
        }
        Ok(Self { encoder, head })
    }

    pub fn head(&self) -> &Network<T> {
        &self.head
    }

    pub fn encoder(&self) -> &EncoderRef<T> {
        &self.encoder
    }

    pub fn is_cloned(&self) -> bool {
        matches!(self.encoder, EncoderRef::Cloned(_))
    }

    /// Eval-mode features feeding the head.
    pub fn features(&self, classifier: &ClassifierModel<T>, x: &Array2<T>) -> Result<Array2<T>> {
        match &self.encoder {
            EncoderRef::Shared => classifier.features(x),
            EncoderRef::Cloned(enc) => enc.predict(x, INFER_CHUNK),
        }
    }

    /// Confidence in `[0, 1]` for each row of `x`.
    pub fn predict_confidence(
        &self,
        classifier: &ClassifierModel<T>,
        x: &Array2<T>,
    ) -> Result<Array1<T>> {
        let out = self
            .head
            .predict(&self.features(classifier, x)?, INFER_CHUNK)?;
        Ok(out.index_axis_move(Axis(1), 0))
    }

    /// Switches to a trainable copy of the classifier's encoder; outputs are unchanged.
    pub fn clone_encoder(mut self, classifier: &ClassifierModel<T>) -> Self {
        if let EncoderRef::Shared = self.encoder {
            let mut enc = classifier.encoder().clone();
            enc.set_trainable(true);
            self.encoder = EncoderRef::Cloned(enc);
        }
        self
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint<T> {
        let mut ckpt = Checkpoint::new(seed)
            .with_meta("model", "confidnet")
            .with_meta(
                "encoder",
                if self.is_cloned() { "cloned" } else { "shared" },
            )
            .with_meta("attachment_width", self.head.input_width().unwrap_or(0))
            .with_network("head", self.head.clone());
        if let EncoderRef::Cloned(enc) = &self.encoder {
            ckpt = ckpt.with_network("encoder", enc.clone());
        }
        ckpt
    }

    /// Restores a model saved with [`Self::to_checkpoint`] for this classifier.
    pub fn from_checkpoint(
        mut ckpt: Checkpoint<T>,
        classifier: &ClassifierModel<T>,
    ) -> Result<Self> {
        let head = ckpt.take_network("head").ok_or_else(|| Error::Format {
            what: "confidence checkpoint",
            reason: "missing network `head`".into(),
        })?;
        let encoder = match ckpt.take_network("encoder") {
            Some(enc) => EncoderRef::Cloned(enc),
            None => EncoderRef::Shared,
        };
        Self::from_parts(classifier, encoder, head)
    }
}

/// True-class probability of each sample under the frozen classifier.
pub fn tcp_targets<T: Scalar>(
    classifier: &ClassifierModel<T>,
    x: &Array2<T>,
    labels: &[usize],
) -> Result<Array1<T>> {
    if !classifier.is_frozen() {
        return Err(Error::invalid("classifier", "must be frozen"));
    }
    tcp(classifier.predict_proba(x)?.view(), labels)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseConfig {
    pub loss: ConfidenceLoss,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Run the shared encoder's dropout in training mode during phase 1.
    pub encoder_dropout: bool,
}

impl PhaseConfig {
    /// Fine-tuning settings derived from a phase-1 configuration.
    pub fn finetune(&self, epochs: usize) -> Self {
        Self {
            optimizer: self
                .optimizer
                .with_lr(self.optimizer.lr * FINETUNE_LR_FACTOR),
            epochs,
            seed: self.seed.wrapping_add(1),
            encoder_dropout: false,
            ..*self
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseStats {
    pub epoch: usize,
    pub loss: f64,
}

/// Result of the fine-tuning phase.
#[derive(Debug, Clone)]
pub struct FinetuneOutcome<T> {
    pub model: ConfidenceModel<T>,
    pub log: Vec<PhaseStats>,
    /// Set when training diverged; `model` then holds the phase-1 weights.
    pub diverged: bool,
}

struct Targets<T> {
    tcp: Vec<T>,
    success: Vec<bool>,
}

fn targets<T: Scalar>(
    classifier: &ClassifierModel<T>,
    data: &LabeledDataset<T>,
) -> Result<Targets<T>> {
    if !classifier.is_frozen() {
        return Err(Error::invalid(
            "classifier",
            "must be frozen before confidence training",
        ));
    }
    if data.width() != classifier.input_width() {
        return Err(Error::shape(
            "confidence training",
            format!(
                "data width {} vs classifier input {}",
                data.width(),
                classifier.input_width()
            ),
        ));
    }
    let probs = classifier.predict_proba(data.inputs())?;
    Ok(Targets {
        tcp: tcp(probs.view(), data.labels())?.to_vec(),
        success: probs
            .rows()
            .into_iter()
            .zip(data.labels())
            .map(|(p, &y)| predict_class(p) == y)
            .collect(),
    })
}

fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Phase 1: trains only the head on the shared, frozen encoder.
pub fn train_phase1<T: Scalar>(
    mut model: ConfidenceModel<T>,
    classifier: &ClassifierModel<T>,
    data: &LabeledDataset<T>,
    config: &PhaseConfig,
) -> Result<(ConfidenceModel<T>, Vec<PhaseStats>)> {
    config.validate()?;
    if model.is_cloned() {
        return Err(Error::invalid("model", "phase 1 expects a shared encoder"));
    }
    let t = targets(classifier, data)?;
    let stochastic = config.encoder_dropout && classifier.encoder().has_dropout();
    let fixed = if stochastic {
        None
    } else {
        Some(classifier.features(data.inputs())?)
    };
    let mut rng = seeded_rng(config.seed);
    let mut opt = Optimizer::new(config.optimizer);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for batch in nn::minibatches(data.len(), config.batch_size, &mut rng) {
            let (feats, tcp_b, success_b) = match &fixed {
                Some(f) => (
                    f.select(Axis(0), &batch),
                    pick(&t.tcp, &batch),
                    pick(&t.success, &batch),
                ),
                None => {
                    // Targets come from the same stochastic pass the head sees.
                    let (x, y) = data.batch(&batch);
                    let h = classifier.encoder().infer(&x, &mut Mode::Train(&mut rng))?;
                    let probs = classifier.head().infer(&h, &mut Mode::Eval)?;
                    let success = probs
                        .rows()
                        .into_iter()
                        .zip(&y)
                        .map(|(p, &l)| predict_class(p) == l)
                        .collect();
                    (h, tcp(probs.view(), &y)?.to_vec(), success)
                }
            };
            let mut g = Graph::new();
            let bh = model.head.bind(&mut g);
            let xv = g.constant(feats);
            let c = model.head.forward(&mut g, &bh, xv, &mut Mode::Eval)?;
            let loss = config.loss.apply(&mut g, c, &tcp_b, &success_b)?;
            let value = g.scalar(loss).to_f64_lossy();
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("confidence loss at phase-1 epoch {epoch}"),
                });
            }
            total += value * batch.len() as f64;
            let mut grads = g.backward(loss)?;
            model.head.collect_grads(&mut grads, &bh)?;
            opt.step(model.head.params_mut())?;
        }
        let stats = PhaseStats {
            epoch,
            loss: total / data.len().max(1) as f64,
        };
        info!(
            "confidnet phase 1 epoch {}: {} loss {:.6}",
            epoch + 1,
            config.loss.name(),
            stats.loss
        );
        log.push(stats);
    }
    Ok((model, log))
}

/// Phase 2: clones the encoder and trains it jointly with the head, dropout off.
pub fn train_phase2<T: Scalar>(
    phase1: ConfidenceModel<T>,
    classifier: &ClassifierModel<T>,
    data: &LabeledDataset<T>,
    config: &PhaseConfig,
) -> Result<FinetuneOutcome<T>> {
    config.validate()?;
    let t = targets(classifier, data)?;
    let mut model = phase1.clone().clone_encoder(classifier);
    let mut rng = seeded_rng(config.seed);
    let mut opt = Optimizer::new(config.optimizer);
    let mut log = Vec::with_capacity(config.epochs);
    let diverged = |epoch: usize, err: Error, log: Vec<PhaseStats>| {
        warn!(
            "confidnet phase 2 diverged at epoch {}: {err}; keeping phase-1 weights",
            epoch + 1
        );
        FinetuneOutcome {
            model: phase1.clone(),
            log,
            diverged: true,
        }
    };
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for batch in nn::minibatches(data.len(), config.batch_size, &mut rng) {
            let EncoderRef::Cloned(enc) = &mut model.encoder else {
                unreachable!("encoder cloned above")
            };
            let x = data.inputs().select(Axis(0), &batch);
            let mut g = Graph::new();
            let be = enc.bind(&mut g);
            let bh = model.head.bind(&mut g);
            let xv = g.constant(x);
            let h = enc.forward(&mut g, &be, xv, &mut Mode::Eval)?;
            let c = model.head.forward(&mut g, &bh, h, &mut Mode::Eval)?;
            let loss =
                config
                    .loss
                    .apply(&mut g, c, &pick(&t.tcp, &batch), &pick(&t.success, &batch))?;
            let value = g.scalar(loss).to_f64_lossy();
            if !value.is_finite() {
                let err = Error::NonFinite {
                    context: "phase-2 confidence loss".into(),
                };
                return Ok(diverged(epoch, err, log));
            }
            total += value * batch.len() as f64;
            let mut grads = g.backward(loss)?;
            enc.collect_grads(&mut grads, &be)?;
            model.head.collect_grads(&mut grads, &bh)?;
            let mut params = enc.params_mut();
            params.extend(model.head.params_mut());
            if let Err(err) = opt.step(params) {
                return Ok(diverged(epoch, err, log));
            }
        }
        let stats = PhaseStats {
            epoch,
            loss: total / data.len().max(1) as f64,
        };
        info!(
            "confidnet phase 2 epoch {}: {} loss {:.6}",
            epoch + 1,
            config.loss.name(),
            stats.loss
        );
        log.push(stats);
    }
    Ok(FinetuneOutcome {
        model,
        log,
        diverged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{train_classifier, TrainConfig};
    use crate::data::{circle_centers, gen_blobs, BlobSpec};

    fn setup() -> (ClassifierModel<f64>, LabeledDataset<f64>) {
        let data = gen_blobs(&BlobSpec {
            per_class: 80,
            centers: circle_centers(3, 1.5, 2),
            sigma: 0.8,
            seed: 3,
        })
        .unwrap();
        let model = ClassifierModel::new(2, &[16], 3, Some(0.8), &mut seeded_rng(1)).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerConfig::adam(0.01),
            epochs: 5,
            batch_size: 32,
            seed: 2,
        };
        (train_classifier(model, &data, &cfg).unwrap().0, data)
    }

    fn phase(epochs: usize) -> PhaseConfig {
        PhaseConfig {
            loss: ConfidenceLoss::Mse,
            optimizer: OptimizerConfig::adam(0.005),
            epochs,
            batch_size: 32,
            seed: 7,
            encoder_dropout: true,
        }
    }

    #[test]
    fn zero_head_gives_one_half() {
        let (clf, data) = setup();
        let mut c = ConfidenceModel::new(&clf, &[8], &mut seeded_rng(0)).unwrap();
        for p in c.head.params_mut() {
            p.value_mut().fill(0.0);
        }
        let out = c.predict_confidence(&clf, data.inputs()).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn tcp_targets_gather_true_class() {
        let (clf, data) = setup();
        let t = tcp_targets(&clf, data.inputs(), data.labels()).unwrap();
        let probs = clf.predict_proba(data.inputs()).unwrap();
        for (i, &y) in data.labels().iter().enumerate() {
            assert_eq!(t[i], probs[[i, y]]);
        }
        let unfrozen = ClassifierModel::<f64>::new(2, &[4], 3, None, &mut seeded_rng(0)).unwrap();
        assert!(tcp_targets(&unfrozen, data.inputs(), data.labels()).is_err());
    }

    #[test]
    fn phases_leave_classifier_untouched() {
        let (clf, data) = setup();
        let before = clf.checksum();
        let init = ConfidenceModel::new(&clf, &[8], &mut seeded_rng(0)).unwrap();
        let (p1, log) = train_phase1(init.clone(), &clf, &data, &phase(3)).unwrap();
        assert_eq!(log.len(), 3);
        assert_ne!(p1, init);
        let out = train_phase2(p1, &clf, &data, &phase(3).finetune(2)).unwrap();
        assert!(out.model.is_cloned() && !out.diverged);
        assert_eq!(clf.checksum(), before);
    }

    #[test]
    fn zero_epochs_and_clone_identity() {
        let (clf, data) = setup();
        let init = ConfidenceModel::new(&clf, &[8], &mut seeded_rng(0)).unwrap();
        let (p1, _) = train_phase1(init.clone(), &clf, &data, &phase(0)).unwrap();
        assert_eq!(p1, init);
        let (p1, _) = train_phase1(init, &clf, &data, &phase(2)).unwrap();
        let p2 = train_phase2(p1.clone(), &clf, &data, &phase(2).finetune(0))
            .unwrap()
            .model;
        assert!(p2.is_cloned());
        assert_eq!(
            p2.predict_confidence(&clf, data.inputs()).unwrap(),
            p1.predict_confidence(&clf, data.inputs()).unwrap()
        );
    }

    #[test]
    fn constant_target_is_fitted() {
        let (clf, data) = setup();
        let mut model = ConfidenceModel::new(&clf, &[16], &mut seeded_rng(0)).unwrap();
        let feats = clf.features(data.inputs()).unwrap();
        let target = vec![0.7; data.len()];
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01));
        for _ in 0..300 {
            let mut g = Graph::new();
            let bh = model.head.bind(&mut g);
            let xv = g.constant(feats.clone());
            let c = model
                .head
                .forward(&mut g, &bh, xv, &mut Mode::Eval)
                .unwrap();
            let loss = mse(&mut g, c, &target).unwrap();
            let mut grads = g.backward(loss).unwrap();
            model.head.collect_grads(&mut grads, &bh).unwrap();
            opt.step(model.head.params_mut()).unwrap();
        }
        let out = model.predict_confidence(&clf, data.inputs()).unwrap();
        let err = out.iter().map(|v| (v - 0.7).powi(2)).sum::<f64>() / out.len() as f64;
        assert!(err < 1e-3, "{err}");
        assert!(out.iter().all(|v| (0.65..=0.75).contains(v)));
    }

    #[test]
    fn checkpoint_round_trip_and_attachment_check() {
        let (clf, _) = setup();
        let model = ConfidenceModel::new(&clf, &[8], &mut seeded_rng(0))
            .unwrap()
            .clone_encoder(&clf);
        let back = ConfidenceModel::from_checkpoint(model.to_checkpoint(1), &clf).unwrap();
        assert_eq!(back.head(), model.head());
        assert!(back.is_cloned());
        let other = ClassifierModel::<f64>::new(2, &[5], 3, None, &mut seeded_rng(0)).unwrap();
        assert!(ConfidenceModel::from_checkpoint(model.to_checkpoint(1), &other).is_err());
    }
}
