//! The classification network `F = (encoder, head)` and the confidence
//! baselines defined on it.
//!
//! Every confidence rate here follows one convention: larger means more
//! confident. MC Dropout therefore reports the negated entropy.

mod baselines;

pub use baselines::{
    mc_dropout_confidence, mcp, neg_entropy, predict_class, tcp, TrustScore, TRUST_SCORE_CAP,
};

use log::info;
use ndarray::Array2;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{
    self, Activation, Checkpoint, DenseLayer, Dropout, Graph, Layer, Mode, Network, Optimizer,
    OptimizerConfig,
};
use crate::scalar::Scalar;
use crate::{seeded_rng, Rng64};

/// Rows evaluated per chunk in graph-free inference.
pub const INFER_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<T> {
    encoder: Network<T>,
    head: Network<T>,
    classes: usize,
    frozen: bool,
}

impl<T: Scalar> ClassifierModel<T> {
    /// ReLU encoder with the given hidden widths, each followed by dropout when
    /// `dropout_keep` is set, and a softmax head over `classes`.
    pub fn new(
        inputs: usize,
        hidden: &[usize],
        classes: usize,
        dropout_keep: Option<f64>,
        rng: &mut Rng64,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::invalid(
                "hidden",
                "the encoder needs at least one hidden layer",
            ));
        }
        if classes < 2 {
            return Err(Error::invalid("classes", "need at least two classes"));
        }
        let mut layers = Vec::new();
        let mut width = inputs;
        for &h in hidden {
            layers.push(Layer::Dense(DenseLayer::glorot(
                width,
                h,
                Activation::Relu,
                rng,
            )));
            if let Some(keep) = dropout_keep {
                layers.push(Layer::Dropout(Dropout::new(keep)?));
            }
            width = h;
        }
        let head = Network::new(vec![Layer::Dense(DenseLayer::glorot(
            width,
            classes,
            Activation::Softmax,
            rng,
        ))])?;
        Self::from_networks(Network::new(layers)?, head)
    }

    pub fn from_networks(encoder: Network<T>, head: Network<T>) -> Result<Self> {
        let (Some(enc_out), Some(head_in)) = (encoder.output_width(), head.input_width()) else {
            return Err(Error::invalid(
                "classifier",
                "encoder and head need dense layers",
            ));
        };
        if enc_out != head_in {
            return Err(Error::shape(
                "classifier",
                format!("encoder emits {enc_out} features, head expects {head_in}"),
            ));
        }
        if head.dense().last().map(|d| d.activation) != Some(Activation::Softmax) {
            return Err(Error::invalid("head", "last layer must be softmax"));
        }
        let classes = head.output_width().expect("checked above");
        Ok(Self {
            encoder,
            head,
            classes,
            frozen: false,
        })
    }

    pub fn encoder(&self) -> &Network<T> {
        &self.encoder
    }

    pub fn head(&self) -> &Network<T> {
        &self.head
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_width(&self) -> usize {
        self.encoder
            .input_width()
            .expect("validated at construction")
    }

    /// Width of the penultimate representation.
    pub fn feature_width(&self) -> usize {
        self.encoder
            .output_width()
            .expect("validated at construction")
    }

    pub fn has_dropout(&self) -> bool {
        self.encoder.has_dropout() || self.head.has_dropout()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(mut self) -> Self {
        self.encoder.set_trainable(false);
        self.head.set_trainable(false);
        self.frozen = true;
        self
    }

    /// Digest of every weight; unchanged by any read-only use of a frozen model.
    pub fn checksum(&self) -> u64 {
        self.encoder.checksum() ^ self.head.checksum().rotate_left(1)
    }

    /// Eval-mode penultimate features.
    pub fn features(&self, x: &Array2<T>) -> Result<Array2<T>> {
        self.encoder.predict(x, INFER_CHUNK)
    }

    /// Eval-mode class probabilities.
    pub fn predict_proba(&self, x: &Array2<T>) -> Result<Array2<T>> {
        self.head.predict(&self.features(x)?, INFER_CHUNK)
    }

    /// One forward pass with the given dropout mode.
    pub fn proba_with(&self, x: &Array2<T>, mode: &mut Mode<'_>) -> Result<Array2<T>> {
        let h = self.encoder.infer(x, mode)?;
        self.head.infer(&h, mode)
    }

    pub fn accuracy(&self, data: &LabeledDataset<T>) -> Result<f64> {
        let probs = self.predict_proba(data.inputs())?;
        let hits = probs
            .rows()
            .into_iter()
            .zip(data.labels())
            .filter(|(p, &y)| predict_class(p.view()) == y)
            .count();
        Ok(hits as f64 / data.len().max(1) as f64)
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint<T> {
        Checkpoint::new(seed)
            .with_meta("model", "classifier")
            .with_meta("classes", self.classes)
            .with_network("encoder", self.encoder.clone())
            .with_network("head", self.head.clone())
    }

    /// Loads a classifier; the result is frozen.
    pub fn from_checkpoint(mut ckpt: Checkpoint<T>) -> Result<Self> {
        let missing = |what: &str| Error::Format {
            what: "classifier checkpoint",
            reason: format!("missing network `{what}`"),
        };
        let encoder = ckpt
            .take_network("encoder")
            .ok_or_else(|| missing("encoder"))?;
        let head = ckpt.take_network("head").ok_or_else(|| missing("head"))?;
        Ok(Self::from_networks(encoder, head)?.freeze())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if !(self.optimizer.lr >= 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::invalid(
                "lr",
                format!("{} is not a valid learning rate", self.optimizer.lr),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// Fraction of correct training predictions seen during the epoch.
    pub accuracy: f64,
}

/// Trains every parameter of `model` with cross-entropy, then freezes it.
pub fn train_classifier<T: Scalar>(
    model: ClassifierModel<T>,
    data: &LabeledDataset<T>,
    config: &TrainConfig,
) -> Result<(ClassifierModel<T>, Vec<EpochStats>)> {
    train_classifier_weighted(model, data, None, config)
}

/// [`train_classifier`] with one nonnegative weight per row; each batch
/// minimizes the weighted mean cross-entropy.
pub fn train_classifier_weighted<T: Scalar>(
    mut model: ClassifierModel<T>,
    data: &LabeledDataset<T>,
    weights: Option<&[T]>,
    config: &TrainConfig,
) -> Result<(ClassifierModel<T>, Vec<EpochStats>)> {
    config.validate()?;
    if let Some(w) = weights {
        if w.len() != data.len() {
            return Err(Error::shape(
                "train_classifier",
                format!("{} weights for {} rows", w.len(), data.len()),
            ));
        }
        if w.iter().any(|&v| !(v >= T::zero() && v.is_finite())) {
            return Err(Error::invalid("weights", "must be finite and nonnegative"));
        }
    }
    if model.frozen {
        return Err(Error::invalid("model", "cannot train a frozen classifier"));
    }
    if data.width() != model.input_width() || data.classes() != model.classes {
        return Err(Error::shape(
            "train_classifier",
            format!(
                "data has width {} and {} classes, model expects {} and {}",
                data.width(),
                data.classes(),
                model.input_width(),
                model.classes
            ),
        ));
    }
    let mut rng = seeded_rng(config.seed);
    let mut opt = Optimizer::new(config.optimizer);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for batch in nn::minibatches(data.len(), config.batch_size, &mut rng) {
            let (x, y) = data.batch(&batch);
            let mut g = Graph::new();
            let be = model.encoder.bind(&mut g);
            let bh = model.head.bind(&mut g);
            let xv = g.constant(x);
            let h = model
                .encoder
                .forward(&mut g, &be, xv, &mut Mode::Train(&mut rng))?;
            let p = model
                .head
                .forward(&mut g, &bh, h, &mut Mode::Train(&mut rng))?;
            let loss = match weights {
                None => nn::loss::cross_entropy(&mut g, p, &y)?,
                Some(w) => {
                    let wb: Vec<T> = batch.iter().map(|&i| w[i]).collect();
                    if wb.iter().all(|&v| v == T::zero()) {
                        continue;
                    }
                    nn::loss::weighted_cross_entropy(&mut g, p, &y, &wb)?
                }
            };
            let value = g.scalar(loss).to_f64_lossy();
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("classifier loss at epoch {epoch}"),
                });
            }
            loss_sum += value * batch.len() as f64;
            hits += g
                .value(p)
                .rows()
                .into_iter()
                .zip(&y)
                .filter(|(row, &label)| predict_class(row.view()) == label)
                .count();
            let mut grads = g.backward(loss)?;
            model.encoder.collect_grads(&mut grads, &be)?;
            model.head.collect_grads(&mut grads, &bh)?;
            let mut params = model.encoder.params_mut();
            params.extend(model.head.params_mut());
            opt.step(params)?;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / data.len().max(1) as f64,
            accuracy: hits as f64 / data.len().max(1) as f64,
        };
        info!(
            "classifier epoch {}: loss {:.5} train accuracy {:.4}",
            epoch + 1,
            stats.loss,
            stats.accuracy
        );
        log.push(stats);
    }
    Ok((model.freeze(), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{circle_centers, gen_blobs, BlobSpec};

    fn blobs(sigma: f64, seed: u64) -> LabeledDataset<f64> {
        gen_blobs(&BlobSpec {
            per_class: 60,
            centers: circle_centers(3, 4.0, 2),
            sigma,
            seed,
        })
        .unwrap()
    }

    fn config(epochs: usize) -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerConfig::adam(0.01),
            epochs,
            batch_size: 32,
            seed: 9,
        }
    }

    #[test]
    fn separable_blobs_are_learned_perfectly() {
        let train = blobs(0.05, 1);
        let test = blobs(0.05, 2);
        let model = ClassifierModel::new(2, &[16], 3, None, &mut seeded_rng(0)).unwrap();
        let (model, log) = train_classifier(model, &train, &config(30)).unwrap();
        assert!(model.is_frozen());
        assert_eq!(log.len(), 30);
        assert_eq!(model.accuracy(&test).unwrap(), 1.0);
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let init = ClassifierModel::new(2, &[8], 3, Some(0.5), &mut seeded_rng(4)).unwrap();
        let (model, log) = train_classifier(init.clone(), &blobs(0.5, 1), &config(0)).unwrap();
        assert!(log.is_empty());
        assert_eq!(model.checksum(), init.checksum());
    }

    #[test]
    fn training_is_deterministic() {
        let make = || ClassifierModel::new(2, &[8], 3, Some(0.8), &mut seeded_rng(4)).unwrap();
        let (a, _) = train_classifier(make(), &blobs(0.5, 1), &config(3)).unwrap();
        let (b, _) = train_classifier(make(), &blobs(0.5, 1), &config(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_frozen_and_mismatched_inputs() {
        let model = ClassifierModel::new(3, &[8], 3, None, &mut seeded_rng(0)).unwrap();
        assert!(train_classifier(model.clone(), &blobs(0.5, 1), &config(1)).is_err());
        let frozen = ClassifierModel::new(2, &[8], 3, None, &mut seeded_rng(0))
            .unwrap()
            .freeze();
        assert!(train_classifier(frozen, &blobs(0.5, 1), &config(1)).is_err());
        assert!(ClassifierModel::<f64>::new(2, &[], 3, None, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = ClassifierModel::<f64>::new(2, &[8], 3, Some(0.5), &mut seeded_rng(0))
            .unwrap()
            .freeze();
        let bytes = model.to_checkpoint(5).to_bytes();
        let back =
            ClassifierModel::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_checkpoint(5).to_bytes(), bytes);
    }
}
