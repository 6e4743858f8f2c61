use log::{info, warn};
use ndarray::{Array1, Array2, Axis};

use super::{conf_loss_source_value, tcp_map, ConfidenceMap, PixelConfidence, PixelScenes};
use crate::classifier::{ClassifierModel, INFER_CHUNK};
use crate::confidnet::mse;
use crate::error::{Error, Result};
use crate::nn::{self, Activation, Graph, Mode, Network, Optimizer, OptimizerConfig, Var};
use crate::scalar::{Scalar, PROB_FLOOR};
use crate::{seeded_rng, Rng64};

/// Domain classifier over flattened confidence maps: 1 for source, 0 for target.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    net: Network<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(pixels: usize, hidden: usize, rng: &mut Rng64) -> Result<Self> {
        Self::from_network(Network::mlp(
            &[pixels, hidden, 1],
            Activation::Relu,
            Activation::Sigmoid,
            None,
            rng,
        )?)
    }

    pub fn from_network(net: Network<T>) -> Result<Self> {
        if net.output_width() != Some(1)
            || net.dense().last().map(|d| d.activation) != Some(Activation::Sigmoid)
        {
            return Err(Error::invalid(
                "discriminator",
                "must end in a single sigmoid unit",
            ));
        }
        Ok(Self { net })
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn pixels(&self) -> usize {
        self.net.input_width().expect("validated at construction")
    }

    /// Probability of the source domain for each `H·W`-wide row.
    pub fn predict_rows(&self, rows: &Array2<T>) -> Result<Array1<T>> {
        Ok(self.net.predict(rows, INFER_CHUNK)?.column(0).to_owned())
    }

    pub fn predict(&self, maps: &[ConfidenceMap<T>]) -> Result<Array1<T>> {
        self.predict_rows(&flatten(maps, self.pixels())?)
    }
}

fn flatten<T: Scalar>(maps: &[ConfidenceMap<T>], pixels: usize) -> Result<Array2<T>> {
    let mut out = Array2::zeros((maps.len(), pixels));
    for (mut row, m) in out.rows_mut().into_iter().zip(maps) {
        if m.len() != pixels {
            return Err(Error::shape(
                "discriminator",
                format!("map of {} pixels, expects {pixels}", m.len()),
            ));
        }
        row.assign(&Array1::from_iter(m.iter().copied()));
    }
    Ok(out)
}

/// Domain cross-entropy: half the mean of `−ln D` over source outputs plus
/// half the mean of `−ln(1 − D)` over target outputs.
pub fn disc_loss<T: Scalar>(g: &mut Graph<T>, d_source: Var, d_target: Var) -> Result<Var> {
    if g.value(d_source).is_empty() || g.value(d_target).is_empty() {
        return Err(Error::invalid(
            "maps",
            "discriminator loss needs maps from both domains",
        ));
    }
    let floor = T::lit(PROB_FLOOR);
    let ls = g.log_floor(d_source, floor);
    let ms = g.mean(ls)?;
    let miss = g.scale(d_target, -T::one());
    let miss = g.shift(miss, T::one());
    let lt = g.log_floor(miss, floor);
    let mt = g.mean(lt)?;
    let both = g.add(ms, mt)?;
    Ok(g.scale(both, T::lit(-0.5)))
}

/// [`disc_loss`] on plain discriminator outputs.
pub fn disc_loss_value<T: Scalar>(d_source: &[T], d_target: &[T]) -> Result<T> {
    let mut g = Graph::new();
    let s = g.constant(column(d_source));
    let t = g.constant(column(d_target));
    let loss = disc_loss(&mut g, s, t)?;
    Ok(g.scalar(loss))
}

fn column<T: Scalar>(v: &[T]) -> Array2<T> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column shape")
}

fn check_lambda(lambda_adv: f64) -> Result<()> {
    if !(lambda_adv >= 0.0 && lambda_adv.is_finite()) {
        return Err(Error::invalid(
            "lambda_adv",
            format!("{lambda_adv} must be finite and nonnegative"),
        ));
    }
    Ok(())
}

/// Pixel-mean squared error against the source TCP targets plus `λ` times the
/// mean of `−ln D` over target maps.
///
/// `source_conf` stacks the pixels of every source scene (`S·H·W × 1`);
/// `target_conf` does the same for target scenes. The discriminator enters as
/// constants, so gradients reach only the confidence model. With `λ = 0` the
/// target branch is never built.
pub fn conf_loss_adversarial<T: Scalar>(
    g: &mut Graph<T>,
    source_conf: Var,
    source_targets: &[T],
    target_conf: Var,
    disc: &Discriminator<T>,
    lambda_adv: f64,
) -> Result<Var> {
    check_lambda(lambda_adv)?;
    if g.value(source_conf).is_empty() {
        return Err(Error::invalid("maps", "empty source batch"));
    }
    let source = mse(g, source_conf, source_targets)?;
    if lambda_adv == 0.0 {
        return Ok(source);
    }
    let pixels = disc.pixels();
    let n = g.value(target_conf).nrows();
    if n == 0 || n % pixels != 0 {
        return Err(Error::shape(
            "conf_loss_adversarial",
            format!("{n} target pixels for maps of {pixels}"),
        ));
    }
    let maps = g.reshape(target_conf, n / pixels, pixels)?;
    let bound = disc.net.bind_constant(g);
    let d = disc.net.forward(g, &bound, maps, &mut Mode::Eval)?;
    let logs = g.log_floor(d, T::lit(PROB_FLOOR));
    let fool = g.mean(logs)?;
    let fool = g.scale(fool, -T::lit(lambda_adv));
    g.add(source, fool)
}

/// Value form on whole maps: [`conf_loss_source_value`] plus `λ` times the
/// mean of `−ln D` over target maps. With `λ = 0` it returns the source loss
/// itself.
pub fn conf_loss_adversarial_value<T: Scalar>(
    source_pred: &[ConfidenceMap<T>],
    source_tcp: &[ConfidenceMap<T>],
    target_pred: &[ConfidenceMap<T>],
    disc: &Discriminator<T>,
    lambda_adv: f64,
) -> Result<T> {
    check_lambda(lambda_adv)?;
    let source = conf_loss_source_value(source_pred, source_tcp)?;
    if lambda_adv == 0.0 {
        return Ok(source);
    }
    if target_pred.is_empty() {
        return Err(Error::invalid("maps", "empty target batch"));
    }
    let d = disc.predict(target_pred)?;
    let floor = T::lit(PROB_FLOOR);
    let fool =
        d.iter().fold(T::zero(), |acc, &v| acc - v.max(floor).ln()) / T::from_usize_lossy(d.len());
    Ok(source + T::lit(lambda_adv) * fool)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvConfig {
    /// Weight of the adversarial term; zero disables the discriminator entirely.
    pub lambda_adv: f64,
    pub conf_optimizer: OptimizerConfig,
    pub disc_optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Scenes per domain in each alternating step.
    pub batch_scenes: usize,
    pub disc_hidden: usize,
    /// Discriminator steps before each confidence step.
    pub disc_steps: usize,
    pub seed: u64,
}

impl Default for AdvConfig {
    fn default() -> Self {
        Self {
            lambda_adv: 1e-3,
            conf_optimizer: OptimizerConfig::adam(1e-3),
            disc_optimizer: OptimizerConfig::adam(1e-3),
            epochs: 30,
            batch_scenes: 4,
            disc_hidden: 64,
            disc_steps: 1,
            seed: 0,
        }
    }
}

impl AdvConfig {
    fn validate(&self) -> Result<()> {
        check_lambda(self.lambda_adv)?;
        if self.batch_scenes == 0 {
            return Err(Error::invalid("batch_scenes", "must be positive"));
        }
        for lr in [self.conf_optimizer.lr, self.disc_optimizer.lr] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::invalid(
                    "lr",
                    format!("{lr} is not a valid learning rate"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvStats {
    pub epoch: usize,
    pub conf_loss: f64,
    /// Absent when the adversarial term is disabled.
    pub disc_loss: Option<f64>,
    /// Fraction of maps the discriminator assigned to the right domain.
    pub disc_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AdvOutcome<T> {
    pub confidence: PixelConfidence<T>,
    pub discriminator: Option<Discriminator<T>>,
    pub log: Vec<AdvStats>,
    /// Set when training hit a non-finite value; the models are then the last
    /// completed epoch's.
    pub diverged: bool,
}

/// Per-scene confidence inputs and source targets, computed once.
struct Prepared<T> {
    source_x: Vec<Array2<T>>,
    source_tcp: Vec<Vec<T>>,
    target_x: Vec<Array2<T>>,
}

fn prepare<T: Scalar>(
    conf: &mut PixelConfidence<T>,
    classifier: &ClassifierModel<T>,
    source: &PixelScenes<T>,
    target: Option<&PixelScenes<T>>,
) -> Result<Prepared<T>> {
    if !classifier.is_frozen() {
        return Err(Error::invalid(
            "classifier",
            "confidence training needs a frozen classifier",
        ));
    }
    if source.is_empty() {
        return Err(Error::invalid("source", "need at least one source scene"));
    }
    let raw = |conf: &PixelConfidence<T>, set: &PixelScenes<T>| -> Result<Vec<Array2<T>>> {
        set.scenes
            .iter()
            .zip(&set.inputs)
            .map(|(s, x)| conf.raw_inputs(classifier, s, x))
            .collect()
    };
    let source_raw = raw(conf, source)?;
    conf.fit_standardization(&source_raw)?;
    let source_tcp = source
        .scenes
        .iter()
        .zip(&source.inputs)
        .map(|(s, x)| Ok(tcp_map(classifier, s, x)?.iter().copied().collect()))
        .collect::<Result<_>>()?;
    let target_x = match target {
        Some(t) => raw(conf, t)?
            .into_iter()
            .map(|x| conf.standardize(x))
            .collect(),
        None => Vec::new(),
    };
    Ok(Prepared {
        source_x: source_raw
            .into_iter()
            .map(|x| conf.standardize(x))
            .collect(),
        source_tcp,
        target_x,
    })
}

fn stack<T: Scalar>(parts: &[Array2<T>], idx: &[usize]) -> Array2<T> {
    let views: Vec<_> = idx.iter().map(|&i| parts[i].view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("equal widths")
}

/// Confidence model trained on source TCP maps only.
pub fn train_confidence_source<T: Scalar>(
    conf: PixelConfidence<T>,
    classifier: &ClassifierModel<T>,
    source: &PixelScenes<T>,
    config: &AdvConfig,
) -> Result<AdvOutcome<T>> {
    let plain = AdvConfig {
        lambda_adv: 0.0,
        ..*config
    };
    run(conf, classifier, source, None, &plain)
}

/// Alternates discriminator and confidence updates on equal-size batches of
/// source and target scenes. The classifier is only read.
pub fn train_confidence_adversarial<T: Scalar>(
    conf: PixelConfidence<T>,
    classifier: &ClassifierModel<T>,
    source: &PixelScenes<T>,
    target: &PixelScenes<T>,
    config: &AdvConfig,
) -> Result<AdvOutcome<T>> {
    if target.is_empty() {
        return Err(Error::invalid("target", "need at least one target scene"));
    }
    if target.pixels() != source.pixels() {
        return Err(Error::shape(
            "scenes",
            "source and target maps differ in size",
        ));
    }
    run(conf, classifier, source, Some(target), config)
}

fn run<T: Scalar>(
    mut conf: PixelConfidence<T>,
    classifier: &ClassifierModel<T>,
    source: &PixelScenes<T>,
    target: Option<&PixelScenes<T>>,
    config: &AdvConfig,
) -> Result<AdvOutcome<T>> {
    config.validate()?;
    let adversarial = config.lambda_adv > 0.0 && target.is_some();
    let data = prepare(
        &mut conf,
        classifier,
        source,
        target.filter(|_| adversarial),
    )?;
    let pixels = source.pixels();
    // Independent streams: source batches, target batches, discriminator init.
    let mut batch_rng = seeded_rng(config.seed);
    let mut target_rng = seeded_rng(config.seed ^ 0x7461_7267_6574);
    let mut disc = if adversarial {
        Some(Discriminator::new(
            pixels,
            config.disc_hidden,
            &mut seeded_rng(config.seed ^ 0x6469_7363),
        )?)
    } else {
        None
    };
    let mut conf_opt = Optimizer::new(config.conf_optimizer);
    let mut disc_opt = Optimizer::new(config.disc_optimizer);
    let mut target_queue: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(config.epochs);
    let mut stable = (conf.clone(), disc.clone());

    for epoch in 0..config.epochs {
        let mut conf_total = 0.0;
        let (mut disc_total, mut disc_hits, mut disc_seen, mut steps) =
            (0.0, 0usize, 0usize, 0usize);
        let mut failure = None;
        for batch in nn::minibatches(source.len(), config.batch_scenes, &mut batch_rng) {
            let xs = stack(&data.source_x, &batch);
            let ts: Vec<T> = batch
                .iter()
                .flat_map(|&i| data.source_tcp[i].iter().copied())
                .collect();
            let xt = match disc {
                Some(_) => {
                    let mut picked = Vec::with_capacity(batch.len());
                    while picked.len() < batch.len() {
                        if target_queue.is_empty() {
                            target_queue = nn::minibatches(
                                data.target_x.len(),
                                data.target_x.len(),
                                &mut target_rng,
                            )
                            .concat();
                            target_queue.reverse();
                        }
                        picked.push(target_queue.pop().expect("refilled"));
                    }
                    Some(stack(&data.target_x, &picked))
                }
                None => None,
            };

            if let (Some(d), Some(xt)) = (disc.as_mut(), xt.as_ref()) {
                let ms = conf
                    .head()
                    .predict(&xs, INFER_CHUNK)?
                    .into_shape_with_order((batch.len(), pixels))
                    .expect("pixels");
                let mt = conf
                    .head()
                    .predict(xt, INFER_CHUNK)?
                    .into_shape_with_order((batch.len(), pixels))
                    .expect("pixels");
                for _ in 0..config.disc_steps {
                    let mut g = Graph::new();
                    let bd = d.net.bind(&mut g);
                    let sv = g.constant(ms.clone());
                    let tv = g.constant(mt.clone());
                    let ds = d.net.forward(&mut g, &bd, sv, &mut Mode::Eval)?;
                    let dt = d.net.forward(&mut g, &bd, tv, &mut Mode::Eval)?;
                    let loss = disc_loss(&mut g, ds, dt)?;
                    let value = g.scalar(loss).to_f64_lossy();
                    if !value.is_finite() {
                        failure = Some("discriminator loss");
                        break;
                    }
                    disc_total += value;
                    steps += 1;
                    let half = T::lit(0.5);
                    disc_hits += g.value(ds).iter().filter(|&&v| v >= half).count();
                    disc_hits += g.value(dt).iter().filter(|&&v| v < half).count();
                    disc_seen += 2 * batch.len();
                    let mut grads = g.backward(loss)?;
                    d.net.collect_grads(&mut grads, &bd)?;
                    if disc_opt.step(d.net.params_mut()).is_err() {
                        failure = Some("discriminator gradient");
                        break;
                    }
                }
                if failure.is_some() {
                    break;
                }
            }

            let mut g = Graph::new();
            let bc = conf.head().bind(&mut g);
            let sv = g.constant(xs);
            let cs = conf.head().forward(&mut g, &bc, sv, &mut Mode::Eval)?;
            let loss = match (disc.as_ref(), xt) {
                (Some(d), Some(xt)) => {
                    let tv = g.constant(xt);
                    let ct = conf.head().forward(&mut g, &bc, tv, &mut Mode::Eval)?;
                    conf_loss_adversarial(&mut g, cs, &ts, ct, d, config.lambda_adv)?
                }
                _ => mse(&mut g, cs, &ts)?,
            };
            let value = g.scalar(loss).to_f64_lossy();
            if !value.is_finite() {
                failure = Some("confidence loss");
                break;
            }
            conf_total += value * batch.len() as f64;
            let mut grads = g.backward(loss)?;
            conf.head_mut().collect_grads(&mut grads, &bc)?;
            if conf_opt.step(conf.head_mut().params_mut()).is_err() {
                failure = Some("confidence gradient");
                break;
            }
        }
        if let Some(what) = failure {
            warn!("adversarial confidence training diverged at epoch {} ({what}); keeping the last stable models", epoch + 1);
            return Ok(AdvOutcome {
                confidence: stable.0,
                discriminator: stable.1,
                log,
                diverged: true,
            });
        }
        let stats = AdvStats {
            epoch,
            conf_loss: conf_total / source.len() as f64,
            disc_loss: disc.as_ref().map(|_| disc_total / steps.max(1) as f64),
            disc_accuracy: disc
                .as_ref()
                .map(|_| disc_hits as f64 / disc_seen.max(1) as f64),
        };
        match (stats.disc_loss, stats.disc_accuracy) {
            (Some(dl), Some(da)) => info!(
                "pixel confidence epoch {}: loss {:.6} discriminator loss {:.4} accuracy {:.3}",
                epoch + 1,
                stats.conf_loss,
                dl,
                da
            ),
            _ => info!(
                "pixel confidence epoch {}: loss {:.6}",
                epoch + 1,
                stats.conf_loss
            ),
        }
        log.push(stats);
        stable = (conf.clone(), disc.clone());
    }
    Ok(AdvOutcome {
        confidence: conf,
        discriminator: disc,
        log,
        diverged: false,
    })
}
