//! Confidence-guided self-training for per-pixel classification under domain shift.
//!
//! A per-pixel classifier `F` reads multi-scale patches of the raw scene
//! features. Its confidence model reads multi-scale patches of `F`'s
//! penultimate feature map, so it sees a wider context than `F` itself. The
//! confidence model regresses the true class probability on labelled source
//! scenes while a discriminator over whole confidence maps pushes target maps
//! to look like source maps. Confident target pixels then become pseudo-labels
//! for retraining `F` from scratch.

mod adversarial;
mod pseudo;
mod round;

pub use adversarial::{
    conf_loss_adversarial, conf_loss_adversarial_value, disc_loss, disc_loss_value,
    train_confidence_adversarial, train_confidence_source, AdvConfig, AdvOutcome, AdvStats,
    Discriminator,
};
pub use pseudo::{
    harvest_pseudo_labels, precision_coverage, pseudo_label_precision, Harvest, PrecisionPoint,
    PseudoLabelSet,
};
pub use round::{
    class_iou, confidence_maps, predicted_labels, round_from_maps, segmentation_accuracy,
    self_training_round, source_only, source_only_at, ConfidenceMethod, RoundConfig, RoundReport,
};

use ndarray::{Array1, Array2, Axis};

use crate::classifier::{tcp, ClassifierModel, INFER_CHUNK};
use crate::data::{extract_multiscale, GridScene, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{Activation, Checkpoint, Network};
use crate::scalar::Scalar;
use crate::Rng64;

/// Patch scales `(radius, dilation)` used for classifier inputs and confidence inputs.
pub const DEFAULT_SCALES: [(usize, usize); 2] = [(1, 1), (1, 3)];

/// Per-pixel confidences of one `H × W` scene, all in `[0, 1]`.
pub type ConfidenceMap<T> = Array2<T>;

/// Scenes with their per-pixel classifier inputs precomputed.
#[derive(Debug, Clone)]
pub struct PixelScenes<T> {
    pub scenes: Vec<GridScene<T>>,
    pub inputs: Vec<Array2<T>>,
    pub scales: Vec<(usize, usize)>,
}

impl<T: Scalar> PixelScenes<T> {
    pub fn new(scenes: Vec<GridScene<T>>, scales: &[(usize, usize)]) -> Result<Self> {
        let first = scenes
            .first()
            .ok_or_else(|| Error::invalid("scenes", "need at least one scene"))?;
        let dims = (first.height, first.width, first.channels(), first.classes);
        if scenes
            .iter()
            .any(|s| (s.height, s.width, s.channels(), s.classes) != dims)
        {
            return Err(Error::shape(
                "scenes",
                "all scenes must share size, channels and classes",
            ));
        }
        let inputs = scenes
            .iter()
            .map(|s| extract_multiscale(&s.features, s.height, s.width, scales))
            .collect::<Result<_>>()?;
        Ok(Self {
            scenes,
            inputs,
            scales: scales.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn height(&self) -> usize {
        self.scenes[0].height
    }

    pub fn width(&self) -> usize {
        self.scenes[0].width
    }

    pub fn pixels(&self) -> usize {
        self.height() * self.width()
    }

    pub fn classes(&self) -> usize {
        self.scenes[0].classes
    }

    pub fn input_width(&self) -> usize {
        self.inputs[0].ncols()
    }

    /// Every pixel of every scene as one classification dataset.
    pub fn dataset(&self) -> Result<LabeledDataset<T>> {
        let views: Vec<_> = self.inputs.iter().map(|a| a.view()).collect();
        let inputs = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::shape("pixels", e.to_string()))?;
        let labels = self
            .scenes
            .iter()
            .flat_map(|s| s.labels.iter().copied())
            .collect();
        LabeledDataset::new(inputs, labels, self.classes())
    }
}

fn to_map<T: Scalar>(values: Vec<T>, height: usize, width: usize) -> ConfidenceMap<T> {
    Array2::from_shape_vec((height, width), values).expect("one value per pixel")
}

/// Probability the classifier assigns to the true class at each pixel.
pub fn tcp_map<T: Scalar>(
    classifier: &ClassifierModel<T>,
    scene: &GridScene<T>,
    inputs: &Array2<T>,
) -> Result<ConfidenceMap<T>> {
    if inputs.nrows() != scene.pixels() {
        return Err(Error::shape(
            "tcp_map",
            format!(
                "{} input rows for a {}x{} scene",
                inputs.nrows(),
                scene.height,
                scene.width
            ),
        ));
    }
    let probs = classifier.predict_proba(inputs)?;
    Ok(to_map(
        tcp(probs.view(), &scene.labels)?.to_vec(),
        scene.height,
        scene.width,
    ))
}

/// Confidence model for pixels: an MLP over multi-scale patches of the
/// classifier's penultimate feature map, ending in a sigmoid.
///
/// Head inputs are standardized per column. Training fits the statistics on
/// the source scenes; until then the transform is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelConfidence<T> {
    head: Network<T>,
    scales: Vec<(usize, usize)>,
    offset: Array1<T>,
    scale: Array1<T>,
}

impl<T: Scalar> PixelConfidence<T> {
    pub fn new(
        classifier: &ClassifierModel<T>,
        scales: &[(usize, usize)],
        hidden: &[usize],
        rng: &mut Rng64,
    ) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::invalid("scales", "need at least one scale"));
        }
        let per_pixel = classifier.feature_width();
        let width: usize = scales
            .iter()
            .map(|&(r, _)| per_pixel * (2 * r + 1) * (2 * r + 1))
            .sum();
        let mut widths = vec![width];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Ok(Self {
            head: Network::mlp(&widths, Activation::Relu, Activation::Sigmoid, None, rng)?,
            scales: scales.to_vec(),
            offset: Array1::zeros(width),
            scale: Array1::ones(width),
        })
    }

    pub fn head(&self) -> &Network<T> {
        &self.head
    }

    pub(crate) fn head_mut(&mut self) -> &mut Network<T> {
        &mut self.head
    }

    pub fn scales(&self) -> &[(usize, usize)] {
        &self.scales
    }

    /// Multi-scale context features of one scene before standardization.
    pub fn raw_inputs(
        &self,
        classifier: &ClassifierModel<T>,
        scene: &GridScene<T>,
        pixel_inputs: &Array2<T>,
    ) -> Result<Array2<T>> {
        let feats = classifier.features(pixel_inputs)?;
        let x = extract_multiscale(&feats, scene.height, scene.width, &self.scales)?;
        if Some(x.ncols()) != self.head.input_width() {
            return Err(Error::shape(
                "pixel confidence",
                format!(
                    "{} context features, head expects {:?}",
                    x.ncols(),
                    self.head.input_width()
                ),
            ));
        }
        Ok(x)
    }

    pub fn standardize(&self, mut x: Array2<T>) -> Array2<T> {
        for mut row in x.rows_mut() {
            row -= &self.offset;
            row *= &self.scale;
        }
        x
    }

    /// Head inputs for one scene, computed from the frozen classifier.
    pub fn inputs(
        &self,
        classifier: &ClassifierModel<T>,
        scene: &GridScene<T>,
        pixel_inputs: &Array2<T>,
    ) -> Result<Array2<T>> {
        Ok(self.standardize(self.raw_inputs(classifier, scene, pixel_inputs)?))
    }

    /// Centres each column on the given raw inputs and divides it by its
    /// standard deviation, floored at the mean deviation over columns so
    /// near-constant columns are not amplified.
    pub fn fit_standardization(&mut self, raw: &[Array2<T>]) -> Result<()> {
        let views: Vec<_> = raw.iter().map(|a| a.view()).collect();
        let all = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::shape("standardization", e.to_string()))?;
        if all.ncols() != self.offset.len() || all.nrows() == 0 {
            return Err(Error::shape(
                "standardization",
                "inputs do not match the head",
            ));
        }
        let mean = all.mean_axis(Axis(0)).expect("nonempty");
        let sd = all.std_axis(Axis(0), T::zero());
        let floor = sd.mean().unwrap_or_else(T::one).max(T::lit(1e-8));
        self.scale = sd.mapv(|s| s.max(floor).recip());
        self.offset = mean;
        Ok(())
    }

    /// Confidence map from precomputed head inputs.
    pub fn map_from_inputs(
        &self,
        x: &Array2<T>,
        height: usize,
        width: usize,
    ) -> Result<ConfidenceMap<T>> {
        let out = self.head.predict(x, INFER_CHUNK)?;
        Ok(to_map(out.iter().copied().collect(), height, width))
    }

    pub fn confidence_map(
        &self,
        classifier: &ClassifierModel<T>,
        scene: &GridScene<T>,
        pixel_inputs: &Array2<T>,
    ) -> Result<ConfidenceMap<T>> {
        let x = self.inputs(classifier, scene, pixel_inputs)?;
        self.map_from_inputs(&x, scene.height, scene.width)
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint<T> {
        let scales: Vec<String> = self
            .scales
            .iter()
            .map(|(r, d)| format!("{r}:{d}"))
            .collect();
        Checkpoint::new(seed)
            .with_meta("model", "pixel-confidence")
            .with_meta("scales", scales.join(","))
            .with_meta("offset", encode_bits(&self.offset))
            .with_meta("scale", encode_bits(&self.scale))
            .with_network("head", self.head.clone())
    }

    pub fn from_checkpoint(mut ckpt: Checkpoint<T>) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            what: "pixel confidence checkpoint",
            reason: reason.into(),
        };
        let scales = ckpt
            .meta("scales")
            .ok_or_else(|| bad("missing scales"))?
            .split(',')
            .map(|pair| {
                let (r, d) = pair.split_once(':')?;
                Some((r.parse().ok()?, d.parse().ok()?))
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("malformed scales"))?;
        let column = |key: &str| {
            ckpt.meta(key)
                .and_then(decode_bits::<T>)
                .ok_or_else(|| bad("missing or malformed standardization"))
        };
        let (offset, scale) = (column("offset")?, column("scale")?);
        let head = ckpt
            .take_network("head")
            .ok_or_else(|| bad("missing head"))?;
        if head.input_width() != Some(offset.len()) || offset.len() != scale.len() {
            return Err(bad("standardization width does not match the head"));
        }
        Ok(Self {
            head,
            scales,
            offset,
            scale,
        })
    }
}

/// Lossless text form: the IEEE-754 bits of each value in hex.
fn encode_bits<T: Scalar>(v: &Array1<T>) -> String {
    let parts: Vec<String> = v
        .iter()
        .map(|x| format!("{:016x}", x.to_f64_lossy().to_bits()))
        .collect();
    parts.join(",")
}

fn decode_bits<T: Scalar>(text: &str) -> Option<Array1<T>> {
    if text.is_empty() {
        return Some(Array1::zeros(0));
    }
    text.split(',')
        .map(|h| {
            u64::from_str_radix(h, 16)
                .ok()
                .map(|b| T::lit(f64::from_bits(b)))
        })
        .collect()
}

/// Mean over scenes of the squared Frobenius distance between predicted and
/// target maps, each divided by the pixel count.
pub fn conf_loss_source_value<T: Scalar>(
    predicted: &[ConfidenceMap<T>],
    targets: &[ConfidenceMap<T>],
) -> Result<T> {
    if predicted.is_empty() || predicted.len() != targets.len() {
        return Err(Error::invalid(
            "maps",
            format!(
                "{} predicted maps for {} targets",
                predicted.len(),
                targets.len()
            ),
        ));
    }
    let mut total = T::zero();
    for (p, t) in predicted.iter().zip(targets) {
        if p.dim() != t.dim() {
            return Err(Error::shape(
                "conf_loss_source",
                format!("{:?} vs {:?}", p.dim(), t.dim()),
            ));
        }
        let sq = p
            .iter()
            .zip(t)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        total += sq / T::from_usize_lossy(p.len());
    }
    Ok(total / T::from_usize_lossy(predicted.len()))
}

/// Dump of confidence maps for inspection.
///
/// Layout (little-endian): magic `TCPMAP01`, count u32, height u32, width u32,
/// then count × height·width f64 values in row-major order.
pub fn maps_to_bytes<T: Scalar>(maps: &[ConfidenceMap<T>]) -> Result<Vec<u8>> {
    let (h, w) = maps.first().map(Array2::dim).unwrap_or((0, 0));
    let mut out = b"TCPMAP01".to_vec();
    for v in [maps.len(), h, w] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for m in maps {
        if m.dim() != (h, w) {
            return Err(Error::shape("maps", "all maps must share dimensions"));
        }
        for v in m {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn maps_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Vec<ConfidenceMap<T>>> {
    let bad = |reason: &str| Error::Format {
        what: "confidence map dump",
        reason: reason.into(),
    };
    if bytes.len() < 20 || &bytes[..8] != b"TCPMAP01" {
        return Err(bad("missing magic or header"));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (n, h, w) = (word(8), word(12), word(16));
    if bytes.len() != 20 + n * h * w * 8 {
        return Err(bad("payload length does not match header"));
    }
    Ok(bytes[20..]
        .chunks_exact(h * w * 8)
        .map(|chunk| {
            let vals = chunk
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            to_map(vals, h, w)
        })
        .collect())
}
