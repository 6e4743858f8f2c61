//! Experiment configuration, read from TOML.
//!
//! Every knob has a default so that small configs stay short; the resolved
//! configuration, with all defaults filled in, is written next to each run's
//! artifacts. The run directory is named by a digest of the resolved
//! configuration (without `seeds` and `output_dir`) plus the seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tcpconf::confidnet::ConfidenceLoss;
use tcpconf::data::{DomainShift, SceneStyle};
use tcpconf::nn::OptimizerConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub confidnet: ConfidnetSpec,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub selftrain: SelftrainSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// IDX files `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
    /// `t10k-images-idx3-ubyte` and `t10k-labels-idx1-ubyte` in `dir`.
    Mnist {
        dir: Option<PathBuf>,
        /// Use only the first `n` training or test samples.
        train_limit: Option<usize>,
        test_limit: Option<usize>,
        /// Fraction of the training set held out from classifier training.
        #[serde(default)]
        val_split: f64,
    },
    /// Gaussian clusters on a circle, split into train and test parts.
    Blobs {
        #[serde(default = "blobs_classes")]
        classes: usize,
        #[serde(default = "blobs_dim")]
        dim: usize,
        #[serde(default = "blobs_per_class")]
        per_class: usize,
        #[serde(default = "blobs_radius")]
        radius: f64,
        #[serde(default = "blobs_sigma")]
        sigma: f64,
        #[serde(default = "blobs_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        val_split: f64,
    },
    /// Synthetic segmentation scenes with a source and a shifted target domain.
    Grid(Box<GridSpec>),
}

fn blobs_classes() -> usize {
    3
}
fn blobs_dim() -> usize {
    2
}
fn blobs_per_class() -> usize {
    400
}
fn blobs_radius() -> f64 {
    2.0
}
fn blobs_sigma() -> f64 {
    1.0
}
fn blobs_test_fraction() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub source_scenes: usize,
    pub target_scenes: usize,
    pub test_scenes: usize,
    pub classes: usize,
    pub channels: usize,
    pub min_regions: usize,
    pub max_regions: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub separation: f64,
    pub noise: f64,
    pub theta: f64,
    pub bias: Vec<f64>,
    pub contrast_slope: f64,
    pub noise_slope: f64,
    /// Patch scales `[radius, dilation]` of the pixel classifier input.
    pub scales: Vec<[usize; 2]>,
}

impl Default for GridSpec {
    fn default() -> Self {
        let style = SceneStyle::default();
        let shift = DomainShift::with_theta(1.0);
        Self {
            height: 16,
            width: 16,
            source_scenes: 120,
            target_scenes: 120,
            test_scenes: 60,
            classes: style.classes,
            channels: style.channels,
            min_regions: style.min_regions,
            max_regions: style.max_regions,
            min_size: style.min_size,
            max_size: style.max_size,
            separation: style.separation,
            noise: style.noise,
            theta: shift.theta,
            bias: shift.bias,
            contrast_slope: shift.contrast_slope,
            noise_slope: shift.noise_slope,
            scales: tcpconf::selftrain::DEFAULT_SCALES
                .iter()
                .map(|&(r, d)| [r, d])
                .collect(),
        }
    }
}

impl GridSpec {
    pub fn style(&self) -> SceneStyle {
        SceneStyle {
            classes: self.classes,
            channels: self.channels,
            min_regions: self.min_regions,
            max_regions: self.max_regions,
            min_size: self.min_size,
            max_size: self.max_size,
            separation: self.separation,
            noise: self.noise,
        }
    }

    pub fn shift(&self) -> DomainShift {
        DomainShift {
            theta: self.theta,
            bias: self.bias.clone(),
            contrast_slope: self.contrast_slope,
            noise_slope: self.noise_slope,
        }
    }

    pub fn scale_pairs(&self) -> Vec<(usize, usize)> {
        self.scales.iter().map(|&[r, d]| (r, d)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    /// Dropout keep probability after each hidden layer; 1 disables dropout.
    pub dropout_keep: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100],
            dropout_keep: 0.8,
        }
    }
}

impl ModelConfig {
    pub fn dropout(&self) -> Option<f64> {
        (self.dropout_keep < 1.0).then_some(self.dropout_keep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub optimizer: OptimizerName,
    pub lr: f64,
    /// SGD only.
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            optimizer: OptimizerName::Adam,
            lr: 1e-3,
            momentum: 0.0,
            epochs: 10,
            batch_size: 128,
        }
    }
}

impl TrainSpec {
    pub fn optimizer_config(&self, lr: f64) -> OptimizerConfig {
        match self.optimizer {
            OptimizerName::Adam => OptimizerConfig::adam(lr),
            OptimizerName::Sgd => OptimizerConfig::sgd(lr, self.momentum),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidnetSpec {
    /// `mse`, `bce`, `focal` or `ranking`.
    pub loss: String,
    pub focal_gamma: f64,
    pub ranking_margin: f64,
    pub hidden: Vec<usize>,
    /// Only `penultimate` is supported.
    pub attachment: String,
    pub batch_size: usize,
    pub phase1_epochs: usize,
    pub phase1_lr: f64,
    /// Sample the encoder's dropout while training the head.
    pub encoder_dropout: bool,
    /// Run the encoder fine-tuning phase.
    pub finetune: bool,
    pub phase2_epochs: usize,
    pub phase2_lr: f64,
}

impl Default for ConfidnetSpec {
    fn default() -> Self {
        Self {
            loss: "mse".into(),
            focal_gamma: ConfidenceLoss::DEFAULT_GAMMA,
            ranking_margin: ConfidenceLoss::DEFAULT_MARGIN,
            hidden: tcpconf::confidnet::DEFAULT_HEAD.to_vec(),
            attachment: "penultimate".into(),
            batch_size: 128,
            phase1_epochs: 40,
            phase1_lr: 1e-3,
            encoder_dropout: true,
            finetune: true,
            phase2_epochs: 5,
            phase2_lr: 1e-4,
        }
    }
}

impl ConfidnetSpec {
    pub fn loss_kind(&self, name: &str) -> CliResult<ConfidenceLoss> {
        match ConfidenceLoss::from_name(name) {
            Some(ConfidenceLoss::Focal { .. }) => Ok(ConfidenceLoss::Focal {
                gamma: self.focal_gamma,
            }),
            Some(ConfidenceLoss::Ranking { .. }) => Ok(ConfidenceLoss::Ranking {
                margin: self.ranking_margin,
            }),
            Some(l) => Ok(l),
            None => Err(CliError::config(
                "confidnet.loss",
                format!("unknown loss `{name}`; expected mse, bce, focal or ranking"),
            )),
        }
    }
}

pub const METHODS: [&str; 5] = ["mcp", "tcp-oracle", "confidnet", "mcdropout", "trustscore"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    /// Any of `mcp`, `tcp-oracle`, `confidnet`, `mcdropout`, `trustscore`.
    pub methods: Vec<String>,
    pub mc_passes: usize,
    pub trust_k: usize,
    /// Training rows used as trust-score neighbours; 0 uses all of them.
    pub trust_max_train: usize,
    pub histogram_bins: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            methods: METHODS.iter().map(|m| m.to_string()).collect(),
            mc_passes: 50,
            trust_k: 10,
            trust_max_train: 10_000,
            histogram_bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelftrainSpec {
    /// `mcp`, `conda` or `tcp-oracle`.
    pub method: String,
    pub lambda_adv: f64,
    pub quota: f64,
    pub rounds: usize,
    /// Weight pseudo-labelled rows so both domains contribute equally.
    pub balance_domains: bool,
    pub conf_hidden: Vec<usize>,
    pub conf_epochs: usize,
    pub conf_lr: f64,
    pub batch_scenes: usize,
    pub disc_hidden: usize,
    pub disc_lr: f64,
    pub disc_steps: usize,
    /// Coverages of the precision curve.
    pub curve_quotas: Vec<f64>,
}

impl Default for SelftrainSpec {
    fn default() -> Self {
        let adv = tcpconf::selftrain::AdvConfig::default();
        Self {
            method: "conda".into(),
            lambda_adv: adv.lambda_adv,
            quota: 0.5,
            rounds: 1,
            balance_domains: true,
            conf_hidden: vec![64],
            conf_epochs: 10,
            conf_lr: adv.conf_optimizer.lr,
            batch_scenes: adv.batch_scenes,
            disc_hidden: adv.disc_hidden,
            disc_lr: adv.disc_optimizer.lr,
            disc_steps: adv.disc_steps,
            curve_quotas: (1..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

fn check(ok: bool, field: &str, message: impl FnOnce() -> String) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::config(field, message()))
    }
}

fn fraction(v: f64, field: &str) -> CliResult<()> {
    check((0.0..1.0).contains(&v), field, || {
        format!("{v} must lie in [0, 1)")
    })
}

fn positive_lr(v: f64, field: &str) -> CliResult<()> {
    check(v > 0.0 && v.is_finite(), field, || {
        format!("{v} is not a positive learning rate")
    })
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| CliError::config(toml_field(&e), e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks every field and names the first offending one.
    pub fn validate(&self) -> CliResult<()> {
        match &self.dataset {
            DatasetConfig::Mnist { dir, val_split, .. } => {
                check(dir.is_some(), "dataset.dir", || {
                    "required for kind = \"mnist\"".into()
                })?;
                fraction(*val_split, "dataset.val_split")?;
            }
            DatasetConfig::Blobs {
                classes,
                dim,
                per_class,
                sigma,
                test_fraction,
                val_split,
                ..
            } => {
                check(*classes >= 2, "dataset.classes", || {
                    "need at least two classes".into()
                })?;
                check(*dim >= 2, "dataset.dim", || {
                    "need at least two dimensions".into()
                })?;
                check(*per_class > 0, "dataset.per_class", || {
                    "must be positive".into()
                })?;
                check(*sigma > 0.0, "dataset.sigma", || "must be positive".into())?;
                check(
                    *test_fraction > 0.0 && *test_fraction < 1.0,
                    "dataset.test_fraction",
                    || format!("{test_fraction} must lie in (0, 1)"),
                )?;
                fraction(*val_split, "dataset.val_split")?;
                check(test_fraction + val_split < 1.0, "dataset.val_split", || {
                    "test and validation fractions leave no training data".into()
                })?;
            }
            DatasetConfig::Grid(g) => {
                check(g.height >= 8 && g.width >= 8, "dataset.height", || {
                    "scenes must be at least 8x8".into()
                })?;
                for (n, f) in [
                    (g.source_scenes, "dataset.source_scenes"),
                    (g.target_scenes, "dataset.target_scenes"),
                    (g.test_scenes, "dataset.test_scenes"),
                ] {
                    check(n > 0, f, || "must be positive".into())?;
                }
                check(g.bias.len() == g.channels, "dataset.bias", || {
                    format!("{} entries for {} channels", g.bias.len(), g.channels)
                })?;
                check(
                    g.theta >= 0.0 && g.theta.is_finite(),
                    "dataset.theta",
                    || "must be finite and nonnegative".into(),
                )?;
                check(!g.scales.is_empty(), "dataset.scales", || {
                    "need at least one patch scale".into()
                })?;
                check(
                    g.scales.iter().all(|&[_, d]| d > 0),
                    "dataset.scales",
                    || "each scale is [radius, positive dilation]".into(),
                )?;
            }
        }
        check(!self.model.hidden.is_empty(), "model.hidden", || {
            "need at least one hidden layer".into()
        })?;
        check(
            self.model.hidden.iter().all(|&h| h > 0),
            "model.hidden",
            || "widths must be positive".into(),
        )?;
        check(
            self.model.dropout_keep > 0.0 && self.model.dropout_keep <= 1.0,
            "model.dropout_keep",
            || format!("{} must lie in (0, 1]", self.model.dropout_keep),
        )?;
        positive_lr(self.train.lr, "train.lr")?;
        check(self.train.batch_size > 0, "train.batch_size", || {
            "must be positive".into()
        })?;
        check(
            self.train.momentum >= 0.0 && self.train.momentum < 1.0,
            "train.momentum",
            || "must lie in [0, 1)".into(),
        )?;

        let c = &self.confidnet;
        c.loss_kind(&c.loss)?;
        check(
            c.attachment == "penultimate",
            "confidnet.attachment",
            || {
                format!(
                    "`{}` is not supported; the head attaches to the penultimate layer",
                    c.attachment
                )
            },
        )?;
        check(c.hidden.iter().all(|&h| h > 0), "confidnet.hidden", || {
            "widths must be positive".into()
        })?;
        check(c.batch_size > 0, "confidnet.batch_size", || {
            "must be positive".into()
        })?;
        positive_lr(c.phase1_lr, "confidnet.phase1_lr")?;
        positive_lr(c.phase2_lr, "confidnet.phase2_lr")?;
        check(c.focal_gamma >= 0.0, "confidnet.focal_gamma", || {
            "must be nonnegative".into()
        })?;
        check(c.ranking_margin >= 0.0, "confidnet.ranking_margin", || {
            "must be nonnegative".into()
        })?;

        for m in &self.eval.methods {
            check(METHODS.contains(&m.as_str()), "eval.methods", || {
                format!(
                    "unknown method `{m}`; expected one of {}",
                    METHODS.join(", ")
                )
            })?;
        }
        check(self.eval.mc_passes > 0, "eval.mc_passes", || {
            "must be positive".into()
        })?;
        check(self.eval.trust_k > 0, "eval.trust_k", || {
            "must be positive".into()
        })?;
        check(self.eval.histogram_bins > 0, "eval.histogram_bins", || {
            "must be positive".into()
        })?;

        let s = &self.selftrain;
        self.selftrain_method(&s.method, s.lambda_adv)?;
        check(
            s.lambda_adv >= 0.0 && s.lambda_adv.is_finite(),
            "selftrain.lambda_adv",
            || "must be finite and nonnegative".into(),
        )?;
        check((0.0..=1.0).contains(&s.quota), "selftrain.quota", || {
            format!("{} must lie in [0, 1]", s.quota)
        })?;
        check(s.rounds > 0, "selftrain.rounds", || {
            "must be positive".into()
        })?;
        check(s.batch_scenes > 0, "selftrain.batch_scenes", || {
            "must be positive".into()
        })?;
        check(s.disc_steps > 0, "selftrain.disc_steps", || {
            "must be positive".into()
        })?;
        check(s.disc_hidden > 0, "selftrain.disc_hidden", || {
            "must be positive".into()
        })?;
        positive_lr(s.conf_lr, "selftrain.conf_lr")?;
        positive_lr(s.disc_lr, "selftrain.disc_lr")?;
        check(
            s.curve_quotas.iter().all(|&q| q > 0.0 && q <= 1.0),
            "selftrain.curve_quotas",
            || "each coverage must lie in (0, 1]".into(),
        )?;

        check(!self.seeds.is_empty(), "seeds", || {
            "need at least one seed".into()
        })?;
        Ok(())
    }

    /// Confidence method for self-training, with the adversarial settings
    /// taken from the `selftrain` section.
    pub fn selftrain_method(
        &self,
        name: &str,
        lambda_adv: f64,
    ) -> CliResult<tcpconf::selftrain::ConfidenceMethod> {
        use tcpconf::selftrain::{AdvConfig, ConfidenceMethod};
        let s = &self.selftrain;
        Ok(match name {
            "mcp" => ConfidenceMethod::Mcp,
            "tcp-oracle" => ConfidenceMethod::Oracle,
            "conda" => ConfidenceMethod::Conda(AdvConfig {
                lambda_adv,
                conf_optimizer: self.train.optimizer_config(s.conf_lr),
                disc_optimizer: self.train.optimizer_config(s.disc_lr),
                epochs: s.conf_epochs,
                batch_scenes: s.batch_scenes,
                disc_hidden: s.disc_hidden,
                disc_steps: s.disc_steps,
                seed: 0,
            }),
            other => {
                return Err(CliError::config(
                    "selftrain.method",
                    format!("unknown method `{other}`; expected mcp, conda or tcp-oracle"),
                ))
            }
        })
    }

    /// Hex digest identifying everything but the seeds and output location.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.seeds.clear();
        canonical.output_dir = PathBuf::new();
        let bytes = Sha256::digest(canonical.to_toml().as_bytes());
        bytes.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("{}-s{seed}", self.digest()))
    }
}

/// Dotted key path of a TOML error, recovered from the message when serde names a field.
fn toml_field(err: &toml::de::Error) -> String {
    let msg = err.message();
    for marker in ["missing field `", "unknown field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "<document>".into()
}
