//! Subcommands. Each one runs once per configured seed (or for `--seed`) and
//! writes under `<output_dir>/<digest>-s<seed>/`.

mod classifier;
mod confidnet;
mod eval;
mod report;
mod selftrain;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tcpconf::ClassifierModel;

use crate::artifacts::{read_bytes, write_bytes};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub use classifier::train_classifier;
pub use confidnet::{train_confidnet, variant_dir};
pub use eval::evaluate;
pub use report::report;
pub use selftrain::{round_config, selftrain};

#[derive(Debug, Parser)]
#[command(
    name = "tcpconf",
    version,
    about = "Learn and evaluate classifier confidence"
)]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and freeze the classifier.
    TrainClassifier(Common),
    /// Train the confidence head, then optionally fine-tune its encoder copy.
    TrainConfidnet {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        variant: VariantArgs,
    },
    /// Score the test set with every configured confidence method.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        variant: VariantArgs,
    },
    /// Confidence-guided self-training on the grid-scene benchmark.
    Selftrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: SelftrainArgs,
    },
    /// Median, minimum and maximum over the configured seeds.
    Report {
        #[arg(short, long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Selects the confidence model variant.
#[derive(Debug, Clone, Default, Args)]
pub struct VariantArgs {
    /// `mse`, `bce`, `focal` or `ranking`; defaults to the configured loss.
    #[arg(long)]
    pub loss: Option<String>,
    /// Stop after the first phase.
    #[arg(long)]
    pub no_finetune: bool,
    /// Train on the held-out split; must equal the configured `dataset.val_split`.
    #[arg(long)]
    pub val_split: Option<f64>,
}

impl VariantArgs {
    /// Directory-safe name, e.g. `mse`, `bce-phase1` or `mse-val`.
    pub fn name(&self, cfg: &ExperimentConfig) -> String {
        let mut name = self
            .loss
            .clone()
            .unwrap_or_else(|| cfg.confidnet.loss.clone());
        if !self.finetune(cfg) {
            name.push_str("-phase1");
        }
        if self.val_split.is_some() {
            name.push_str("-val");
        }
        name
    }

    pub fn finetune(&self, cfg: &ExperimentConfig) -> bool {
        cfg.confidnet.finetune && !self.no_finetune
    }
}

/// Overrides of the `selftrain` section; they select a subdirectory of the
/// run directory rather than a new run directory.
#[derive(Debug, Clone, Default, Args)]
pub struct SelftrainArgs {
    /// `mcp`, `conda` or `tcp-oracle`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub lambda_adv: Option<f64>,
}

impl SelftrainArgs {
    /// The configuration with the overrides applied and validated.
    pub fn apply(&self, cfg: &ExperimentConfig) -> CliResult<ExperimentConfig> {
        let mut out = cfg.clone();
        if let Some(m) = &self.method {
            out.selftrain.method = m.clone();
        }
        if let Some(r) = self.rounds {
            out.selftrain.rounds = r;
        }
        if let Some(l) = self.lambda_adv {
            out.selftrain.lambda_adv = l;
        }
        out.validate().map_err(as_flag_error)?;
        Ok(out)
    }
}

/// One line of standard output per finished seed.
#[derive(Debug, Serialize)]
pub struct Outcome {
    pub command: &'static str,
    pub seed: Option<u64>,
    pub dir: PathBuf,
}

pub fn run(cli: &Cli) -> CliResult<Vec<Outcome>> {
    match &cli.command {
        Command::TrainClassifier(c) => per_seed(c, "train-classifier", |cfg, seed| {
            train_classifier(cfg, seed)
        }),
        Command::TrainConfidnet { common, variant } => {
            per_seed(common, "train-confidnet", |cfg, seed| {
                train_confidnet(cfg, seed, variant)
            })
        }
        Command::Eval { common, variant } => {
            per_seed(common, "eval", |cfg, seed| evaluate(cfg, seed, variant))
        }
        Command::Selftrain { common, overrides } => per_seed(common, "selftrain", |cfg, seed| {
            selftrain(cfg, seed, overrides)
        }),
        Command::Report { config } => {
            let cfg = ExperimentConfig::load(config)?;
            Ok(vec![Outcome {
                command: "report",
                seed: None,
                dir: report(&cfg)?,
            }])
        }
    }
}

fn as_flag_error(e: CliError) -> CliError {
    match e {
        CliError::Config { field, message } => {
            let flag = field.rsplit('.').next().unwrap_or(&field).replace('_', "-");
            CliError::Usage(format!("--{flag}: {message}"))
        }
        other => other,
    }
}

fn per_seed(
    common: &Common,
    command: &'static str,
    mut f: impl FnMut(&ExperimentConfig, u64) -> CliResult<PathBuf>,
) -> CliResult<Vec<Outcome>> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let seeds = common.seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
    seeds
        .into_iter()
        .map(|seed| {
            log::info!("{command}: seed {seed}");
            Ok(Outcome {
                command,
                seed: Some(seed),
                dir: f(&cfg, seed)?,
            })
        })
        .collect()
}

pub(crate) fn checksum_hex(model: &ClassifierModel) -> String {
    format!("{:016x}", model.checksum())
}

pub const CLASSIFIER_FILE: &str = "classifier.ckpt";

/// The frozen classifier of a run directory and the checkpoint it came from.
pub fn load_classifier(run_dir: &Path) -> CliResult<(ClassifierModel, tcpconf::Checkpoint)> {
    let path = run_dir.join(CLASSIFIER_FILE);
    if !path.exists() {
        return Err(CliError::MissingArtifact {
            path,
            hint: "run `tcpconf train-classifier` with the same config and seed first".into(),
        });
    }
    let ckpt = tcpconf::Checkpoint::from_bytes(&read_bytes(&path)?)?;
    Ok((ClassifierModel::from_checkpoint(ckpt.clone())?, ckpt))
}

pub(crate) fn write_resolved_config(cfg: &ExperimentConfig, run_dir: &Path) -> CliResult<()> {
    write_bytes(&run_dir.join("config.toml"), cfg.to_toml().as_bytes())
}
